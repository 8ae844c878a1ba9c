"""Root-seed splitting"""
import numpy as np


def derive_seed(root: int, *keys: int) -> int:
    """Child seed for (root, keys...); independent streams per key tuple."""
    seq = np.random.SeedSequence(entropy=int(root), spawn_key=tuple(int(k) for k in keys))
    return int(seq.generate_state(1, dtype=np.uint32)[0])


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(int(seed))
