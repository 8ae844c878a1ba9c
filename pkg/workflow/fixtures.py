"""Fixture generation and loading for each experiment kind"""
import logging
from typing import Any, Dict, List

from app.errors import ConfigError, StorageError
from app.schemas import RunConfig
from app.services import ant_service, lti_service, ltv_service
from app.services.seeding import derive_seed
from integrations.storage import ResultStore

logger = logging.getLogger(__name__)

RUN_CONFIG = "run_config.json"
LTI_TRUTH = "lti_truth.csv"
LTV_TRUTH = "ltv_truth.csv"
ANT_TRUTH = "ant_truth_ir.csv"


def _pair_name(index: int, total: int) -> str:
    width = max(3, len(str(total - 1)))
    return f"pair_{index:0{width}d}.csv"


def gen_lti(store: ResultStore, config: RunConfig) -> None:
    s = config.lti
    fixture = lti_service.make_lti_fixture(s, config.seed)
    store.register(store.write_fir(LTI_TRUTH, fixture.truth), "truth", derive_seed(config.seed, 0))
    for i, ((f, g), clean) in enumerate(zip(fixture.pairs, fixture.clean)):
        store.register(store.write_signal(f"f_{i}.csv", f), "input", derive_seed(config.seed, 1, i))
        store.register(store.write_signal(f"g_{i}.csv", g), "output", derive_seed(config.seed, 2, i))
        store.register(store.write_signal(f"g_clean_{i}.csv", clean), "clean", derive_seed(config.seed, 1, i))


def gen_ltv(store: ResultStore, config: RunConfig) -> None:
    fixture = ltv_service.make_ltv_fixture(config.ltv, config.seed)
    for path in store.write_tv_ir(LTV_TRUTH, fixture.truth):
        store.register(path, "truth", derive_seed(config.seed, 0))
    store.register(store.write_signal("f.csv", fixture.f), "input", derive_seed(config.seed, 1))
    store.register(store.write_signal("g.csv", fixture.g), "output", derive_seed(config.seed, 2))
    store.register(store.write_signal("g_clean.csv", fixture.clean), "clean", derive_seed(config.seed, 1))


def gen_ant(store: ResultStore, config: RunConfig) -> None:
    scenario = config.ant.scenario.model_copy(update={"seed": config.seed})
    ir = ant_service.dispersive_ir(ant_service.scenario_curve(scenario), scenario.receiver_distance,
                                   scenario.n_taps, scenario.sample_rate, scenario.taper_width)
    store.register(store.write_fir(ANT_TRUTH, ir), "truth", config.seed)
    for i, (a, b) in enumerate(ant_service.gen_ant_pairs(scenario, ir)):
        name = _pair_name(i, scenario.n_pairs)
        store.register(store.write_pair(name, a, b), "pair", derive_seed(config.seed, i, 0))


GENERATORS = {"lti": gen_lti, "ltv": gen_ltv, "ant": gen_ant}


def generate(store: ResultStore, config: RunConfig) -> List[str]:
    """Write the fixtures of config.kind plus run_config.json and manifest.json."""
    store.start_manifest(config.kind, config.seed)
    GENERATORS[config.kind](store, config)
    # the run directory is supplied by --out when the config is reused
    store.write_model(RUN_CONFIG, config.model_copy(update={"output_dir": "."}))
    store.write_manifest()
    logger.info("generated %d %s fixture files in %s", len(store.manifest.files), config.kind, store.root)
    return [entry.path for entry in store.manifest.files]


def _names(store: ResultStore, kind: str) -> List[str]:
    return [entry.path for entry in store.read_manifest().files if entry.kind == kind]


def load(store: ResultStore, config: RunConfig) -> Dict[str, Any]:
    manifest = store.read_manifest()
    if manifest.experiment != config.kind:
        raise ConfigError(
            f"fixtures in {store.root} were generated for '{manifest.experiment}'", "kind")
    if config.kind == "lti":
        inputs, outputs, clean = (_names(store, k) for k in ("input", "output", "clean"))
        if not inputs or len(inputs) != len(outputs):
            raise StorageError("manifest lists no complete (input, output) pairs", str(store.path("manifest.json")))
        return {
            "pairs": [(store.read_signal(f), store.read_signal(g)) for f, g in zip(inputs, outputs)],
            "clean": [store.read_signal(c) for c in clean],
            "truth": store.read_fir(LTI_TRUTH),
        }
    if config.kind == "ltv":
        return {
            "f": store.read_signal("f.csv"),
            "g": store.read_signal("g.csv"),
            "clean": store.read_signal("g_clean.csv"),
            "truth": store.read_tv_ir(LTV_TRUTH),
        }
    names = _names(store, "pair")
    if not names:
        raise StorageError("manifest lists no pair files", str(store.path("manifest.json")))
    return {"pairs": [store.read_pair(n) for n in names], "truth_ir": store.read_fir(ANT_TRUTH)}
