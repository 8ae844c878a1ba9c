"""Run metrics"""
import logging
import math
from typing import Any, Dict

import numpy as np

logger = logging.getLogger(__name__)


def _plain(value: Any) -> Any:
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    return value


class MetricsCollector:
    """Collects scalar results and stage timings for metrics.json.

    Timings live only under runtime_seconds; everything else must be
    reproducible from (config, seed).
    """

    def __init__(self, experiment: str, seed: int):
        self.values: Dict[str, Any] = {"experiment": experiment, "seed": seed}
        self.runtime_seconds: Dict[str, float] = {}

    def record(self, key: str, value: Any) -> None:
        self.values[key] = _plain(value)
        logger.info("metric %s = %s", key, self.values[key])

    def record_many(self, values: Dict[str, Any]) -> None:
        for key, value in values.items():
            self.record(key, value)

    def record_runtime(self, stage: str, seconds: float) -> None:
        self.runtime_seconds[stage] = self.runtime_seconds.get(stage, 0.0) + seconds

    def to_dict(self) -> Dict[str, Any]:
        return {**self.values, "runtime_seconds": dict(self.runtime_seconds)}
