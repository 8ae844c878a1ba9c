"""Stage timing"""
import logging
import time
from contextlib import contextmanager
from typing import Optional

from monitoring.metrics import MetricsCollector

logger = logging.getLogger(__name__)


@contextmanager
def stage(name: str, metrics: Optional[MetricsCollector] = None):
    """Log entry and exit of a pipeline stage and record its wall time."""
    logger.info("stage %s: start", name)
    started = time.perf_counter()
    try:
        yield
    except Exception as e:
        logger.error("stage %s: failed after %.2fs: %s", name, time.perf_counter() - started, e)
        raise
    elapsed = time.perf_counter() - started
    if metrics is not None:
        metrics.record_runtime(name, elapsed)
    logger.info("stage %s: done in %.2fs", name, elapsed)
