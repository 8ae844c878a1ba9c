"""Subcommand implementations behind main.py"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError

from app.errors import ConfigError, StorageError
from app.schemas import RunConfig, SweepRow
from app.services import ant_service
from integrations.storage import ResultStore
from monitoring.evaluation import OracleCheck, run_selftest
from monitoring.metrics import MetricsCollector
from monitoring.traces import stage
from . import fixtures
from .graph import FitGraph

logger = logging.getLogger(__name__)

PLOT_DIR = "plot"


# Configuration

def parse_override(item: str) -> Tuple[List[str], Any]:
    """`a.b.c=value`; the value is parsed as JSON and falls back to a plain string."""
    key, sep, raw = item.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"expected path.to.field=value, got '{item}'", "--set")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def apply_override(data: Dict[str, Any], path: Sequence[str], value: Any) -> None:
    node = data
    for part in path[:-1]:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigError("cannot descend into a non-object field", ".".join(path))
        node = child
    node[path[-1]] = value


def _read_config_file(path: Path) -> Dict[str, Any]:
    try:
        data = json.loads(path.read_text())
    except OSError as e:
        raise StorageError(f"cannot read config: {e.strerror}", str(path)) from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON at line {e.lineno}: {e.msg}", str(path)) from e
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object", str(path))
    return data


def validate_config(data: Dict[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(part) for part in first["loc"]) or "config"
        raise ConfigError(first["msg"], field) from e


def build_config(
    command: str,
    out: Path,
    config_path: Optional[str] = None,
    overrides: Sequence[str] = (),
    kind: Optional[str] = None,
    seed: Optional[int] = None,
    pairs: Optional[int] = None,
) -> RunConfig:
    """Base JSON (--config, else the run_config.json gen left in --out) plus flag overrides."""
    reused = False
    if config_path:
        data = _read_config_file(Path(config_path))
    elif command in ("fit", "compare") and (out / fixtures.RUN_CONFIG).exists():
        data = _read_config_file(out / fixtures.RUN_CONFIG)
        reused = True
    else:
        data = {}

    if kind is not None:
        if reused and data.get("kind", "lti") != kind:
            raise ConfigError(
                f"fixtures in {out} were generated for '{data.get('kind', 'lti')}', not '{kind}'", "kind")
        data["kind"] = kind
    if seed is not None:
        data["seed"] = seed
    data["output_dir"] = str(out)
    if pairs is not None:
        apply_override(data, ["ant", "scenario", "n_pairs"], pairs)
        counts = data.get("ant", {}).get("pair_counts", RunConfig().ant.pair_counts)
        data["ant"]["pair_counts"] = [c for c in counts if c < pairs] + [pairs]
    for item in overrides:
        path, value = parse_override(item)
        apply_override(data, path, value)
    return validate_config(data)


# Commands

def cmd_gen(config: RunConfig) -> List[str]:
    store = ResultStore(config.output_dir)
    with stage(f"gen_{config.kind}"):
        return fixtures.generate(store, config)


def cmd_fit(config: RunConfig) -> List[str]:
    store = ResultStore(config.output_dir)
    if not store.exists("manifest.json"):
        raise StorageError("no fixtures found; run gen first", str(store.path("manifest.json")))
    metrics = MetricsCollector(config.kind, config.seed)
    final = FitGraph(metrics).run(config, store)
    return final["written"]


def _summarize_sweep(rows: Sequence[SweepRow], metrics: MetricsCollector) -> None:
    for count in sorted({r.pair_count for r in rows}):
        cell = [r for r in rows if r.pair_count == count]
        metrics.record_many({
            f"mir_error_{count}": float(np.mean([r.mir_error for r in cell])),
            f"ccf_error_{count}": float(np.mean([r.ccf_error for r in cell])),
            f"mir_valid_fraction_{count}": float(np.mean([r.mir_valid for r in cell])),
            f"ccf_valid_fraction_{count}": float(np.mean([r.ccf_valid for r in cell])),
        })


def cmd_compare(config: RunConfig, quantize: bool = False, seeds: Optional[Sequence[int]] = None) -> List[str]:
    """ANT sweep over pair counts for every seed; one sweep.csv row per (count, seed)."""
    settings = config.ant
    quantize = quantize or settings.quantize
    seeds = list(seeds) if seeds else list(settings.seeds)
    metrics = MetricsCollector("ant_sweep", config.seed)
    metrics.record_many({"quantized": quantize, "seeds": seeds, "pair_counts": settings.pair_counts})
    rows: List[SweepRow] = []
    for s in seeds:
        # each cell seeds its optimizer from (s, pair_count)
        with stage(f"sweep_seed_{s}", metrics):
            rows.extend(ant_service.sweep_pairs(settings, settings.pair_counts, quantize, settings.train, s))
    _summarize_sweep(rows, metrics)
    store = ResultStore(config.output_dir)
    return [store.write_sweep("sweep.csv", rows).name, store.write_json("metrics.json", metrics.to_dict()).name]


def _band_series(plot: ResultStore, name: str, x, table, prefix: str) -> str:
    return plot.write_series(name, x, table[f"{prefix}mean"], table[f"{prefix}lower"], table[f"{prefix}upper"]).name


def _plot_lti(results: ResultStore, plot: ResultStore) -> List[str]:
    written = []
    if results.exists("lti_freq.csv"):
        t = results.read_table("lti_freq.csv")
        written += [
            _band_series(plot, "freq_magnitude.csv", t["freq"], t, "magnitude_"),
            _band_series(plot, "freq_phase.csv", t["freq"], t, "phase_"),
            plot.write_series("freq_truth_magnitude.csv", t["freq"], t["truth_magnitude"]).name,
        ]
    if results.exists("lti_prediction.csv"):
        t = results.read_table("lti_prediction.csv")
        written += [
            _band_series(plot, "prediction_posterior.csv", t["n"], t, ""),
            plot.write_series("prediction_observed.csv", t["n"], t["observed"]).name,
            plot.write_series("prediction_clean.csv", t["n"], t["clean"]).name,
        ]
    if results.exists("lti_ccf.csv"):
        t = results.read_table("lti_ccf.csv")
        written += [
            _band_series(plot, "ccf_posterior.csv", t["lag"], t, ""),
            plot.write_series("ccf_observed.csv", t["lag"], t["observed"]).name,
            plot.write_series("ccf_closed_form.csv", t["lag"], t["closed_form"]).name,
        ]
    return written


def _plot_ltv(results: ResultStore, plot: ResultStore) -> List[str]:
    written = []
    for source, label in (("ltv_mean.csv", "ltv_mean"), (fixtures.LTV_TRUTH, "ltv_truth")):
        if not results.exists(source):
            continue
        ir = results.read_tv_ir(source)
        t = np.arange(ir.n) / ir.sample_rate
        for k in range(ir.p):
            name = f"{label}_tap_{k:02d}.csv"
            if ir.std is None:
                written.append(plot.write_series(name, t, ir.taps[:, k]).name)
            else:
                lo, hi = ir.taps[:, k] - 2 * ir.std[:, k], ir.taps[:, k] + 2 * ir.std[:, k]
                written.append(plot.write_series(name, t, ir.taps[:, k], lo, hi).name)
    return written


def _plot_ant(results: ResultStore, plot: ResultStore) -> List[str]:
    written = []
    for source in ("ant_misfit_mir.csv", "ant_misfit_ccf.csv"):
        if results.exists(source):
            written.append(plot.write_misfit(source.replace("ant_", ""), results.read_misfit(source)).name)
    if results.exists("ant_dispersion.csv"):
        t = results.read_table("ant_dispersion.csv")
        for column in ("truth", "mir", "ccf"):
            written.append(plot.write_series(f"dispersion_{column}.csv", t["freq"], t[column]).name)
    if results.exists("sweep.csv"):
        rows = results.read_sweep("sweep.csv")
        counts = sorted({r.pair_count for r in rows})
        for method in ("mir", "ccf"):
            errors = [[getattr(r, f"{method}_error") for r in rows if r.pair_count == c] for c in counts]
            written.append(plot.write_series(
                f"sweep_{method}.csv", counts, [np.mean(e) for e in errors],
                [np.min(e) for e in errors], [np.max(e) for e in errors]).name)
    return written


def cmd_plotdata(results_dir: str) -> List[str]:
    """One tidy x,y[,ylo,yhi] CSV per series under <results>/plot/."""
    results = ResultStore(results_dir)
    plot = ResultStore(Path(results_dir) / PLOT_DIR)
    written = _plot_lti(results, plot) + _plot_ltv(results, plot) + _plot_ant(results, plot)
    if not written:
        raise StorageError("no result files to convert", str(results.root))
    logger.info("wrote %d plot series to %s", len(written), plot.root)
    return written


def cmd_selftest(quick: bool = False) -> List[OracleCheck]:
    return run_selftest(quick=quick)
