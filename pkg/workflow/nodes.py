"""Individual fit pipeline nodes"""
import logging
from typing import Any, Dict

import numpy as np

from app.schemas import RunConfig, TrainConfig
from app.services import ant_service, gp_service, lti_service, ltv_service, signal_service
from app.services.seeding import derive_seed
from app.services.variational_service import sample
from monitoring.metrics import MetricsCollector
from monitoring.traces import stage
from . import fixtures

logger = logging.getLogger(__name__)

UNCERTAINTY_SAMPLES = 256


def _train_config(train: TrainConfig, root_seed: int) -> TrainConfig:
    # the optimizer seed follows the run's root seed
    return train.model_copy(update={"seed": derive_seed(root_seed, 3)})


class FitNodes:
    def __init__(self, metrics: MetricsCollector):
        self.metrics = metrics

    def load(self, state: Dict[str, Any]) -> Dict[str, Any]:
        """Node 1: read the fixtures named in the manifest"""
        with stage("load", self.metrics):
            data = fixtures.load(state["store"], state["config"])
        return {"fixtures": data, "current_step": "loaded"}

    def fit_lti(self, state: Dict[str, Any]) -> Dict[str, Any]:
        """Node 2a: time-invariant posterior plus its propagated predictions"""
        config: RunConfig = state["config"]
        s = config.lti
        pairs = state["fixtures"]["pairs"]
        f0, g0 = pairs[0]
        with stage("fit_lti", self.metrics):
            fit = lti_service.fit_lti(pairs, s.p, _train_config(s.train, config.seed))
        with stage("predict_lti", self.metrics):
            results = {
                "fit": fit,
                "least_squares": lti_service.least_squares_fir(pairs, s.p),
                "prediction": lti_service.posterior_predict(fit, f0, s.n_samples, derive_seed(config.seed, 4)),
                "ccf": lti_service.posterior_ccf(fit, f0, s.max_lag, s.n_samples, derive_seed(config.seed, 5)),
                "mean_ccf": lti_service.mean_ccf(fit, f0, s.max_lag),
                "observed_ccf": lti_service.observed_ccf(f0, g0, s.max_lag),
                "frequency": lti_service.posterior_frequency_response(
                    fit, s.n_freqs, s.n_samples, derive_seed(config.seed, 6)),
                "truth_frequency": signal_service.frequency_response(
                    state["fixtures"]["truth"], s.n_freqs, fit.sample_rate),
            }
        return {"results": results, "current_step": "fitted"}

    def fit_ltv(self, state: Dict[str, Any]) -> Dict[str, Any]:
        """Node 2b: windowed GP-prior fit and stitching"""
        config: RunConfig = state["config"]
        s = config.ltv
        f, g = state["fixtures"]["f"], state["fixtures"]["g"]
        plan = ltv_service.WindowPlan.from_spec(len(f), s.plan)
        prior = gp_service.build_window_prior(plan.window, s.p, s.kernel_spec())
        with stage("fit_ltv", self.metrics):
            windows = ltv_service.fit_ltv(f, g, s.p, plan, prior, _train_config(s.train, config.seed))
            estimate = ltv_service.stitch(windows, plan, f.sample_rate)
        with stage("fit_ltv_baseline", self.metrics):
            baseline = lti_service.least_squares_fir([(f, g)], s.p)
        return {"results": {"estimate": estimate, "baseline": baseline, "plan": plan},
                "current_step": "fitted"}

    def fit_ant(self, state: Dict[str, Any]) -> Dict[str, Any]:
        """Node 2c: CCF stacking and posterior-mean IR on the same pairs"""
        config: RunConfig = state["config"]
        settings = config.ant
        pairs = state["fixtures"]["pairs"]
        if settings.quantize:
            pairs = ant_service.quantize_pairs(pairs)
        with stage("fit_ant", self.metrics):
            comparison = ant_service.compare_pipelines(pairs, settings, _train_config(settings.train, config.seed),
                                                     quantized=settings.quantize)
        return {"results": {"comparison": comparison}, "current_step": "fitted"}

    def evaluate(self, state: Dict[str, Any]) -> Dict[str, Any]:
        """Node 3: scalar metrics against the known ground truth"""
        kind = state["config"].kind
        with stage("evaluate", self.metrics):
            getattr(self, f"_evaluate_{kind}")(state)
        return {"current_step": "evaluated"}

    def _evaluate_lti(self, state: Dict[str, Any]) -> None:
        r, fx = state["results"], state["fixtures"]
        fit = r["fit"]
        truth = fx["truth"].taps
        clean = fx["clean"][0].samples
        observed = fx["pairs"][0][1].samples
        self.metrics.record_many({
            "final_loss": fit.final_loss,
            "posterior_std_mean": float(fit.posterior.std.mean()),
            "tap_rmse": lti_service.tap_rmse(fit.posterior.mean, truth),
            "least_squares_tap_rmse": lti_service.tap_rmse(r["least_squares"].taps, truth),
            "coverage_3sigma": lti_service.coverage(fit, truth, 3.0),
            "denoised_mse": float(np.mean((r["prediction"].mean - clean) ** 2)),
            "observed_mse": float(np.mean((observed - clean) ** 2)),
            "frequency_band_coverage": lti_service.frequency_band_coverage(
                r["frequency"], fx["truth"], fit.sample_rate),
        })

    def _evaluate_ltv(self, state: Dict[str, Any]) -> None:
        r, fx = state["results"], state["fixtures"]
        truth = fx["truth"]
        estimate = r["estimate"]
        constant = np.broadcast_to(r["baseline"].taps, truth.taps.shape)
        self.metrics.record_many({
            "tap_rmse": ltv_service.tap_rmse(estimate, truth),
            "time_invariant_tap_rmse": float(np.sqrt(np.mean((constant - truth.taps) ** 2))),
            "total_variation": ltv_service.total_variation(estimate),
            "truth_total_variation": ltv_service.total_variation(truth),
            "posterior_std_mean": float(estimate.std.mean()),
            "n_windows": len(r["plan"]),
        })

    def _evaluate_ant(self, state: Dict[str, Any]) -> None:
        config: RunConfig = state["config"]
        c: ant_service.AntComparison = state["results"]["comparison"]
        scenario = config.ant.scenario
        freqs = ant_service.frequency_grid(config.ant)
        mir_samples = sample(c.mir.posterior, UNCERTAINTY_SAMPLES, derive_seed(config.seed, 7))
        mir_unc = ant_service.relative_uncertainty(freqs, mir_samples, scenario.sample_rate)
        ccf_unc = ant_service.relative_uncertainty(freqs, c.ccf.per_pair, scenario.sample_rate, c.ccf.mean.lags)
        truth_ir = state["fixtures"]["truth_ir"].taps
        self.metrics.record_many({
            "pair_count": c.pair_count,
            "mir_error": c.mir_error,
            "ccf_error": c.ccf_error,
            "mir_valid": c.mir_dispersion.valid,
            "ccf_valid": c.ccf_dispersion.valid,
            "mir_ridge_misfit": c.mir_dispersion.ridge_misfit,
            "ccf_ridge_misfit": c.ccf_dispersion.ridge_misfit,
            "mir_posterior_std_mean": float(c.mir.posterior.std.mean()),
            "mir_tap_rmse": lti_service.tap_rmse(c.mir.posterior.mean, truth_ir),
            "mir_relative_uncertainty": float(np.median(mir_unc.values)),
            "ccf_relative_uncertainty": float(np.median(ccf_unc.values)),
            "ccf_segments": c.ccf.n_segments,
        })

    def persist(self, state: Dict[str, Any]) -> Dict[str, Any]:
        """Node 4: write result files and metrics.json"""
        kind = state["config"].kind
        store = state["store"]
        with stage("persist", self.metrics):
            written = getattr(self, f"_persist_{kind}")(state)
        written.append(store.write_json("metrics.json", self.metrics.to_dict()))
        return {"written": [p.name for p in written], "current_step": "persisted"}

    def _persist_lti(self, state: Dict[str, Any]) -> list:
        store, r, fx = state["store"], state["results"], state["fixtures"]
        pred, ccf, freq = r["prediction"], r["ccf"], r["frequency"]
        f0, g0 = fx["pairs"][0]
        return [
            store.write_lti_fit("lti_fit.json", r["fit"].to_record()),
            store.write_table("lti_prediction.csv", {
                "n": pred.axis, "observed": g0.samples, "clean": fx["clean"][0].samples,
                "mean": pred.mean, "std": pred.std, "lower": pred.lower, "upper": pred.upper,
            }),
            store.write_table("lti_ccf.csv", {
                "lag": ccf.axis, "observed": r["observed_ccf"].values, "closed_form": r["mean_ccf"].values,
                "mean": ccf.mean, "std": ccf.std, "lower": ccf.lower, "upper": ccf.upper,
            }),
            store.write_table("lti_freq.csv", {
                "freq": freq.frequencies,
                "magnitude_mean": freq.magnitude.mean, "magnitude_std": freq.magnitude.std,
                "magnitude_lower": freq.magnitude.lower, "magnitude_upper": freq.magnitude.upper,
                "phase_mean": freq.phase.mean, "phase_std": freq.phase.std,
                "phase_lower": freq.phase.lower, "phase_upper": freq.phase.upper,
                "truth_magnitude": np.abs(r["truth_frequency"].values),
            }),
        ]

    def _persist_ltv(self, state: Dict[str, Any]) -> list:
        return state["store"].write_tv_ir("ltv_mean.csv", state["results"]["estimate"])

    def _persist_ant(self, state: Dict[str, Any]) -> list:
        config: RunConfig = state["config"]
        store = state["store"]
        c: ant_service.AntComparison = state["results"]["comparison"]
        truth = ant_service.scenario_curve(config.ant.scenario)
        freqs = c.mir_dispersion.curve.freqs
        return [
            store.write_lti_fit("ant_mir_fit.json", c.mir.to_record()),
            store.write_table("ant_ccf.csv", {"lag": c.ccf.mean.lags, "mean": c.ccf.mean.values, "std": c.ccf.std}),
            store.write_misfit("ant_misfit_mir.csv", c.mir_dispersion.misfit),
            store.write_misfit("ant_misfit_ccf.csv", c.ccf_dispersion.misfit),
            store.write_table("ant_dispersion.csv", {
                "freq": freqs, "truth": truth.velocity_at(freqs),
                "mir": c.mir_dispersion.curve.velocities, "ccf": c.ccf_dispersion.curve.velocities,
            }),
        ]
