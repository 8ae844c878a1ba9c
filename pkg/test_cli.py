"""End-to-end tests for the bayes-ir command line"""
import json
from pathlib import Path

import numpy as np
import pytest

import main
from app.errors import ConfigError
from integrations.storage import ResultStore
from workflow import commands

SMALL_LTI = ["--set", "lti.length=256", "--set", "lti.max_lag=16", "--set", "lti.n_freqs=32",
             "--set", "lti.n_samples=200", "--set", "lti.train.steps=50", "--set", "lti.train.batch_replicas=16"]
SMALL_LTV = ["--set", "ltv.n=128", "--set", "ltv.p=2", "--set", "ltv.train.steps=30",
             "--set", "ltv.train.batch_replicas=4"]
SMALL_ANT = ["--set", "ant.scenario.signal_length=256", "--set", "ant.train.steps=20",
             "--set", "ant.train.batch_replicas=4"]


def _files(root: Path) -> dict:
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def lti_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("lti")
    assert main.main(["gen", "--kind", "lti", "--seed", "7", "--out", str(out)] + SMALL_LTI) == 0
    assert main.main(["fit", "--kind", "lti", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def ant_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("ant")
    assert main.main(["gen", "--kind", "ant", "--pairs", "5", "--seed", "2", "--out", str(out)] + SMALL_ANT) == 0
    assert main.main(["fit", "--kind", "ant", "--out", str(out)]) == 0
    return out


# Configuration

def test_parse_override_reads_json_values():
    assert commands.parse_override("lti.p=4") == (["lti", "p"], 4)
    assert commands.parse_override("ant.pair_counts=[2,4]") == (["ant", "pair_counts"], [2, 4])
    assert commands.parse_override("lti.input_kind=pulse") == (["lti", "input_kind"], "pulse")
    assert commands.parse_override("lti.snr_db=null") == (["lti", "snr_db"], None)


def test_parse_override_requires_an_equals_sign():
    with pytest.raises(ConfigError) as info:
        commands.parse_override("lti.p")
    assert info.value.field == "--set"


def test_invalid_values_name_the_field(tmp_path):
    with pytest.raises(ConfigError) as info:
        commands.build_config("gen", tmp_path, overrides=["lti.p=0"])
    assert info.value.field == "lti.p"
    with pytest.raises(ConfigError) as info:
        commands.build_config("gen", tmp_path, overrides=["lti.no_such_field=1"])
    assert info.value.field == "lti.no_such_field"


def test_pairs_flag_clips_the_sweep_counts(tmp_path):
    config = commands.build_config("gen", tmp_path, kind="ant", pairs=60)
    assert config.ant.scenario.n_pairs == 60
    assert config.ant.pair_counts == [25, 50, 60]


def test_config_file_is_the_base(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"kind": "ltv", "seed": 11, "ltv": {"p": 4}}))
    config = commands.build_config("gen", tmp_path / "out", str(path), ["ltv.n=512"])
    assert (config.kind, config.seed, config.ltv.p, config.ltv.n) == ("ltv", 11, 4, 512)
    assert config.output_dir == str(tmp_path / "out")


def test_malformed_config_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text("{not json")
    assert main.main(["gen", "--config", str(path), "--out", str(tmp_path)]) == 2
    path.write_text("[1, 2]")
    assert main.main(["gen", "--config", str(path), "--out", str(tmp_path)]) == 2
    assert main.main(["gen", "--config", str(tmp_path / "absent.json"), "--out", str(tmp_path)]) == 4


# gen

def test_gen_is_byte_identical_across_directories(tmp_path):
    for name in ("a", "b"):
        argv = ["gen", "--kind", "lti", "--seed", "7", "--out", str(tmp_path / name)] + SMALL_LTI
        assert main.main(argv) == 0
    first, second = _files(tmp_path / "a"), _files(tmp_path / "b")
    assert first.keys() == second.keys()
    assert "run_config.json" in first and "manifest.json" in first
    assert first == second


def test_gen_ant_writes_one_file_per_pair(tmp_path, capsys):
    assert main.main(["gen", "--kind", "ant", "--pairs", "5", "--out", str(tmp_path)] + SMALL_ANT) == 0
    manifest = ResultStore(tmp_path).read_manifest()
    assert manifest.experiment == "ant"
    assert len(manifest.files) == 6
    assert sorted(p.name for p in tmp_path.glob("pair_*.csv")) == [f"pair_{i:03d}.csv" for i in range(5)]
    assert "pair_004.csv" in capsys.readouterr().out.split()


def test_different_seeds_give_different_fixtures(tmp_path):
    for seed in ("1", "2"):
        assert main.main(["gen", "--seed", seed, "--out", str(tmp_path / seed)] + SMALL_LTI) == 0
    assert (tmp_path / "1" / "g_0.csv").read_bytes() != (tmp_path / "2" / "g_0.csv").read_bytes()


# fit

def test_fit_lti_reports_a_finite_loss(lti_run):
    metrics = json.loads((lti_run / "metrics.json").read_text())
    assert np.isfinite(metrics["final_loss"])
    assert 0.0 <= metrics["coverage_3sigma"] <= 1.0
    assert "runtime_seconds" in metrics
    for name in ("lti_fit.json", "lti_prediction.csv", "lti_ccf.csv", "lti_freq.csv"):
        assert (lti_run / name).exists()


def test_fit_ltv_writes_the_mean_and_its_std(tmp_path):
    assert main.main(["gen", "--kind", "ltv", "--out", str(tmp_path)] + SMALL_LTV) == 0
    assert main.main(["fit", "--kind", "ltv", "--out", str(tmp_path)]) == 0
    estimate = ResultStore(tmp_path).read_tv_ir("ltv_mean.csv")
    assert estimate.taps.shape == (128, 2)
    assert (tmp_path / "ltv_mean_std.csv").exists()
    assert np.all(estimate.std > 0)


def test_fit_ant_writes_both_misfit_maps(ant_run):
    metrics = json.loads((ant_run / "metrics.json").read_text())
    assert metrics["pair_count"] == 5
    assert np.isfinite(metrics["mir_error"]) and np.isfinite(metrics["ccf_error"])
    for name in ("ant_misfit_mir.csv", "ant_misfit_ccf.csv", "ant_dispersion.csv", "ant_mir_fit.json"):
        assert (ant_run / name).exists()


def test_fit_without_fixtures_is_an_io_error(tmp_path):
    assert main.main(["fit", "--out", str(tmp_path)]) == 4


def test_fit_rejects_a_different_kind(lti_run):
    assert main.main(["fit", "--kind", "ltv", "--out", str(lti_run)]) == 2


def test_invalid_override_is_a_config_error(tmp_path):
    assert main.main(["gen", "--set", "lti.p=0", "--out", str(tmp_path)]) == 2
    assert not (tmp_path / "manifest.json").exists()


# compare

def test_compare_writes_one_row_per_count_and_seed(tmp_path):
    argv = ["compare", "--out", str(tmp_path), "--seeds", "0", "1",
            "--set", "ant.scenario.n_pairs=4", "--set", "ant.pair_counts=[2,4]"] + SMALL_ANT
    assert main.main(argv) == 0
    rows = ResultStore(tmp_path).read_sweep("sweep.csv")
    assert [(r.pair_count, r.seed) for r in rows] == [(2, 0), (4, 0), (2, 1), (4, 1)]
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert metrics["quantized"] is False
    assert metrics["seeds"] == [0, 1]
    assert np.isfinite(metrics["mir_error_4"])


# plotdata

def test_plotdata_is_idempotent(lti_run):
    assert main.main(["plotdata", "--results", str(lti_run)]) == 0
    first = _files(lti_run / commands.PLOT_DIR)
    assert main.main(["plotdata", "--results", str(lti_run)]) == 0
    assert _files(lti_run / commands.PLOT_DIR) == first
    assert "freq_magnitude.csv" in first
    assert first["freq_magnitude.csv"].decode().splitlines()[0] == "x,y,ylo,yhi"


def test_plotdata_passes_misfit_maps_through(ant_run):
    assert main.main(["plotdata", "--results", str(ant_run)]) == 0
    plot = ant_run / commands.PLOT_DIR
    assert (plot / "misfit_mir.csv").read_bytes() == (ant_run / "ant_misfit_mir.csv").read_bytes()
    assert (plot / "dispersion_truth.csv").exists()


def test_plotdata_on_an_empty_directory(tmp_path):
    assert main.main(["plotdata", "--results", str(tmp_path)]) == 4


# selftest

@pytest.mark.slow
def test_quick_selftest_passes(capsys):
    assert main.main(["selftest", "--quick"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out
    assert out.count("PASS") >= 7
