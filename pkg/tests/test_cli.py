import json
import os

import pytest

from qndsim import cli, pipeline
from qndsim.config import PipelineConfig
from qndsim.errors import CalibrationError, FitError
from qndsim.io import file_header

SMALL = {
    "shot_count": 400,
    "ensemble": {"pool_size": 256, "integrator_substeps": 32, "pool_time_span_us": 20.0},
    "noise_scan": {"bin_size": 50, "reference_shots": 100},
    "covariance": {"segment1_us": 16.0, "shots_per_group": 300, "empty_shots": 300},
    "qnd": {"shots": 400},
    "calibration": {"shots_per_group": 60, "batches": 5},
}


@pytest.fixture
def small_config(tmp_path):
    p = tmp_path / "small.json"
    p.write_text(json.dumps(SMALL))
    return str(p)


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for k in list(os.environ):
        if k.startswith("QNDSIM_"):
            monkeypatch.delenv(k)


def test_all_writes_manifest(small_config, tmp_path):
    out = tmp_path / "run"
    assert cli.main(["all", "--config", small_config, "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert set(man["outputs"]) == set(pipeline.STAGES)
    for files in man["outputs"].values():
        for f in files:
            assert man["config_hash"].startswith(file_header(out / f)[1])
    assert "timings" not in man
    assert (out / "timings.json").exists()


def test_stage_flag_and_overrides(small_config, tmp_path):
    out = tmp_path / "r"
    code = cli.main(["--stage", "simulate", "--config", small_config, "--out", str(out),
                     "--shots", "50", "--seed", "3", "--motion", "off"])
    assert code == 0
    lines = (out / "shots.jsonl").read_text().splitlines()
    assert len(lines) == 51
    assert json.loads(lines[1])["seed"][0] == pipeline.Run(
        PipelineConfig(master_seed=3, output_dir=str(out))).seed("simulate")


def test_fit_requires_upstream(small_config, tmp_path):
    assert cli.main(["fit", "--config", small_config, "--out", str(tmp_path / "x")]) == 2


def test_stale_upstream_rejected(small_config, tmp_path):
    out = str(tmp_path / "r")
    assert cli.main(["simulate", "--config", small_config, "--out", out, "--shots", "20"]) == 0
    # a different seed changes the config hash, so the old traces are stale
    assert cli.main(["fit", "--config", small_config, "--out", out, "--shots", "20",
                     "--seed", "99"]) == 2
    assert cli.main(["fit", "--config", small_config, "--out", out, "--shots", "20"]) == 0


def test_config_error_exit_code(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"schema_version": "9"}')
    assert cli.main(["simulate", "--config", str(p)]) == 2
    assert cli.main([]) == 2
    with pytest.raises(SystemExit) as e:
        cli.main(["bogus"])
    assert e.value.code == 2


def test_calibration_and_numeric_exit_codes(small_config, tmp_path, monkeypatch):
    def fail_cal(*a, **k):
        raise CalibrationError("groups disagree")

    monkeypatch.setattr(pipeline, "calibrate_model", fail_cal)
    assert cli.main(["calibrate", "--config", small_config, "--out", str(tmp_path / "a")]) == 3

    def fail_fit(*a, **k):
        raise FitError("singular")

    monkeypatch.setattr(pipeline.estimation, "fit_batch", fail_fit)
    assert cli.main(["noise-scan", "--config", small_config, "--out", str(tmp_path / "b")]) == 4


def test_env_override_reaches_cli(small_config, tmp_path, monkeypatch):
    monkeypatch.setenv("QNDSIM_SHOT_COUNT", "30")
    out = tmp_path / "e"
    assert cli.main(["simulate", "--config", small_config, "--out", str(out)]) == 0
    assert len((out / "shots.jsonl").read_text().splitlines()) == 31


def test_fit_consumes_calibrated_model(small_config, tmp_path):
    out = str(tmp_path / "c")
    for stage in ("simulate", "calibrate", "fit"):
        assert cli.main([stage, "--config", small_config, "--out", out]) == 0
    with open(os.path.join(out, "estimates.csv")) as fh:
        assert any("pumping_source" in line and "pumping_model.json" in line for line in fh)
