import json

import numpy as np
import pandas as pd
import pytest
from app.cli import EXIT_CONFIG, EXIT_OK, EXIT_ROW_FAILURE, main
from app.exceptions import SamplingError
from app.services.harness import EXPERIMENTS, Outcome
from app.utils.io import CLOUD_COLUMNS, WEIGHT_COLUMNS, read_cloud_csv, read_results


def failing_at_20(config, n):
    if n == 20:
        raise SamplingError("boom")
    return Outcome(estimate=1.0 + 1.0 / n, reference=1.0, h_max=1.0 / n)


@pytest.fixture
def config_file(tmp_path, monkeypatch):
    monkeypatch.setitem(EXPERIMENTS, "failing", failing_at_20)

    def write(**overrides):
        body = dict(experiment="failing", n_points=[10, 40], q=2.0, T=10.0,
                    box=dict(center=[0, 0, 0], side_lengths=[4, 4, 4]), modes_per_axis=2)
        body.update(overrides)
        path = tmp_path / "config.json"
        path.write_text(json.dumps(body))
        return path
    return write


def test_sample_writes_cloud(tmp_path):
    out = tmp_path / "cloud.csv"
    assert main(["sample", "--surface", "sphere", "--n", "25", "--seed", "3", "--out", str(out)]) == EXIT_OK
    df = pd.read_csv(out)
    assert list(df.columns) == CLOUD_COLUMNS
    assert len(df) == 25
    assert np.allclose(np.linalg.norm(df[["x", "y", "z"]].to_numpy(), axis=1), 1.0, atol=1e-10)

def test_unknown_surface_is_config_error(tmp_path):
    assert main(["sample", "--surface", "torus", "--n", "5", "--out", str(tmp_path / "c.csv")]) == EXIT_CONFIG

def test_run_success(config_file, tmp_path):
    assert main(["run", "--config", str(config_file()), "--out", str(tmp_path)]) == EXIT_OK
    df = read_results(tmp_path / "failing.csv")
    assert df["n_points"].tolist() == [10, 40]

def test_run_row_failure(config_file, tmp_path):
    path = config_file(n_points=[10, 20, 40])
    assert main(["run", "--config", str(path), "--out", str(tmp_path)]) == EXIT_ROW_FAILURE
    df = read_results(tmp_path / "failing.csv")
    assert df["error"].notna().tolist() == [False, True, False]

def test_bad_configs(config_file, tmp_path):
    assert main(["run", "--config", str(config_file(n_points=[40, 10]))]) == EXIT_CONFIG
    assert main(["run", "--config", str(config_file(extra_field=1))]) == EXIT_CONFIG
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    assert main(["run", "--config", str(broken)]) == EXIT_CONFIG

def test_weights_integrate_constant(tmp_path, settings_env):
    settings_env(WEIGHTS_MODES=4, WEIGHTS_Q=2.0, WEIGHTS_T=10.0)
    cloud_path, out = tmp_path / "cloud.csv", tmp_path / "w.csv"
    assert main(["sample", "--surface", "sphere", "--n", "30", "--out", str(cloud_path)]) == EXIT_OK
    args = ["weights", "--surface", "sphere", "--cloud", str(cloud_path), "--g-integral", str(4 * np.pi),
            "--out", str(out)]
    assert main(args) == EXIT_OK
    df = pd.read_csv(out)
    assert list(df.columns) == WEIGHT_COLUMNS
    assert df["weight"].sum() == pytest.approx(4 * np.pi, rel=1e-12)
    assert np.allclose(df[["x", "y", "z"]].to_numpy(), read_cloud_csv(cloud_path).positions)

def test_weights_on_the_unit_disk(tmp_path, settings_env):
    settings_env(WEIGHTS_MODES=8, WEIGHTS_Q=2.0, WEIGHTS_T=10.0)
    cloud_path, out = tmp_path / "disk.csv", tmp_path / "w.csv"
    assert main(["sample", "--surface", "disk", "--n", "30", "--out", str(cloud_path)]) == EXIT_OK
    assert cloud_path.read_text().splitlines()[0] == "x,y"
    args = ["weights", "--surface", "disk", "--cloud", str(cloud_path), "--g-integral", str(np.pi), "--out", str(out)]
    assert main(args) == EXIT_OK
    df = pd.read_csv(out, float_precision="round_trip")
    assert list(df.columns) == ["x", "y", "weight"]
    assert len(df) == 30
    assert df["weight"].sum() == pytest.approx(np.pi, rel=1e-12)

def test_disk_weights_need_planar_cloud(tmp_path):
    cloud_path = tmp_path / "cloud.csv"
    cloud_path.write_text("x,y,z\n0.1,0.2,0.0\n")
    args = ["weights", "--surface", "disk", "--cloud", str(cloud_path), "--g-integral", "1", "--out",
            str(tmp_path / "w.csv")]
    assert main(args) == EXIT_CONFIG

def test_weights_missing_cloud(tmp_path):
    args = ["weights", "--surface", "sphere", "--cloud", str(tmp_path / "none.csv"), "--g-integral", "1",
            "--out", str(tmp_path / "w.csv")]
    assert main(args) == EXIT_CONFIG
