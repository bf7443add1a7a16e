import json
import math

import numpy as np
import pytest
from pydantic import ValidationError
from app.exceptions import ConfigError, SamplingError
from app.services import harness
from app.services.harness import (
    DEFAULT_CONFIGS, EXPERIMENTS, ExperimentConfig, Outcome, default_config, estimate_order, run_convergence,
)
from app.utils.io import RESULT_COLUMNS, read_meta, read_results


def fake_experiment(config, n):
    if n == 30:
        raise SamplingError("candidate pool exhausted")
    h = 1.0 / math.sqrt(n)
    return Outcome(estimate=1.0 + h ** 2, reference=1.0, h_max=h)


@pytest.fixture
def fake(monkeypatch):
    monkeypatch.setitem(EXPERIMENTS, "fake", fake_experiment)
    return dict(experiment="fake", n_points=[10, 20, 40], q=2.0, T=10.0,
                box=dict(center=[0, 0, 0], side_lengths=[4, 4, 4]), modes_per_axis=2)


def test_order_first_order():
    assert estimate_order([0.2, 0.1, 0.05], [1.0, 0.5, 0.25]) == [None, pytest.approx(1.0), pytest.approx(1.0)]

def test_order_known_values():
    assert estimate_order([1e-2, 1e-4], [0.1, 0.05])[1] == pytest.approx(6.644, abs=1e-3)
    h = [1.0 / math.sqrt(640), 1.0 / math.sqrt(1280)]
    assert estimate_order([2.1475e-2, 9.5340e-4], h)[1] == pytest.approx(8.987, abs=1e-3)

def test_order_skips_non_positive_and_missing():
    assert estimate_order([1e-3, 0.0, 1e-5], [1.0, 0.5, 0.25]) == [None, None, None]
    assert estimate_order([math.nan, 1e-3, 1e-4], [1.0, 0.5, 0.25])[1] is None
    with pytest.raises(ValueError):
        estimate_order([1.0], [1.0, 2.0])

def test_config_rejects_bad_input(fake):
    with pytest.raises(ValidationError):
        ExperimentConfig(**{**fake, "n_points": [20, 10]})
    with pytest.raises(ValidationError):
        ExperimentConfig(**{**fake, "experiment": "nope"})
    with pytest.raises(ValidationError):
        ExperimentConfig(**{**fake, "colour": "blue"})
    with pytest.raises(ValidationError):
        ExperimentConfig(**{**fake, "box": dict(center=[0, 0], side_lengths=[1, 1, 1])})

@pytest.mark.parametrize("name", sorted(DEFAULT_CONFIGS))
def test_default_configs_validate(name):
    config = default_config(name)
    assert config.experiment == name
    assert config.basis().dim == len(config.box.center)

@pytest.mark.parametrize("name, n_modes", [
    ("avg_x2", 163 ** 3), ("voronoi_area", 23 ** 3), ("planar_area", 27 ** 3), ("disk_log", 61 ** 2),
    ("paraboloid_singular", 23 ** 3), ("sphere_sanity", 27 ** 3),
])
def test_default_mode_counts(name, n_modes):
    assert default_config(name).basis().n_modes == n_modes

def test_default_config_overrides_and_unknown():
    assert default_config("disk_log", n_points=[50]).n_points == [50]
    with pytest.raises(ConfigError):
        default_config("nope")

def test_failed_row_is_recorded_and_others_run(fake, tmp_path):
    config = ExperimentConfig(**{**fake, "n_points": [10, 20, 30, 40]})
    rows = run_convergence(config, out_dir=tmp_path)
    assert [r.n_points for r in rows] == [10, 20, 30, 40]
    bad = rows[2]
    assert bad.error.startswith("SamplingError")
    assert math.isnan(bad.estimate)
    assert all(r.error is None for r in rows if r is not bad)
    assert rows[1].order_est == pytest.approx(2.0)
    assert rows[3].order_est is None

def test_rows_are_consistent(fake, tmp_path):
    rows = run_convergence(ExperimentConfig(**fake), out_dir=tmp_path)
    for r in rows:
        assert r.rel_error == pytest.approx(abs(r.estimate - r.reference) / abs(r.reference))
    assert rows[0].order_est is None
    assert [r.order_est for r in rows[1:]] == [pytest.approx(2.0), pytest.approx(2.0)]

def test_results_csv_and_sidecar(fake, tmp_path):
    config = ExperimentConfig(**fake)
    run_convergence(config, out_dir=tmp_path)
    path = tmp_path / "fake.csv"
    df = read_results(path)
    assert list(df.columns) == RESULT_COLUMNS
    assert path.read_text().splitlines()[0] == ",".join(RESULT_COLUMNS)
    assert df["n_points"].tolist() == [10, 20, 40]
    meta = read_meta(path)
    assert meta["schema_version"] == 1
    assert meta["config"]["experiment"] == "fake"

def test_results_are_deterministic(fake, tmp_path):
    config = ExperimentConfig(**fake)
    run_convergence(config, out_dir=tmp_path / "a")
    run_convergence(config, out_dir=tmp_path / "b")
    first, second = read_results(tmp_path / "a" / "fake.csv"), read_results(tmp_path / "b" / "fake.csv")
    cols = [c for c in RESULT_COLUMNS if c != "wall_ms"]
    assert first[cols].equals(second[cols])

def test_threaded_rows_keep_order(fake):
    rows = run_convergence(ExperimentConfig(**fake), threads=3, write=False)
    assert [r.n_points for r in rows] == [10, 20, 40]

def test_read_results_rejects_foreign_header(tmp_path):
    path = tmp_path / "other.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ConfigError):
        read_results(path)

def test_output_path_from_config(fake, tmp_path):
    target = tmp_path / "nested" / "out.csv"
    config = ExperimentConfig(**{**fake, "output_path": str(target)})
    run_convergence(config)
    assert target.exists()
    assert json.loads(target.with_suffix(".meta.json").read_text())["columns"] == RESULT_COLUMNS

def test_small_disk_run(tmp_path):
    config = default_config("disk_log", n_points=[150, 300], modes_per_axis=16, probe_factor=10)
    rows = run_convergence(config, out_dir=tmp_path)
    assert all(r.error is None for r in rows)
    assert all(r.reference == 0.25 for r in rows)
    assert rows[-1].rel_error < 5e-2
    assert rows[1].h_max < rows[0].h_max

def test_avg_x2_reports_cloud_average(monkeypatch):
    captured = {}

    def fake_ratio(cloud, f, g, basis, variant, solver):
        captured["n"] = len(cloud)
        return type("R", (), {"ratio": 2.5})()

    monkeypatch.setattr(harness, "method1_ratio", fake_ratio)
    monkeypatch.setattr(harness, "_h_max", lambda config, cloud, domain: 0.1)
    config = default_config("avg_x2", n_points=[30])
    out = harness.avg_x2(config, 30)
    assert captured["n"] == 30
    assert out.estimate == 2.5
    assert out.reference == harness.AVG_X2_REFERENCE
    cloud = harness._cloud(config, harness.get_surface("genus_two"), 30)
    assert out.baseline == pytest.approx(float(np.mean(cloud.positions[:, 0] ** 2)))
