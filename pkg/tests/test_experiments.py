import json

import numpy as np
import pytest

from wenki.ensemble import read_snapshots
from wenki.experiments import (
    ConfigError,
    ExperimentConfig,
    MomentRow,
    MomentTable,
    default_dt,
    histogram_rows,
    read_moment_tables,
    read_variance_report,
    read_variance_series,
    reproduce_table,
    run_experiment,
    variance_series,
    weight_variance_report,
    write_moment_tables,
    write_variance_report,
)
from wenki.ensemble import WeightedEnsemble
from wenki.model import builtin_problem


def config(tmp_path, **kw):
    base = dict(problem="linear_gaussian_1d", method="is", n_particles=200, seeds=[0], output_dir=str(tmp_path))
    base.update(kw)
    return ExperimentConfig.from_dict(base)


def test_defaults():
    assert default_dt("example2") == 1e-5
    assert default_dt("example4") == 1e-4
    assert default_dt("example3") == 1e-3
    cfg = ExperimentConfig("example2", "wenki", 10)
    assert cfg.dt == 1e-5 and cfg.seeds == tuple(range(10)) and cfg.moment_orders == (1, 2, 3, 4, 5)


@pytest.mark.parametrize("bad", [
    dict(problem="example9"),
    dict(method="mcmc"),
    dict(n_particles=0),
    dict(dt=0.3),
    dict(seeds=[]),
    dict(moment_orders=[0]),
    dict(colour="red"),
    dict(problem={"A": [[1.0]]}),
    dict(problem={"A": [[1.0]], "y": [0.0], "gamma": [[-1.0]]}),
])
def test_config_validation(tmp_path, bad):
    with pytest.raises(ConfigError):
        config(tmp_path, **bad)


def test_config_missing_keys():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"problem": "example3"})


def test_config_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "missing.json")
    (tmp_path / "broken.json").write_text("{not json")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "broken.json")


def test_single_shot_experiment_files(tmp_path):
    paths = run_experiment(config(tmp_path))
    names = sorted(p.name for p in paths)
    assert names == sorted([
        "is_seed0_trajectory.csv", "is_seed0_variance.csv", "is_seed0_histogram.csv",
        "is_moments.csv", "is_metadata.json",
    ])
    assert sorted(p.name for p in tmp_path.iterdir()) == names
    assert len(list(tmp_path.glob("*.csv"))) == 4
    series = read_variance_series(tmp_path / "is_seed0_variance.csv")
    assert len(series) == 1 and series[0][0] == 1.0


def csv_bytes(folder):
    return {p.name: p.read_bytes() for p in sorted(folder.glob("*.csv"))}


def test_rerun_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run_experiment(config(a, method="wenki", problem="example3", dt=0.01, seeds=[3, 4]))
    run_experiment(config(b, method="wenki", problem="example3", dt=0.01, seeds=[3, 4]))
    assert csv_bytes(a) == csv_bytes(b)


def test_metadata_echo_reproduces(tmp_path):
    first = tmp_path / "first"
    run_experiment(config(first, method="enki", problem="example1", dt=0.02, seeds=[7]))
    meta = json.loads((first / "enki_metadata.json").read_text())
    assert meta["wall_clock_seconds"] >= 0
    echo = dict(meta["config"], output_dir=str(tmp_path / "second"))
    run_experiment(ExperimentConfig.from_dict(echo))
    assert csv_bytes(first) == csv_bytes(tmp_path / "second")


def test_inline_problem(tmp_path):
    inline = {"A": [[1.0, 0.0], [0.0, 2.0]], "y": [1.0, 1.0], "gamma": [[1.0, 0.0], [0.0, 0.5]], "name": "diag"}
    run_experiment(config(tmp_path, problem=inline, method="ensrf", dt=0.05, n_particles=50))
    tables = read_moment_tables(tmp_path / "ensrf_moments.csv")
    assert tables[0].rows[0].oracle > 0


def test_artifact_round_trips(tmp_path):
    run_experiment(config(tmp_path, method="wensrf", problem="example5", dt=0.05, n_particles=40, seeds=[1, 2]))
    snaps = read_snapshots(tmp_path / "wensrf_seed1_trajectory.csv")
    assert [s.t for s in snaps][0] == 0.0 and snaps[-1].t == 1.0
    assert all(abs(s.weights.sum() - 1) <= 1e-12 for s in snaps)

    tables = read_moment_tables(tmp_path / "wensrf_moments.csv")
    write_moment_tables(tmp_path / "again.csv", tables)
    assert (tmp_path / "again.csv").read_bytes() == (tmp_path / "wensrf_moments.csv").read_bytes()
    for line in (tmp_path / "wensrf_moments.csv").read_text().splitlines()[1:]:
        _, _, _, orc, est, rel = line.split(",")
        assert abs(abs(float(est) - float(orc)) / abs(float(orc)) - float(rel)) <= 1e-12

    hist = (tmp_path / "wensrf_seed1_histogram.csv").read_text().splitlines()
    assert hist[0] == "bin_index,lo_1,hi_1,lo_2,hi_2,weight"
    assert len(hist) == 1 + 100 * 100
    assert abs(sum(float(r.split(",")[-1]) for r in hist[1:]) - 1.0) <= 1e-12


def test_histogram_drops_outside_points():
    e = WeightedEnsemble.from_weights([[0.05], [20.0]], [0.25, 0.75])
    header, rows = histogram_rows(e, [(-10.0, 10.0)])
    assert header == ["bin_index", "lo_1", "hi_1", "weight"]
    weights = [float(r[-1]) for r in rows]
    assert sum(weights) == 0.25 and weights[50] == 0.25


def test_moment_table_consistency():
    tab = MomentTable("x", [MomentRow(1, 2.0, 2.1), MomentRow(2, 5.0, 4.0)])
    assert tab.row(1).relative_error == pytest.approx(0.05, rel=1e-12)
    assert tab.max_relative_error == pytest.approx(0.2, rel=1e-12)


def test_reproduce_table_rejects_other_examples():
    with pytest.raises(ConfigError):
        reproduce_table("example1")


def test_reproduce_table_subset(tmp_path):
    tables = reproduce_table("example3", seeds=[0, 1], methods=["is", "ensrf"], out=tmp_path)
    assert set(tables) == {"is", "ensrf"}
    assert [r.k for r in tables["is"].rows] == [1, 2, 3, 4, 5]
    back = read_moment_tables(tmp_path / "example3_table.csv")
    assert [t.method for t in back] == ["is", "ensrf"]
    assert back[0].rows == tables["is"].rows


def test_variance_series_rejects_method():
    with pytest.raises(ConfigError):
        variance_series(builtin_problem("example3"), "enki", 10, 0.1, [0])


@pytest.mark.parametrize("example", ["example3", "example5"])
def test_variance_report(tmp_path, example):
    rows = weight_variance_report(example, n_particles=1000, out=tmp_path)
    by = {}
    for t, m, v in rows:
        by.setdefault(m, {})[t] = v
    for m in ("is", "wenki", "wensrf"):
        assert by[m][0.0] == 0.0
    assert by["is"][1.0] > by["wenki"][1.0]
    back = read_variance_report(tmp_path / f"{example}_variance.csv")
    assert back == rows
    write_variance_report(tmp_path / "again.csv", back)
    assert (tmp_path / "again.csv").read_bytes() == (tmp_path / f"{example}_variance.csv").read_bytes()


def test_is_variance_nondecreasing_in_t():
    _, var = variance_series(builtin_problem("example3"), "is", 500, 0.01, [0, 1])
    assert np.all(np.diff(var, axis=1) >= -1e-12)
