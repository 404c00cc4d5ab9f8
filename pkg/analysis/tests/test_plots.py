from pathlib import Path

import numpy as np
import pytest

from taskcomm_plots.io import EXPECTED_HEADER, RunSeries, SchemaError, load_run_csv, load_runs
from taskcomm_plots.plots import (
    gaussian_kde,
    plot_learning_curves,
    plot_time_density,
    rolling_mean,
    silverman_bandwidth,
)

FIXTURES = Path(__file__).parent / "fixtures"
TRAIN_CSV = FIXTURES / "train_small.csv"
EVAL_CSV = FIXTURES / "eval_small.csv"


def series(label, **columns):
    n = len(next(iter(columns.values())))
    base = {"episode": np.arange(n, dtype=float)}
    base.update({k: np.asarray(v, dtype=float) for k, v in columns.items()})
    return RunSeries(label=label, columns=base)


# -- loading --

def test_fixture_loads_with_all_columns():
    run = load_run_csv(TRAIN_CSV, "train")
    assert len(run) == 60
    for column in EXPECTED_HEADER.split(","):
        assert column in run.columns
    assert run.columns["episode"][0] == 0.0


def test_summary_comment_is_skipped():
    run = load_run_csv(EVAL_CSV, "eval")
    assert len(run) == 120


def test_loading_never_modifies_the_csv():
    before = TRAIN_CSV.read_bytes()
    load_run_csv(TRAIN_CSV)
    assert TRAIN_CSV.read_bytes() == before


def test_wrong_header_raises_schema_error(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("episode,success\n0,1\n")
    with pytest.raises(SchemaError):
        load_run_csv(bad)


def test_reordered_header_raises_schema_error(tmp_path):
    columns = EXPECTED_HEADER.split(",")
    swapped = ",".join([columns[1], columns[0]] + columns[2:])
    bad = tmp_path / "bad.csv"
    bad.write_text(swapped + "\n" + ",".join(["0"] * len(columns)) + "\n")
    with pytest.raises(SchemaError):
        load_run_csv(bad)


def test_ragged_row_raises_schema_error(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text(EXPECTED_HEADER + "\n1,2,3\n")
    with pytest.raises(SchemaError):
        load_run_csv(bad)


def test_non_numeric_cell_raises_schema_error(tmp_path):
    bad = tmp_path / "bad.csv"
    row = ",".join(["0"] * 9 + ["oops"])
    bad.write_text(EXPECTED_HEADER + "\n" + row + "\n")
    with pytest.raises(SchemaError):
        load_run_csv(bad)


def test_empty_file_raises_schema_error(tmp_path):
    bad = tmp_path / "empty.csv"
    bad.write_text("")
    with pytest.raises(SchemaError):
        load_run_csv(bad)


def test_duplicate_labels_rejected():
    with pytest.raises(ValueError, match="unique"):
        load_runs([TRAIN_CSV, TRAIN_CSV], ["same", "same"])


def test_label_count_must_match():
    with pytest.raises(ValueError):
        load_runs([TRAIN_CSV], ["a", "b"])


# -- smoothing --

def test_rolling_mean_window_one_is_identity():
    x = np.array([3.0, 1.0, 4.0, 1.0, 5.0])
    assert np.array_equal(rolling_mean(x, 1), x)


def test_rolling_mean_constant_series_is_flat():
    out = rolling_mean(np.full(100, 7.0), 10)
    assert np.allclose(out, 7.0)


def test_rolling_mean_window_clamps_to_length():
    out = rolling_mean(np.array([1.0, 2.0, 3.0]), 500)
    assert out.shape == (1,)
    assert out[0] == pytest.approx(2.0)


# -- curves --

def test_learning_curves_render_from_fixture(tmp_path):
    runs = load_runs([TRAIN_CSV, EVAL_CSV], ["a", "b"])
    out = tmp_path / "curves.png"
    drawn = plot_learning_curves(runs, "success", out, window=10)
    assert out.exists() and out.stat().st_size > 0
    assert set(drawn) == {"a", "b"}


def test_learning_curves_both_metrics(tmp_path):
    runs = load_runs([TRAIN_CSV], ["only"])
    for metric in ("success", "episode_total_time"):
        out = tmp_path / f"{metric}.png"
        plot_learning_curves(runs, metric, out, window=5)
        assert out.exists()


def test_constant_metric_plots_flat_line(tmp_path):
    run = series("flat", success=np.ones(50), episode_total_time=np.full(50, 3.0))
    drawn = plot_learning_curves([run], "success", tmp_path / "flat.png", window=8)
    _, y = drawn["flat"]
    assert np.allclose(y, 1.0)


def test_rendering_twice_is_idempotent(tmp_path):
    runs = load_runs([TRAIN_CSV], ["a"])
    out1 = tmp_path / "one.png"
    out2 = tmp_path / "two.png"
    plot_learning_curves(runs, "success", out1, window=10)
    plot_learning_curves(runs, "success", out2, window=10)
    assert out1.read_bytes() == out2.read_bytes()


def test_unknown_metric_rejected(tmp_path):
    runs = load_runs([TRAIN_CSV], ["a"])
    with pytest.raises(ValueError):
        plot_learning_curves(runs, "reward", tmp_path / "x.png")


# -- densities --

def test_density_renders_from_fixture(tmp_path):
    runs = load_runs([EVAL_CSV], ["eval"])
    out = tmp_path / "density.png"
    stats = plot_time_density(runs, out)
    assert out.exists() and out.stat().st_size > 0
    mean, bandwidth = stats["eval"]
    assert mean == pytest.approx(float(np.mean(runs[0].columns["episode_total_time"])))
    assert bandwidth > 0


def test_density_two_runs_two_traces(tmp_path):
    runs = load_runs([TRAIN_CSV, EVAL_CSV], ["a", "b"])
    stats = plot_time_density(runs, tmp_path / "two.png")
    assert len(stats) == 2


def test_degenerate_identical_values_get_bandwidth_floor(tmp_path):
    run = series("spike", episode_total_time=np.full(200, 42.0), success=np.zeros(200))
    stats = plot_time_density([run], tmp_path / "spike.png")
    mean, bandwidth = stats["spike"]
    assert mean == pytest.approx(42.0)
    assert bandwidth > 0  # the Silverman spread is zero; the floor applies


def test_silverman_matches_reference_formula():
    rng = np.random.default_rng(0)
    values = rng.normal(10.0, 2.0, 400)
    std = values.std()
    iqr = np.subtract(*np.percentile(values, [75, 25]))
    want = 0.9 * min(std, iqr / 1.34) * 400 ** (-0.2)
    assert silverman_bandwidth(values) == pytest.approx(want)


def test_kde_integrates_to_one():
    rng = np.random.default_rng(1)
    values = rng.normal(0, 1, 500)
    grid = np.linspace(-6, 6, 2001)
    density = gaussian_kde(values, grid, 0.3)
    assert np.trapezoid(density, grid) == pytest.approx(1.0, abs=1e-3)
