"""Figure rendering: smoothed learning curves and episode-time densities."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .io import RunSeries

CURVE_METRICS = {
    "success": ("Success rate", "success"),
    "episode_total_time": ("Episode total time (s)", "episode_total_time"),
}


def rolling_mean(values, window: int) -> np.ndarray:
    """Trailing-window mean; window is clamped to the series length."""
    if window < 1:
        raise ValueError("window must be >= 1")
    window = min(window, len(values))
    kernel = np.full(window, 1.0 / window)
    return np.convolve(values, kernel, mode="valid")


def plot_learning_curves(runs, metric, out, window=500):
    """One smoothed line per run; returns the plotted (x, y) series per label."""
    if not runs:
        raise ValueError("need at least one run")
    if metric not in CURVE_METRICS:
        raise ValueError(f"metric must be one of {sorted(CURVE_METRICS)}")
    ylabel, column = CURVE_METRICS[metric]
    fig, ax = plt.subplots(figsize=(6, 4))
    series = {}
    for run in runs:
        values = run.columns[column]
        smoothed = rolling_mean(values, window)
        x = run.columns["episode"][len(values) - len(smoothed):]
        ax.plot(x, smoothed, label=run.label, linewidth=1.4)
        series[run.label] = (x, smoothed)
    ax.set_xlabel("Episode")
    ax.set_ylabel(ylabel)
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return series


def silverman_bandwidth(values) -> float:
    """Silverman's rule with a floor so degenerate samples stay plottable."""
    n = len(values)
    std = float(np.std(values))
    q75, q25 = np.percentile(values, [75, 25])
    iqr = q75 - q25
    spread = min(std, iqr / 1.34) if iqr > 0 else std
    bandwidth = 0.9 * spread * n ** (-1 / 5) if spread > 0 else 0.0
    floor = 1e-3 * max(1.0, abs(float(np.mean(values))))
    return max(bandwidth, floor)


def gaussian_kde(values, grid, bandwidth) -> np.ndarray:
    z = (grid[:, None] - values[None, :]) / bandwidth
    return np.exp(-0.5 * z * z).sum(axis=1) / (len(values) * bandwidth * np.sqrt(2 * np.pi))


def plot_time_density(runs, out, bandwidth=None):
    """Kernel-density estimate of episode_total_time per run, with a vertical
    marker at each run's mean; returns {label: (mean, bandwidth)}."""
    if not runs:
        raise ValueError("need at least one run")
    fig, ax = plt.subplots(figsize=(6, 4))
    stats = {}
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for idx, run in enumerate(runs):
        values = run.columns["episode_total_time"]
        bw = bandwidth if bandwidth is not None else silverman_bandwidth(values)
        lo = values.min() - 3 * bw
        hi = values.max() + 3 * bw
        grid = np.linspace(lo, hi, 512)
        density = gaussian_kde(values, grid, bw)
        color = colors[idx % len(colors)]
        ax.plot(grid, density, label=run.label, color=color, linewidth=1.4)
        ax.fill_between(grid, density, alpha=0.15, color=color)
        mean = float(np.mean(values))
        ax.axvline(mean, color=color, linestyle="--", linewidth=1.0)
        stats[run.label] = (mean, bw)
    ax.set_xlabel("Episode total time (s)")
    ax.set_ylabel("Density")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return stats
