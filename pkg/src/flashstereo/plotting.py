"""Report figures. Uses the object-oriented matplotlib API (no pyplot state)."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.figure import Figure

_SAVE = {"dpi": 120, "metadata": {"Software": None}}


def _new(width=7.0, height=3.5, **kw):
    fig = Figure(figsize=(width, height), layout="constrained")
    return fig, fig.add_subplot(**kw)


def plot_count_series(path: str | Path, unfiltered: np.ndarray, filtered: np.ndarray | None = None,
                      truth: np.ndarray | None = None, fps: float = 30.0, title: str = "") -> Path:
    """Per-frame detection counts before/after classification."""
    fig, ax = _new()
    t = np.arange(len(unfiltered)) / fps
    ax.plot(t, unfiltered, color="k", lw=0.7, label="background subtraction only")
    if filtered is not None:
        ax.plot(t, filtered, color="tab:orange", lw=0.9, label="classifier filtered")
    if truth is not None:
        ax.plot(t, truth, color="tab:blue", lw=0.7, ls="--", label="ground truth")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("detections per frame")
    ax.set_title(title)
    ax.legend(loc="upper right", fontsize=8, frameon=False)
    fig.savefig(path, **_SAVE)
    return Path(path)


def plot_lag_histogram(path: str | Path, histogram: dict, delta_k: int | None = None) -> Path:
    fig, ax = _new(5.0, 3.0)
    if histogram:
        lags = np.array(sorted(int(k) for k in histogram))
        counts = np.array([histogram[k] if k in histogram else histogram[str(k)] for k in lags])
        ax.bar(lags, counts, width=max(1.0, 0.01 * (np.ptp(lags) + 1)), color="0.3")
    if delta_k is not None:
        ax.axvline(delta_k, color="tab:red", lw=1, label=f"modal lag {delta_k}")
        ax.legend(frameon=False, fontsize=8)
    ax.set_xlabel("lag (frames)")
    ax.set_ylabel("RANSAC windows")
    fig.savefig(path, **_SAVE)
    return Path(path)


def plot_flashes_3d(path: str | Path, points: np.ndarray, labels: np.ndarray | None = None,
                    camera2: np.ndarray | None = None) -> Path:
    """3D scatter of reconstructed flashes, colored by trajectory when given."""
    fig = Figure(figsize=(6.0, 5.0), layout="constrained")
    ax = fig.add_subplot(projection="3d")
    pts = np.asarray(points).reshape(-1, 3)
    if len(pts):
        c = labels if labels is not None else pts[:, 2]
        ax.scatter(pts[:, 0], pts[:, 1], pts[:, 2], c=c, s=3, cmap="tab20" if labels is not None else "viridis", depthshade=False)
    ax.scatter([0], [0], [0], marker="^", color="k", s=30)
    if camera2 is not None:
        ax.scatter(*[[v] for v in camera2], marker="^", color="tab:red", s=30)
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_zlabel("z (m)")
    fig.savefig(path, **_SAVE)
    return Path(path)


def plot_residuals(path: str | Path, residuals: np.ndarray) -> Path:
    fig, ax = _new(5.0, 3.0)
    r = np.abs(np.asarray(residuals))
    if len(r):
        ax.hist(r, bins=50, color="0.3")
    ax.set_xlabel("|coplanarity residual|")
    ax.set_ylabel("pairs")
    fig.savefig(path, **_SAVE)
    return Path(path)
