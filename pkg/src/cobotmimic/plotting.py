"""Report figures rendered straight to image files (no display needed)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import aggregate  # noqa: E402

METRICS = (("time", "time (s)"), ("jerkiness", "jerkiness (deg)"), ("displacement", "displacement (m)"))


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path


def _methods(records):
    seen = []
    for r in records:
        if r["method"] not in seen:
            seen.append(r["method"])
    return seen


def plot_benchmark(records: list[dict], path) -> Path:
    """Bar chart of per-method means with sample-std error bars, one panel per metric."""
    methods = _methods(records)
    fig, axes = plt.subplots(1, len(METRICS), figsize=(10, 3.2))
    for ax, (key, label) in zip(axes, METRICS):
        stats = [aggregate([r[key] for r in records if r["method"] == m]) for m in methods]
        ax.bar(methods, [s["mean"] for s in stats], yerr=[s["std"] or 0.0 for s in stats],
               capsize=4, color=["tab:blue", "tab:orange", "tab:green"][:len(methods)])
        ax.set_title(label)
        ax.tick_params(axis="x", labelrotation=15)
    fig.tight_layout()
    return _save(fig, path)


def plot_episodes(records: list[dict], path) -> Path:
    """Per-episode jerkiness and displacement for every method."""
    methods = _methods(records)
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.2))
    for ax, key, label in ((axes[0], "jerkiness", "jerkiness (deg)"),
                           (axes[1], "displacement", "displacement (m)")):
        for m in methods:
            rows = [r for r in records if r["method"] == m]
            ax.plot([r["seed"] for r in rows], [r[key] for r in rows], "o-", label=m)
        ax.set_xlabel("episode seed")
        ax.set_ylabel(label)
        ax.set_yscale("log")
    axes[0].legend()
    fig.tight_layout()
    return _save(fig, path)


def plot_airl_history(rows: list[dict], path) -> Path:
    """Discriminator accuracy, mean return and per-iteration KL over training."""
    it = np.array([float(r["iteration"]) for r in rows])
    fig, axes = plt.subplots(1, 3, figsize=(10, 3))
    for ax, key in zip(axes, ("disc_accuracy", "mean_return", "mean_kl")):
        ax.plot(it, [float(r[key]) for r in rows])
        ax.set_xlabel("iteration")
        ax.set_title(key)
    fig.tight_layout()
    return _save(fig, path)


def plot_path(points, path, obstacles=()) -> Path:
    """Top-down and side views of a planned waypoint path with obstacle outlines."""
    pts = np.asarray(points, dtype=np.float64)
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.5))
    for ax, (i, j, name) in zip(axes, ((0, 1, "x-y"), (0, 2, "x-z"))):
        for box in obstacles:
            lo, hi = np.asarray(box.lo), np.asarray(box.hi)
            ax.add_patch(plt.Rectangle((lo[i], lo[j]), hi[i] - lo[i], hi[j] - lo[j], color="0.7"))
        ax.plot(pts[:, i], pts[:, j], ".-")
        ax.plot(pts[0, i], pts[0, j], "go")
        ax.plot(pts[-1, i], pts[-1, j], "r*")
        ax.set_title(name)
        ax.set_aspect("equal", adjustable="datalim")
    fig.tight_layout()
    return _save(fig, path)
