"""Trajectory and regression metrics used by the benchmarks.

Jerkiness here is the summed absolute joint movement per 100 ms sample, in
degrees; it is a smoothness proxy rather than a third derivative.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SAMPLE_DT = 0.1


class MetricError(ValueError):
    pass


@dataclass
class JointTrajectory:
    frames: np.ndarray          # (T, dof) radians
    dt: float = SAMPLE_DT

    def __post_init__(self):
        self.frames = np.atleast_2d(np.asarray(self.frames, dtype=np.float64))
        if self.frames.ndim != 2:
            raise MetricError("frames must be a (time, joints) array")
        if not self.dt > 0:
            raise MetricError("dt must be positive")

    def __len__(self):
        return self.frames.shape[0]


def resample(traj: JointTrajectory, dt: float = SAMPLE_DT) -> JointTrajectory:
    """Linear resampling onto a uniform ``dt`` grid starting at the first frame."""
    if math.isclose(traj.dt, dt, rel_tol=0, abs_tol=1e-12):
        return traj
    t_old = np.arange(len(traj)) * traj.dt
    t_new = np.arange(0.0, t_old[-1] + 1e-12, dt)
    cols = [np.interp(t_new, t_old, traj.frames[:, j]) for j in range(traj.frames.shape[1])]
    return JointTrajectory(np.stack(cols, axis=1), dt)


def jerkiness(traj: JointTrajectory) -> float:
    """Sum over samples and joints of |delta angle|, in degrees."""
    if len(traj) < 2:
        raise MetricError("jerkiness needs at least two frames")
    traj = resample(traj)
    return float(np.degrees(np.abs(np.diff(traj.frames, axis=0)).sum()))


def displacement(eef_path) -> float:
    p = np.asarray(eef_path, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] < 2:
        raise MetricError("displacement needs at least two points")
    return float(np.linalg.norm(np.diff(p, axis=0), axis=1).sum())


def task_time(traj) -> float:
    n = len(traj)
    if n == 0:
        raise MetricError("empty trajectory")
    return (n - 1) * traj.dt


def regression_metrics(pred, target) -> dict:
    """mse, rmse, mae and r2 (None when the target has no variance)."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    target = np.asarray(target, dtype=np.float64).ravel()
    if pred.shape != target.shape:
        raise MetricError(f"length mismatch {pred.shape} vs {target.shape}")
    if pred.size < 2:
        raise MetricError("need at least two values")
    err = pred - target
    mse = float(np.mean(err * err))
    ss_tot = float(np.sum((target - target.mean()) ** 2))
    r2 = None if ss_tot == 0.0 else 1.0 - float(np.sum(err * err)) / ss_tot
    return {"mse": mse, "rmse": math.sqrt(mse), "mae": float(np.mean(np.abs(err))), "r2": r2}


def aggregate(values) -> dict:
    """Mean, sample std (n-1; None for a single value) and count."""
    v = np.asarray(list(values), dtype=np.float64)
    if v.size == 0:
        raise MetricError("nothing to aggregate")
    std = float(np.std(v, ddof=1)) if v.size > 1 else None
    return {"mean": float(v.mean()), "std": std, "n": int(v.size)}


@dataclass
class MetricReport:
    method: str
    avg_time_s: dict
    avg_jerkiness_deg: dict
    avg_displacement_m: dict

    @classmethod
    def from_episodes(cls, method: str, times, jerks, disps) -> "MetricReport":
        return cls(method, aggregate(times), aggregate(jerks), aggregate(disps))

    def row(self) -> dict:
        def fmt(a):
            return f"{a['mean']:.2f}" if a["std"] is None else f"{a['mean']:.2f} ± {a['std']:.2f}"
        return {"method": self.method, "avg_time": fmt(self.avg_time_s),
                "avg_jerkiness": fmt(self.avg_jerkiness_deg),
                "avg_displacement": fmt(self.avg_displacement_m)}


from .irl import LBA_TOLERANCE, evaluate_lba  # noqa: E402  (re-exported alongside the other criteria)
