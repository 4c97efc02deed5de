"""Human-to-cobot motion retargeting.

Chain for one wrist target: a network reconstructs hip, shoulder and elbow
from the wrist; geometric extraction turns the four keypoints into human arm
angles; a per-joint affine map gives initial cobot angles; Adam through a
learned restricted-FK model then refines them against

    ||fk(q) - target|| + alpha * ||q - q0||

until the position error drops below a threshold. Joints outside the four
mapped ones stay at the robot's neutral pose.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .arms import (ArmKeypoints, KinematicsError, RobotSpec, embed, joint_angles_from_keypoints,
                   restricted_fk_oracle)
from .metrics import regression_metrics
from .nn import ModelSpec, Network, TrainConfig, fit, lr_at

AXES = ("x", "y", "z")


class IkError(RuntimeError):
    pass


# ---------------------------------------------------------------- human IK
def human_ik_spec(seed: int = 0) -> ModelSpec:
    return ModelSpec.mlp(3, (256, 64, 32), 9, seed)


@dataclass
class Normalizer:
    """Affine feature scaling: ``(x - center) / scale``."""
    center: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, data, min_scale: float = 1e-6) -> "Normalizer":
        data = np.asarray(data, dtype=np.float64)
        return cls(data.mean(axis=0), np.maximum(data.std(axis=0), min_scale))

    def encode(self, x):
        return (np.asarray(x, dtype=np.float64) - self.center) / self.scale

    def decode(self, z):
        return np.asarray(z, dtype=np.float64) * self.scale + self.center


@dataclass
class HumanIkResult:
    hip: np.ndarray
    shoulder: np.ndarray
    elbow: np.ndarray
    extrapolated: bool = False


@dataclass
class HumanIkModel:
    net: Network
    inp: Normalizer
    out: Normalizer
    envelope_lo: np.ndarray
    envelope_hi: np.ndarray

    def __call__(self, wrist) -> HumanIkResult:
        return human_ik(self, wrist)

    def extras(self) -> dict:
        return {"in_center": self.inp.center, "in_scale": self.inp.scale,
                "out_center": self.out.center, "out_scale": self.out.scale,
                "envelope_lo": self.envelope_lo, "envelope_hi": self.envelope_hi}

    @classmethod
    def from_extras(cls, net: Network, ex: dict) -> "HumanIkModel":
        return cls(net, Normalizer(ex["in_center"], ex["in_scale"]),
                   Normalizer(ex["out_center"], ex["out_scale"]), ex["envelope_lo"], ex["envelope_hi"])


def human_ik(model: HumanIkModel, wrist) -> HumanIkResult:
    """Hip, shoulder and elbow for a wrist position; flags wrists outside the training box."""
    wrist = np.asarray(wrist, dtype=np.float64)
    y = model.out.decode(model.net.predict(model.inp.encode(wrist)))
    outside = bool(np.any(wrist < model.envelope_lo) or np.any(wrist > model.envelope_hi))
    return HumanIkResult(y[0:3], y[3:6], y[6:9], outside)


def human_ik_pairs(demos):
    """(wrist, [hip, shoulder, elbow]) arrays from complete keypoint frames."""
    w, t = [], []
    for d in demos:
        for f in d.frames:
            if f.keypoints is not None:
                w.append(f.keypoints[3])
                t.append(f.keypoints[:3].ravel())
    if len(w) < 2:
        raise ValueError("need complete keypoint frames to train the human IK model")
    return np.array(w), np.array(t)


def train_human_ik(wrists, targets, cfg: TrainConfig | None = None, seed: int = 0,
                   envelope_margin: float = 0.02) -> HumanIkModel:
    cfg = cfg or TrainConfig(base_lr=1e-3, max_steps=3000, decay_factor=0.5, decay_interval=1000,
                             batch_size=128, seed=seed)
    wrists = np.asarray(wrists, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    inp, out = Normalizer.fit(wrists, 1e-3), Normalizer.fit(targets, 1e-3)
    net = Network(human_ik_spec(seed))
    fit(net, inp.encode(wrists), out.encode(targets), cfg)
    return HumanIkModel(net, inp, out, wrists.min(axis=0) - envelope_margin,
                        wrists.max(axis=0) + envelope_margin)


def human_ik_report(model: HumanIkModel, wrists, targets) -> list[dict]:
    pred = model.out.decode(model.net.predict(model.inp.encode(wrists)))
    rows = []
    for j, name in enumerate(("hip", "shoulder", "elbow")):
        for a, axis in enumerate(AXES):
            k = 3 * j + a
            rows.append({"joint": name, "axis": axis, **regression_metrics(pred[:, k], targets[:, k])})
    return rows


# ---------------------------------------------------------------- symbolic map
@dataclass(frozen=True)
class JointLink:
    human_angle_index: int
    cobot_joint_index: int
    scale: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        if self.scale == 0:
            raise ValueError("scale must be nonzero")


@dataclass(frozen=True)
class SymbolicJointMap:
    links: tuple[JointLink, ...]

    def check(self, robot: RobotSpec) -> None:
        if tuple(l.cobot_joint_index for l in self.links) != robot.mapped_indices:
            raise ValueError(f"map targets {[l.cobot_joint_index for l in self.links]}, "
                             f"robot maps {list(robot.mapped_indices)}")

    @classmethod
    def default(cls, robot: RobotSpec, human_rest=(0.0, 0.0, 0.0, 0.0)) -> "SymbolicJointMap":
        """Unit scales; offsets put the human rest pose on the cobot neutral pose."""
        return cls(tuple(JointLink(i, c, 1.0, robot.neutral_pose[c] - human_rest[i])
                         for i, c in enumerate(robot.mapped_indices)))

    def to_dict(self) -> list[dict]:
        return [vars(l).copy() for l in self.links]

    @classmethod
    def from_dict(cls, items) -> "SymbolicJointMap":
        return cls(tuple(JointLink(int(d["human_angle_index"]), int(d["cobot_joint_index"]),
                                   float(d.get("scale", 1.0)), float(d.get("offset", 0.0)))
                         for d in items))


def symbolic_map(jmap: SymbolicJointMap, human_angles, robot: RobotSpec | None = None) -> np.ndarray:
    """Per-joint affine map to the four mapped cobot joints, clamped to limits when a robot is given."""
    h = np.asarray(human_angles, dtype=np.float64)
    q = np.array([l.scale * h[l.human_angle_index] + l.offset for l in jmap.links])
    if robot is not None:
        lo, hi = robot.limits
        idx = [l.cobot_joint_index for l in jmap.links]
        q = np.clip(q, lo[idx], hi[idx])
    return q


# ---------------------------------------------------------------- restricted FK
def restricted_fk_spec(seed: int = 0) -> ModelSpec:
    return ModelSpec.mlp(4, (256, 64), 3, seed)


class FkModel:
    """Learned map from the four mapped joint angles to the end-effector position.

    Angles are scaled to [-1, 1] over the mapped joint limits and outputs are
    de-standardized. ``value_and_grad`` gives positions and the Jacobian
    product needed by the refiner without touching parameter gradients.
    """

    def __init__(self, net: Network, lo, hi, out_center, out_scale):
        self.net = net
        self.lo = np.asarray(lo, dtype=np.float64)
        self.hi = np.asarray(hi, dtype=np.float64)
        self.out = Normalizer(np.asarray(out_center, dtype=np.float64),
                              np.asarray(out_scale, dtype=np.float64))
        views = net._views(net.params)
        self._w = [(w.copy(), b.copy()) for w, b in views]
        self._relu = [l.activation == "relu" for l in net.spec.layers]

    def encode(self, q):
        return 2.0 * (np.asarray(q, dtype=np.float64) - self.lo) / (self.hi - self.lo) - 1.0

    def __call__(self, q) -> np.ndarray:
        return self.out.decode(self.net.predict(self.encode(q)))

    def value_and_grad(self, q, upstream_fn):
        """Return ``(positions, upstream, dq)`` for batched ``q`` of shape (n, 4).

        ``upstream_fn(positions)`` returns dL/dposition of the same shape.
        """
        a = self.encode(q)
        acts, masks = [a], []
        for (w, b), relu in zip(self._w, self._relu):
            z = a @ w + b
            m = z > 0 if relu else None
            a = np.where(m, z, 0.0) if relu else z
            masks.append(m)
            acts.append(a)
        pos = self.out.decode(a)
        up = upstream_fn(pos)
        d = up * self.out.scale
        for (w, _), m in zip(reversed(self._w), reversed(masks)):
            if m is not None:
                d = d * m
            d = d @ w.T
        return pos, up, d * (2.0 / (self.hi - self.lo))

    def extras(self) -> dict:
        return {"lo": self.lo, "hi": self.hi, "out_center": self.out.center, "out_scale": self.out.scale}

    @classmethod
    def from_extras(cls, net: Network, ex: dict) -> "FkModel":
        return cls(net, ex["lo"], ex["hi"], ex["out_center"], ex["out_scale"])


@dataclass
class FkTrainResult:
    model: FkModel
    report: list[dict]
    losses: list[float] = field(default_factory=list)

    def max_rmse(self) -> float:
        return max(r["rmse"] for r in self.report)


def default_fk_train_config(seed: int = 0) -> TrainConfig:
    return TrainConfig(base_lr=1e-3, max_steps=12000, decay_factor=0.5, decay_interval=2000,
                       batch_size=256, seed=seed)


def train_restricted_fk(robot: RobotSpec, n_samples: int = 20000, cfg: TrainConfig | None = None,
                        seed: int = 0, eval_fraction: float = 0.1) -> FkTrainResult:
    """Fit the learned FK on angles drawn uniformly within the mapped limits."""
    if n_samples < 1000:
        raise ValueError("n_samples must be at least 1000")
    cfg = cfg or default_fk_train_config(seed)
    rng = np.random.default_rng(seed)
    lo, hi = robot.mapped_limits
    q = rng.uniform(lo, hi, size=(n_samples, 4))
    p = restricted_fk_oracle(robot, q)
    n_eval = int(n_samples * eval_fraction)
    qt, pt, qe, pe = q[n_eval:], p[n_eval:], q[:n_eval], p[:n_eval]
    out = Normalizer.fit(pt)
    net = Network(restricted_fk_spec(seed))
    enc = 2.0 * (qt - lo) / (hi - lo) - 1.0
    res = fit(net, enc, out.encode(pt), cfg, log_every=100)
    model = FkModel(net, lo, hi, out.center, out.scale)
    pred = model(qe)
    report = [{"axis": a, **regression_metrics(pred[:, i], pe[:, i])} for i, a in enumerate(AXES)]
    return FkTrainResult(model, report, res.losses)


# ---------------------------------------------------------------- refinement
@dataclass(frozen=True)
class IkOptConfig:
    alpha: float = 0.0005
    lr: float = 0.01
    max_iters: int = 10000
    decay_factor: float = 0.9
    decay_interval: int = 1000
    pos_threshold: float = 0.01
    clip_norm: float = 1.0
    squared_position: bool = False

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        for name in ("lr", "max_iters", "decay_factor", "decay_interval", "pos_threshold", "clip_norm"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def schedule(self) -> TrainConfig:
        return TrainConfig(base_lr=self.lr, max_steps=self.max_iters, decay_factor=self.decay_factor,
                           decay_interval=self.decay_interval)


@dataclass
class IkResult:
    q: np.ndarray
    final_error: float
    iters: int
    converged: bool
    losses: list[float] = field(default_factory=list)


def _penalty_grad(q, q0):
    d = q - q0
    n = np.linalg.norm(d, axis=-1, keepdims=True)
    return np.where(n > 0, d / np.where(n > 0, n, 1.0), 0.0), n[..., 0]


def refine_batch(fk: FkModel, q0, targets, cfg: IkOptConfig = IkOptConfig(),
                 record_loss: bool = False) -> list[IkResult]:
    """Refine many independent (q0, target) pairs in lockstep.

    Each row is frozen as soon as its position error is below the threshold,
    so rows behave like separate runs; Adam moments are per row.
    """
    q0 = np.atleast_2d(np.asarray(q0, dtype=np.float64)).copy()
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if q0.shape[0] != targets.shape[0]:
        raise ValueError("q0 and targets must have the same number of rows")
    if not np.all(np.isfinite(targets)):
        raise IkError("target must be finite")
    lo, hi = fk.lo, fk.hi
    if np.any(q0 < lo - 1e-12) or np.any(q0 > hi + 1e-12):
        raise IkError("q0 outside joint limits")
    n = q0.shape[0]
    q = q0.copy()
    m1 = np.zeros_like(q)
    m2 = np.zeros_like(q)
    steps = np.zeros(n, dtype=int)
    active = np.ones(n, dtype=bool)
    err = np.full(n, np.inf)
    losses = [[] for _ in range(n)]
    sched = cfg.schedule()
    b1, b2, eps = 0.9, 0.999, 1e-8

    def upstream(pos, tgt):
        diff = pos - tgt
        if cfg.squared_position:
            return 2.0 * diff
        nrm = np.linalg.norm(diff, axis=1, keepdims=True)
        return diff / np.maximum(nrm, 1e-300)

    it = 0
    while True:
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        pos, _, g_pos = fk.value_and_grad(q[idx], lambda p: upstream(p, targets[idx]))
        e = np.linalg.norm(pos - targets[idx], axis=1)
        err[idx] = e
        g_pen, pen = _penalty_grad(q[idx], q0[idx])
        pos_term = e * e if cfg.squared_position else e
        loss = pos_term + cfg.alpha * pen
        if not np.all(np.isfinite(loss)):
            raise IkError(f"non-finite loss at iteration {it}")
        if record_loss:
            for k, i in enumerate(idx):
                losses[i].append(float(loss[k]))
        done = e < cfg.pos_threshold
        if it >= cfg.max_iters:
            done[:] = True
        active[idx[done]] = False
        keep = ~done
        if not keep.any():
            break
        rows = idx[keep]
        g = g_pos[keep] + cfg.alpha * g_pen[keep]
        norms = np.linalg.norm(g, axis=1, keepdims=True)
        g = g * np.minimum(1.0, cfg.clip_norm / np.maximum(norms, 1e-300))
        lr = lr_at(it, sched)
        m1[rows] = b1 * m1[rows] + (1 - b1) * g
        m2[rows] = b2 * m2[rows] + (1 - b2) * g * g
        t = it + 1
        mhat = m1[rows] / (1 - b1 ** t)
        vhat = m2[rows] / (1 - b2 ** t)
        q[rows] = np.clip(q[rows] - lr * mhat / (np.sqrt(vhat) + eps), lo, hi)
        steps[rows] += 1
        it += 1
    return [IkResult(q[i].copy(), float(err[i]), int(steps[i]), bool(err[i] < cfg.pos_threshold), losses[i])
            for i in range(n)]


def cobot_ik_refine(fk: FkModel, q0, target, cfg: IkOptConfig = IkOptConfig(),
                    record_loss: bool = False) -> IkResult:
    """Penalized position IK through the learned FK model for one target."""
    return refine_batch(fk, np.asarray(q0)[None], np.asarray(target)[None], cfg, record_loss)[0]


# ---------------------------------------------------------------- pipeline
@dataclass
class Retargeter:
    human: HumanIkModel
    jmap: SymbolicJointMap
    fk: FkModel
    robot: RobotSpec

    def __post_init__(self):
        self.jmap.check(self.robot)


@dataclass
class FrameResult:
    q_full: np.ndarray
    q_mapped: np.ndarray
    q_initial: np.ndarray
    human_angles: np.ndarray
    ik: IkResult
    extrapolated: bool

    @property
    def converged(self) -> bool:
        return self.ik.converged


def human_angles_for(pipe: Retargeter, wrist) -> tuple[np.ndarray, bool]:
    r = human_ik(pipe.human, wrist)
    k = ArmKeypoints(r.hip, r.shoulder, r.elbow, np.asarray(wrist, dtype=np.float64))
    try:
        return joint_angles_from_keypoints(k), r.extrapolated
    except KinematicsError:
        return np.zeros(4), True


def retarget_frame(pipe: Retargeter, wrist_target, cfg: IkOptConfig = IkOptConfig(),
                   q0=None) -> FrameResult:
    """Full cobot joint vector reaching ``wrist_target``; ``q0`` overrides the mapped start."""
    h, extrap = human_angles_for(pipe, wrist_target)
    if q0 is None:
        q0 = symbolic_map(pipe.jmap, h, pipe.robot)
    else:
        lo, hi = pipe.robot.mapped_limits
        q0 = np.clip(np.asarray(q0, dtype=np.float64), lo, hi)
    ik = cobot_ik_refine(pipe.fk, q0, wrist_target, cfg)
    return FrameResult(embed(pipe.robot, ik.q), ik.q, q0, h, ik, extrap)


@dataclass
class TrajectoryResult:
    frames: list[FrameResult]
    dt: float = 0.1

    @property
    def joints(self) -> np.ndarray:
        return np.array([f.q_full for f in self.frames])

    @property
    def converged(self) -> np.ndarray:
        return np.array([f.converged for f in self.frames])


def retarget_trajectory(pipe: Retargeter, eef_path, cfg: IkOptConfig = IkOptConfig(),
                        warm_start: bool = True, dt: float = 0.1) -> TrajectoryResult:
    """Retarget a whole path; with ``warm_start`` each frame starts from the previous
    solution shifted by the change in symbolically mapped human angles."""
    path = np.asarray(eef_path, dtype=np.float64)
    if path.ndim != 2 or path.shape[0] < 2:
        raise ValueError("path needs at least two points")
    frames: list[FrameResult] = []
    prev_sym = None
    for p in path:
        if warm_start and frames:
            h, _ = human_angles_for(pipe, p)
            sym = symbolic_map(pipe.jmap, h, pipe.robot)
            fr = retarget_frame(pipe, p, cfg, q0=frames[-1].q_mapped + (sym - prev_sym))
            prev_sym = sym
        else:
            fr = retarget_frame(pipe, p, cfg)
            prev_sym = symbolic_map(pipe.jmap, fr.human_angles, pipe.robot)
        frames.append(fr)
    return TrajectoryResult(frames, dt)


def retarget_records(traj: TrajectoryResult) -> list[dict]:
    """JSON-ready per-frame records."""
    return [{"frame": i, "q_full": [float(v) for v in f.q_full], "converged": f.converged,
             "final_error": f.ik.final_error, "iters": f.ik.iters}
            for i, f in enumerate(traj.frames)]


def retarget_summary(traj: TrajectoryResult) -> dict:
    errs = np.array([f.ik.final_error for f in traj.frames])
    iters = np.array([f.ik.iters for f in traj.frames])
    return {"frames": len(traj.frames), "convergence_rate": float(traj.converged.mean()),
            "mean_final_error": float(errs.mean()), "max_final_error": float(errs.max()),
            "mean_iters": float(iters.mean()), "max_iters": int(iters.max())}

