"""Recurrent predictors that fill pose and object gaps in a demonstration stream.

Keypoint predictor: given the last two complete frames (six joints each) it
estimates hip, shoulder, elbow and wrist one frame ahead. Inputs are centred
on the older frame's hip and the network outputs a scaled displacement from
the newer frame, so an all-zero network degenerates to a zero-order hold.

Object locator: given the previous object location and the previous and
current end-effector positions it estimates the current object location.
Inputs are centred on the previous end-effector and the output is the scaled
object displacement.

Recurrent state runs along the stream, one step per frame, and is reset at
the start of each stream.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace

import numpy as np

from .metrics import regression_metrics
from .nn import ModelSpec, Network, TrainConfig, TrainingError, fit
from .world import CONFIDENCE_MIN, Demonstration, Detection, Frame, select_object_of_interest

POS_SCALE = 0.5          # meters per normalized input unit
STEP_SCALE = 0.05        # meters per normalized output unit
JUMP_THRESHOLD = 0.3     # a joint moving further than this in one frame is unreliable
HOLD_STEPS = 6           # length of the held-pose sequences added to keypoint training
PRED_JOINTS = ("hip", "shoulder", "elbow", "wrist")
AXES = ("x", "y", "z")


class FillError(ValueError):
    pass


def keypoint_spec(seed: int = 0) -> ModelSpec:
    return ModelSpec.recurrent_mlp(36, (64, 64), (256, 64), 12, seed)


def object_spec(seed: int = 0) -> ModelSpec:
    return ModelSpec.recurrent_mlp(9, (64, 32), (256, 64), 3, seed)


# ------------------------------------------------------------- encodings
def keypoint_features(prev, cur) -> np.ndarray:
    prev = np.asarray(prev, dtype=np.float64).reshape(6, 3)
    cur = np.asarray(cur, dtype=np.float64).reshape(6, 3)
    hip = prev[0]
    return np.concatenate([(prev - hip).ravel(), (cur - hip).ravel()]) / POS_SCALE


def keypoint_decode(out, cur) -> np.ndarray:
    cur = np.asarray(cur, dtype=np.float64).reshape(6, 3)
    return cur[:4] + np.asarray(out).reshape(4, 3) * STEP_SCALE


def object_features(obj_prev, eef_prev, eef_cur) -> np.ndarray:
    c = np.asarray(eef_prev, dtype=np.float64)
    return np.concatenate([np.asarray(obj_prev) - c, np.zeros(3), np.asarray(eef_cur) - c]) / POS_SCALE


def object_decode(out, obj_prev) -> np.ndarray:
    return np.asarray(obj_prev, dtype=np.float64) + np.asarray(out).reshape(3) * STEP_SCALE


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise FillError("non-finite input to predictor")


# ------------------------------------------------------------- single step
def predict_keypoints(model: Network, prev, cur, hidden=None):
    """One-step-ahead estimate of (hip, shoulder, elbow, wrist), shape (4, 3).

    Returns ``(prediction, hidden')`` so callers can stream.
    """
    _check_finite(prev, cur)
    out, hidden = model.forward(keypoint_features(prev, cur), hidden)
    return keypoint_decode(out, cur), hidden


def predict_object_location(model: Network, obj_prev, eef_prev, eef_cur, hidden=None):
    """Current object location from the previous one and the end-effector motion."""
    obj_prev = np.asarray(obj_prev, dtype=np.float64)
    if not np.all(np.isfinite(obj_prev)):
        raise FillError("previous object location is the unknown sentinel; fall back to rule 1")
    _check_finite(eef_prev, eef_cur)
    out, hidden = model.forward(object_features(obj_prev, eef_prev, eef_cur), hidden)
    return object_decode(out, obj_prev), hidden


# ------------------------------------------------------------- datasets
def _pad(seqs_x, seqs_y, seqs_m):
    T = max(len(s) for s in seqs_x)
    n = len(seqs_x)
    X = np.zeros((n, T, seqs_x[0].shape[1]))
    Y = np.zeros((n, T, seqs_y[0].shape[1]))
    M = np.zeros((n, T))
    for i, (x, y, m) in enumerate(zip(seqs_x, seqs_y, seqs_m)):
        X[i, :len(x)], Y[i, :len(y)], M[i, :len(m)] = x, y, m
    return X, Y, M


def _observed_keypoints(demo: Demonstration) -> np.ndarray:
    if any(f.dropped for f in demo.frames):
        raise FillError("training streams must be complete")
    return np.array([f.keypoints for f in demo.frames])


def _sequence(kp):
    x = np.array([keypoint_features(kp[k], kp[k + 1]) for k in range(len(kp) - 2)])
    y = np.array([(kp[k + 2][:4] - kp[k + 1][:4]).ravel() / STEP_SCALE for k in range(len(kp) - 2)])
    return x, y, np.ones(len(kp) - 2)


def keypoint_dataset(demos, hold_steps: int = 0, seed: int = 0):
    """Padded (X, Y, mask): step k sees frames k, k+1 and targets frame k+2.

    ``hold_steps > 0`` adds, per demonstration, one sequence in which the
    demonstrator holds a randomly chosen observed pose, so that a motionless
    arm is represented in training.
    """
    rng = np.random.default_rng(seed)
    xs, ys, ms = [], [], []
    for d in demos:
        kp = _observed_keypoints(d)
        if len(kp) < 3:
            continue
        for seq in [kp] + ([np.repeat(kp[rng.integers(len(kp))][None], hold_steps + 2, axis=0)]
                           if hold_steps > 0 else []):
            x, y, m = _sequence(seq)
            xs.append(x)
            ys.append(y)
            ms.append(m)
    if not xs:
        raise FillError("no usable keypoint sequences")
    return _pad(xs, ys, ms)


def object_dataset(demos):
    """Padded (X, Y, mask); steps where the tracked object changes are masked out."""
    xs, ys, ms = [], [], []
    for d in demos:
        fr = d.frames
        x, y, m = [], [], []
        for k in range(1, len(fr)):
            a, b = fr[k - 1], fr[k]
            valid = a.obj_id >= 0 and a.obj_id == b.obj_id
            obj_prev = a.obj_loc if valid else b.eef
            x.append(object_features(obj_prev, a.eef, b.eef))
            y.append((b.obj_loc - a.obj_loc) / STEP_SCALE if valid else np.zeros(3))
            m.append(1.0 if valid else 0.0)
        xs.append(np.array(x))
        ys.append(np.array(y))
        ms.append(np.array(m))
    return _pad(xs, ys, ms)


# ------------------------------------------------------------- training
@dataclass
class PredictorReport:
    rows: list[dict]
    label_column: str = "joint"

    def to_csv(self) -> str:
        buf = io.StringIO()
        fields = [self.label_column, "axis", "mse", "rmse", "mae", "r2"]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(fields)
        for r in self.rows:
            w.writerow([r["target"], r["axis"]] + ["" if r[k] is None else repr(r[k]) for k in fields[2:]])
        return buf.getvalue()

    def max_rmse(self) -> float:
        return max(r["rmse"] for r in self.rows)


def split_demos(demos, eval_fraction: float = 1 / 7):
    demos = list(demos)
    if len(demos) < 2:
        raise FillError("need at least two demonstrations for a disjoint train/eval split")
    n_eval = max(1, int(round(len(demos) * eval_fraction)))
    return demos[:-n_eval], demos[-n_eval:]


def _report(pred, target, names, label_column="joint") -> PredictorReport:
    rows = []
    for j, name in enumerate(names):
        for a, axis in enumerate(AXES):
            m = regression_metrics(pred[:, j, a], target[:, j, a])
            rows.append({"target": name, "axis": axis, **m})
    return PredictorReport(rows, label_column)


def evaluate_keypoint_model(model: Network, demos) -> PredictorReport:
    """Teacher-forced one-step-ahead errors on complete streams, absolute meters."""
    preds, trues = [], []
    for d in demos:
        kp = _observed_keypoints(d)
        if len(kp) < 3:
            continue
        X, _, _ = keypoint_dataset([d])
        out, _ = model.forward(X)
        preds.append(kp[1:-1, :4] + out[0].reshape(-1, 4, 3) * STEP_SCALE)
        trues.append(kp[2:, :4])
    if not preds:
        raise FillError("no evaluation steps")
    return _report(np.concatenate(preds), np.concatenate(trues), PRED_JOINTS)


def evaluate_object_model(model: Network, demos, regime: str = "all") -> PredictorReport:
    """Teacher-forced object location errors in absolute meters.

    ``regime`` is "all", "grasped" (the object sits at the previous
    end-effector position) or "free".
    """
    if regime not in ("all", "grasped", "free"):
        raise ValueError(f"unknown regime {regime!r}")
    preds, trues = [], []
    for d in demos:
        X, _, M = object_dataset([d])
        out, _ = model.forward(X)
        fr = d.frames
        for k in range(1, len(fr)):
            if not M[0, k - 1]:
                continue
            held = np.linalg.norm(fr[k - 1].obj_loc - fr[k - 1].eef) < 1e-9
            if (regime == "grasped" and not held) or (regime == "free" and held):
                continue
            preds.append(object_decode(out[0, k - 1], fr[k - 1].obj_loc))
            trues.append(fr[k].obj_loc)
    if len(preds) < 2:
        raise FillError("no evaluation steps")
    return _report(np.array(preds)[:, None, :], np.array(trues)[:, None, :], ("object",), "object")


def default_train_config(seed: int = 0) -> TrainConfig:
    return TrainConfig(base_lr=1e-3, max_steps=1500, decay_factor=0.5, decay_interval=600,
                       clip_norm=1.0, batch_size=16, seed=seed)


def train_predictor(kind: str, demos, cfg: TrainConfig | None = None, seed: int = 0,
                    eval_fraction: float = 1 / 7):
    """Train the keypoint or object model; returns ``(model, report, fit_result)``.

    The report covers held-out demonstrations only.
    """
    cfg = cfg or default_train_config(seed)
    train, held = split_demos(demos, eval_fraction)
    if kind == "keypoint":
        net = Network(keypoint_spec(seed))
        X, Y, M = keypoint_dataset(train, hold_steps=HOLD_STEPS, seed=seed)
    elif kind == "object":
        net = Network(object_spec(seed))
        X, Y, M = object_dataset(train)
    else:
        raise ValueError(f"unknown predictor kind {kind!r}")
    if M.sum() < 10:
        raise TrainingError("insufficient training data")
    result = fit(net, X, Y, cfg, mask=M)
    report = evaluate_keypoint_model(net, held) if kind == "keypoint" else evaluate_object_model(net, held)
    return net, report, result


# ------------------------------------------------------------- stream filling
def unreliable_frames(demo: Demonstration) -> np.ndarray:
    """Dropped frames plus frames where any joint jumps more than the threshold."""
    bad = np.array([f.dropped for f in demo.frames])
    last = None
    for t, f in enumerate(demo.frames):
        if f.dropped:
            continue
        if last is not None and np.max(np.linalg.norm(f.keypoints - last, axis=1)) > JUMP_THRESHOLD:
            bad[t] = True
            continue
        last = f.keypoints
    return bad


def _advance_fingers(cur, pred4):
    nxt = np.empty((6, 3))
    nxt[:4] = pred4
    nxt[4:] = cur[4:] + (pred4[3] - cur[3])
    return nxt


def fill_keypoints(demo: Demonstration, model: Network, treat_jumps: bool = True):
    """Replace unreliable keypoint frames; returns ``(keypoints (T,6,3), filled mask)``."""
    bad = unreliable_frames(demo) if treat_jumps else np.array([f.dropped for f in demo.frames])
    if bad[:2].any():
        raise FillError("the first two frames must be complete to bootstrap gap filling")
    kp = [f.keypoints for f in demo.frames]
    hidden = None
    for t in range(2, len(kp)):
        pred, hidden = predict_keypoints(model, kp[t - 2], kp[t - 1], hidden)
        if bad[t]:
            kp[t] = _advance_fingers(kp[t - 1], pred)
    return np.array(kp), bad


def zero_order_hold(demo: Demonstration) -> np.ndarray:
    """Baseline: dropped frames copy the last observed frame."""
    out, last = [], None
    for f in demo.frames:
        if not f.dropped:
            last = f.keypoints
        if last is None:
            raise FillError("the first frame must be complete")
        out.append(last)
    return np.array(out)


def observed_objects(demo: Demonstration):
    """Per-frame (label, location) from the frame's own detections."""
    return [select_object_of_interest(f.detections, f.eef)[:2] for f in demo.frames]


def track_object(demo: Demonstration, model: Network):
    """Object locations with detector gaps filled by the locator.

    A frame is a gap when something was detected but nothing reached the
    confidence bar while the previous frame had a known object; an empty
    detection list means the scene is cleared and is left alone. Returns
    ``(locations, labels, filled)``.
    """
    obs = observed_objects(demo)
    locs = [o[1] for o in obs]
    labels = [o[0] for o in obs]
    filled = np.zeros(len(locs), dtype=bool)
    hidden = None
    for t in range(1, len(locs)):
        prev = locs[t - 1]
        if not np.all(np.isfinite(prev)):
            hidden = None
            continue
        pred, hidden = predict_object_location(model, prev, demo.frames[t - 1].eef,
                                               demo.frames[t].eef, hidden)
        if not np.all(np.isfinite(locs[t])) and demo.frames[t].detections:
            locs[t], labels[t], filled[t] = pred, labels[t - 1], True
    return np.array(locs), labels, filled


def fill_gaps(demo: Demonstration, keypoint_model: Network, object_model: Network | None = None,
              treat_jumps: bool = True) -> Demonstration:
    """Completed copy of ``demo`` with no dropped keypoint frames.

    With an object model, detector gaps gain a synthetic detection at the
    predicted location (confidence exactly at the selection bar) so that
    object-of-interest selection on the output finds it.
    """
    kp, bad = fill_keypoints(demo, keypoint_model, treat_jumps)
    tracked = track_object(demo, object_model) if object_model is not None else None
    frames: list[Frame] = []
    for t, f in enumerate(demo.frames):
        g = replace(f, keypoints=kp[t]) if bad[t] else f
        if tracked is not None and tracked[2][t]:
            loc = tuple(float(v) for v in tracked[0][t])
            g = replace(g, detections=list(g.detections) + [Detection(tracked[1][t], CONFIDENCE_MIN, loc)])
        frames.append(g)
    return Demonstration(frames, demo.dt, dict(demo.metadata))
