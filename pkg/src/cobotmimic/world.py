"""Synthetic stand-in for the RGB-D perception stack.

A scripted expert sorts onions (or pours bottles) on a conveyor. Its wrist
path is turned into human arm keypoints, objects into camera detections, and
both are corrupted with noise and dropout the way a real detector would be.

World frame: x forward from the demonstrator's hip toward the conveyor, y to
the left, z up; meters. The hip sits at the origin, which is also the cobot
base, so demonstrations and robot share one frame.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .arms import ArmKeypoints, HumanArm, KinematicsError, human_arm_fk, human_arm_ik

NEG_INF = float("-inf")
SENTINEL = np.full(3, NEG_INF)
DEMO_SCHEMA = "cobotmimic-demo"
DEMO_VERSION = 1

SORTING_LABELS = ("blemished", "unblemished", "unknown")
POURING_LABELS = ("red", "blue", "unknown")


class GenerationError(RuntimeError):
    pass


# ------------------------------------------------------------------- camera
@dataclass(frozen=True)
class CameraModel:
    fx: float = 615.0
    fy: float = 615.0
    cx: float = 320.0
    cy: float = 240.0
    # world axis receiving camera axis i; default X->Y, Y->Z, Z->X
    axis_map: tuple[int, int, int] = (1, 2, 0)
    translation: tuple[float, float, float] = (-0.75, -0.10, 0.20)

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if sorted(self.axis_map) != [0, 1, 2]:
            raise ValueError("axis_map must be a permutation of (0, 1, 2)")

    @property
    def permutation(self) -> np.ndarray:
        P = np.zeros((3, 3))
        for cam_axis, world_axis in enumerate(self.axis_map):
            P[world_axis, cam_axis] = 1.0
        return P


def pixel_to_camera(x: float, y: float, z_mm: float, cam: CameraModel,
                    literal: bool = False) -> np.ndarray:
    """Back-project a pixel with depth (millimeters) to camera coordinates in meters.

    ``literal=True`` reproduces the printed formula in which X and Y are scaled
    by the raw millimeter depth while Z is converted to meters.
    """
    if not z_mm > 0:
        raise ValueError(f"invalid depth {z_mm!r}; must be > 0")
    Z = z_mm / 1000.0
    scale = z_mm if literal else Z
    return np.array([(x - cam.cx) * scale / cam.fx, (y - cam.cy) * scale / cam.fy, Z])


def camera_to_world(p_cam, cam: CameraModel) -> np.ndarray:
    return cam.permutation @ np.asarray(p_cam, dtype=np.float64) + np.asarray(cam.translation)


def world_to_pixel(p_world, cam: CameraModel) -> tuple[float, float, float]:
    pc = cam.permutation.T @ (np.asarray(p_world, dtype=np.float64) - np.asarray(cam.translation))
    if not pc[2] > 0:
        raise ValueError("point is behind the camera")
    return (cam.cx + cam.fx * pc[0] / pc[2], cam.cy + cam.fy * pc[1] / pc[2], 1000.0 * pc[2])


# --------------------------------------------------------------- detections
@dataclass(frozen=True)
class Detection:
    label: str
    confidence: float
    centroid_3d: tuple[float, float, float]

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must be in [0, 1]")


CONFIDENCE_MIN = 0.5
NEAR_RADIUS = 0.20


def select_object_of_interest(detections, eef) -> tuple[str, np.ndarray, int]:
    """Apply the three object-of-interest rules.

    Returns ``(label, location, rule)`` where ``rule`` is 1, 2 or 3. Rule 1: no
    detection reaches confidence 0.5 -> unknown at minus infinity. Rule 2: a
    qualifying detection closer than 0.20 m to the end-effector (nearest wins).
    Rule 3: the qualifying detection with the lowest Y.
    """
    eef = np.asarray(eef, dtype=np.float64)
    ordered = sorted(detections, key=lambda d: d.centroid_3d[1])
    ok = [d for d in ordered if d.confidence >= CONFIDENCE_MIN]
    if not ok:
        return "unknown", SENTINEL.copy(), 1
    dists = [float(np.linalg.norm(np.asarray(d.centroid_3d) - eef)) for d in ok]
    near = [(dist, i) for i, dist in enumerate(dists) if dist < NEAR_RADIUS]
    if near:
        d = ok[min(near)[1]]
        return d.label, np.array(d.centroid_3d, dtype=np.float64), 2
    return ok[0].label, np.array(ok[0].centroid_3d, dtype=np.float64), 3


# ------------------------------------------------------------------- tasks
@dataclass(frozen=True)
class TaskConfig:
    name: str = "sorting"
    n_objects: int = 2
    max_step: float = 0.05
    grasp_radius: float = 0.012
    release_radius: float = 0.012
    home: tuple[float, float, float] = (0.30, -0.22, 0.25)
    conveyor_lo: tuple[float, float, float] = (0.30, -0.30, 0.10)
    conveyor_hi: tuple[float, float, float] = (0.42, 0.02, 0.10)
    min_separation: float = 0.08
    bounds_lo: tuple[float, float, float] = (0.05, -0.60, -0.05)
    bounds_hi: tuple[float, float, float] = (0.60, 0.40, 0.55)
    # sorting sites
    bin: tuple[float, float, float] = (0.28, -0.40, 0.06)
    corner: tuple[float, float, float] = (0.38, 0.06, 0.12)
    inspect: tuple[float, float, float] = (0.32, -0.16, 0.30)
    blemished_prob: float = 0.5
    visible_blemish_prob: float = 0.5
    # pouring sites
    container_blue: tuple[float, float, float] = (0.38, 0.06, 0.18)
    container_black: tuple[float, float, float] = (0.38, -0.34, 0.18)
    frame_budget: tuple[int, int] = (25, 35)
    dt: float = 0.1

    def __post_init__(self):
        if self.name not in ("sorting", "pouring"):
            raise ValueError(f"unknown task {self.name!r}")

    @property
    def labels(self) -> tuple[str, ...]:
        return SORTING_LABELS if self.name == "sorting" else POURING_LABELS

    @classmethod
    def pouring(cls, **kw) -> "TaskConfig":
        base = dict(name="pouring", frame_budget=(30, 45))
        base.update(kw)
        return cls(**base)


@dataclass(frozen=True)
class SceneObject:
    id: int
    label_true: str
    location: tuple[float, float, float]
    phase: str = "on_conveyor"          # on_conveyor | grasped | at_bin | at_corner
    visible: bool = False               # true label observable
    emptied: bool = False               # pouring: contents poured

    @property
    def processed(self) -> bool:
        return self.phase in ("at_bin", "at_corner")


@dataclass(frozen=True)
class SceneState:
    objects: tuple[SceneObject, ...]
    eef: tuple[float, float, float]
    time: float = 0.0

    def __post_init__(self):
        if sum(o.phase == "grasped" for o in self.objects) > 1:
            raise ValueError("at most one object may be grasped")

    @property
    def done(self) -> bool:
        return all(o.processed for o in self.objects)

    @property
    def grasped(self) -> SceneObject | None:
        for o in self.objects:
            if o.phase == "grasped":
                return o
        return None


def observed_label(task: TaskConfig, obj: SceneObject) -> str:
    if task.name == "pouring":
        return "unknown" if obj.emptied else obj.label_true
    return obj.label_true if obj.visible else "unknown"


def true_detections(task: TaskConfig, scene: SceneState) -> list[Detection]:
    return [Detection(observed_label(task, o), 0.9, tuple(o.location))
            for o in scene.objects if not o.processed]


def object_of_interest(task: TaskConfig, scene: SceneState):
    """Noise-free selection: ``(object or None, label, location)``."""
    live = [o for o in scene.objects if not o.processed]
    dets = true_detections(task, scene)
    label, loc, rule = select_object_of_interest(dets, scene.eef)
    if rule == 1:
        return None, label, loc
    for o in live:
        if np.array_equal(np.asarray(o.location), loc):
            return o, label, loc
    raise AssertionError("selected detection does not match any object")


def goal_for(task: TaskConfig, eef, obj_loc, label) -> np.ndarray | None:
    """Sub-goal implied by an observed state; None when nothing is left to do."""
    eef = np.asarray(eef, dtype=np.float64)
    obj_loc = np.asarray(obj_loc, dtype=np.float64)
    if not np.all(np.isfinite(obj_loc)):
        return None
    if np.linalg.norm(obj_loc - eef) > 1e-9:
        return obj_loc
    if task.name == "sorting":
        site = {"blemished": task.bin, "unknown": task.inspect, "unblemished": task.corner}[label]
    else:
        site = {"red": task.container_black, "blue": task.container_blue, "unknown": task.bin}[label]
    return np.asarray(site, dtype=np.float64)


def step_toward(eef, goal, max_step: float) -> np.ndarray:
    d = np.asarray(goal, dtype=np.float64) - np.asarray(eef, dtype=np.float64)
    n = float(np.linalg.norm(d))
    if n <= max_step:
        return d
    return d * (max_step / n)


def expert_action(task: TaskConfig, eef, obj_loc, label) -> np.ndarray:
    goal = goal_for(task, eef, obj_loc, label)
    if goal is None:
        return np.zeros(3)
    return step_toward(eef, goal, task.max_step)


def scripted_expert(scene: SceneState, task: TaskConfig) -> np.ndarray:
    """Deterministic expert action for a scene (zero once every object is sorted)."""
    if scene.done:
        return np.zeros(3)
    _, label, loc = object_of_interest(task, scene)
    return expert_action(task, scene.eef, loc, label)


def step_scene(task: TaskConfig, scene: SceneState, action) -> tuple[SceneState, bool]:
    """Advance the scene by one end-effector displacement. Returns (scene', tilt)."""
    lo, hi = np.asarray(task.bounds_lo), np.asarray(task.bounds_hi)
    eef = np.clip(np.asarray(scene.eef, dtype=np.float64) + np.asarray(action, dtype=np.float64), lo, hi)
    objs = list(scene.objects)
    tilt = False
    held = next((i for i, o in enumerate(objs) if o.phase == "grasped"), None)
    if held is None:
        target, _, _ = object_of_interest(task, replace(scene, eef=tuple(eef)))
        if target is not None and np.linalg.norm(np.asarray(target.location) - eef) <= task.grasp_radius:
            held = next(i for i, o in enumerate(objs) if o.id == target.id)
            objs[held] = replace(objs[held], phase="grasped")
    if held is not None:
        o = replace(objs[held], location=tuple(float(v) for v in eef))

        def near(site):
            return np.linalg.norm(eef - np.asarray(site)) <= task.release_radius

        if task.name == "sorting":
            if not o.visible and (eef[2] >= task.inspect[2] - 1e-9 or near(task.inspect)):
                o = replace(o, visible=True)
            if near(task.bin):
                o = replace(o, phase="at_bin")
            elif near(task.corner):
                o = replace(o, phase="at_corner")
        else:
            match = task.container_blue if o.label_true == "blue" else task.container_black
            if not o.emptied and near(match):
                o = replace(o, emptied=True, visible=True)
                tilt = True
            elif o.emptied and near(task.bin):
                o = replace(o, phase="at_bin")
        objs[held] = o
    return SceneState(tuple(objs), tuple(float(v) for v in eef), scene.time + task.dt), tilt


def random_scene(task: TaskConfig, rng: np.random.Generator) -> SceneState:
    lo, hi = np.asarray(task.conveyor_lo), np.asarray(task.conveyor_hi)
    locs: list[np.ndarray] = []
    for _ in range(1000):
        p = rng.uniform(lo, hi)
        if all(np.linalg.norm(p - q) >= task.min_separation for q in locs):
            locs.append(p)
            if len(locs) == task.n_objects:
                break
    if len(locs) < task.n_objects:
        raise GenerationError("could not place objects with the requested separation")
    objs = []
    for i, p in enumerate(locs):
        if task.name == "sorting":
            label = "blemished" if rng.random() < task.blemished_prob else "unblemished"
            visible = label == "blemished" and rng.random() < task.visible_blemish_prob
        else:
            label = "red" if rng.random() < 0.5 else "blue"
            visible = True
        objs.append(SceneObject(i, label, tuple(float(v) for v in p), visible=visible))
    return SceneState(tuple(objs), tuple(task.home))


def run_expert(task: TaskConfig, scene: SceneState, max_frames: int = 200):
    """Roll the scripted expert out; returns the list of visited scenes and tilt flags."""
    scenes, tilts = [scene], [False]
    while not scenes[-1].done:
        if len(scenes) >= max_frames:
            raise GenerationError("expert did not finish within the frame limit")
        nxt, tilt = step_scene(task, scenes[-1], scripted_expert(scenes[-1], task))
        scenes.append(nxt)
        tilts.append(tilt)
    return scenes, tilts


# ----------------------------------------------------------- demonstrations
@dataclass(frozen=True)
class NoiseConfig:
    keypoint_noise_std: float = 0.0
    dropout_prob: float = 0.0
    detection_miss_prob: float = 0.0
    pixel_noise_std: float = 0.0
    depth_noise_std_mm: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.dropout_prob < 1.0:
            raise ValueError("dropout_prob must be in [0, 1)")


@dataclass
class Frame:
    t: int
    eef: np.ndarray
    action: np.ndarray
    keypoints: np.ndarray | None            # (6, 3) observed, None when dropped
    true_keypoints: np.ndarray              # (6, 3) noise-free
    detections: list[Detection]
    obj_id: int                             # -1 when no object remains
    obj_loc: np.ndarray                     # noise-free object of interest, or sentinel
    obj_label: str
    grasped: bool = False
    tilt: bool = False

    @property
    def dropped(self) -> bool:
        return self.keypoints is None


@dataclass
class Demonstration:
    frames: list[Frame]
    dt: float = 0.1
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.frames) < 2:
            raise ValueError("a demonstration needs at least two frames")

    def __len__(self):
        return len(self.frames)

    @property
    def eef_path(self) -> np.ndarray:
        return np.array([f.eef for f in self.frames])

    def state_action_pairs(self):
        """(eef, obj_loc, label, action) for every non-terminal frame."""
        return [(f.eef, f.obj_loc, f.obj_label, f.action) for f in self.frames[:-1]]


def _detections(task, scene, cam, noise, rng):
    dets = []
    for o in scene.objects:
        if o.processed:
            continue
        if o.phase == "grasped":
            conf = 0.95
        elif rng.random() < noise.detection_miss_prob:
            conf = float(rng.uniform(0.1, 0.45))
        else:
            conf = float(rng.uniform(0.6, 0.95))
        x, y, z = world_to_pixel(o.location, cam)
        x += rng.normal(0, noise.pixel_noise_std) if noise.pixel_noise_std else 0.0
        y += rng.normal(0, noise.pixel_noise_std) if noise.pixel_noise_std else 0.0
        z += rng.normal(0, noise.depth_noise_std_mm) if noise.depth_noise_std_mm else 0.0
        p = camera_to_world(pixel_to_camera(x, y, z, cam), cam)
        dets.append(Detection(observed_label(task, o), conf, tuple(float(v) for v in p)))
    return dets


def generate_demonstration(task: TaskConfig, noise: NoiseConfig, seed: int,
                           arm: HumanArm | None = None, cam: CameraModel | None = None,
                           hip_jitter: float = 0.01, max_tries: int = 200,
                           enforce_budget: bool = True, protect_head: int = 2) -> Demonstration:
    """Scripted-expert episode rendered as keypoint and detection streams.

    Scenes are redrawn (deterministically from ``seed``) until the episode
    length falls inside ``task.frame_budget``. The first ``protect_head``
    frames never drop so that gap filling can bootstrap; pass 0 for plain
    Bernoulli dropout.
    """
    rng = np.random.default_rng(seed)
    arm = arm or HumanArm()
    cam = cam or CameraModel()
    for _ in range(max_tries):
        scenes, tilts = run_expert(task, random_scene(task, rng))
        lo, hi = task.frame_budget
        if not enforce_budget or lo <= len(scenes) <= hi:
            break
    else:
        raise GenerationError(f"no episode within the frame budget after {max_tries} scenes")

    hip = np.asarray(arm.hip) + rng.normal(0.0, hip_jitter, 3) * np.array([1.0, 1.0, 0.5])
    subject = replace(arm, hip=tuple(float(v) for v in hip))
    phase = rng.uniform(0, 2 * np.pi)
    frames = []
    for t, (scene, tilt) in enumerate(zip(scenes, tilts)):
        eef = np.asarray(scene.eef, dtype=np.float64)
        deviation = 0.15 + 0.1 * math.sin(0.4 * t + phase)
        try:
            q = human_arm_ik(subject, eef, deviation)
        except KinematicsError as exc:
            raise GenerationError(f"frame {t}: demonstrator cannot reach {eef}") from exc
        true_kp = human_arm_fk(subject, q).as_array(with_fingers=True)
        kp = true_kp + (rng.normal(0.0, noise.keypoint_noise_std, true_kp.shape)
                        if noise.keypoint_noise_std > 0 else 0.0)
        drop = rng.random() < noise.dropout_prob
        if t < protect_head:
            drop = False
        obj, label, loc = object_of_interest(task, scene)
        action = (np.asarray(scenes[t + 1].eef) - eef) if t + 1 < len(scenes) else np.zeros(3)
        frames.append(Frame(
            t=t, eef=eef, action=action, keypoints=None if drop else kp, true_keypoints=true_kp,
            detections=_detections(task, scene, cam, noise, rng),
            obj_id=-1 if obj is None else obj.id, obj_loc=loc, obj_label=label,
            grasped=obj is not None and obj.phase == "grasped", tilt=tilt))
    meta = {"seed": int(seed), "task": task.name, "noise": asdict(noise),
            "hip": [float(v) for v in hip], "n_objects": task.n_objects}
    return Demonstration(frames, task.dt, meta)


# ---------------------------------------------------------------- JSONL io
def _vec(v):
    return ["neg_inf" if x == NEG_INF else float(x) for x in np.asarray(v, dtype=np.float64).ravel()]


def _unvec(items, shape=None):
    a = np.array([NEG_INF if x == "neg_inf" else float(x) for x in items], dtype=np.float64)
    return a.reshape(shape) if shape else a


def frame_to_dict(f: Frame) -> dict:
    return {
        "kind": "frame", "t": f.t, "eef": _vec(f.eef), "action": _vec(f.action),
        "keypoints": None if f.keypoints is None else _vec(f.keypoints),
        "true_keypoints": _vec(f.true_keypoints),
        "detections": [{"label": d.label, "confidence": d.confidence,
                        "centroid_3d": _vec(d.centroid_3d)} for d in f.detections],
        "obj_id": f.obj_id, "obj_loc": _vec(f.obj_loc), "obj_label": f.obj_label,
        "grasped": f.grasped, "tilt": f.tilt,
    }


def frame_from_dict(d: dict) -> Frame:
    return Frame(
        t=int(d["t"]), eef=_unvec(d["eef"]), action=_unvec(d["action"]),
        keypoints=None if d["keypoints"] is None else _unvec(d["keypoints"], (6, 3)),
        true_keypoints=_unvec(d["true_keypoints"], (6, 3)),
        detections=[Detection(x["label"], float(x["confidence"]), tuple(_unvec(x["centroid_3d"])))
                    for x in d["detections"]],
        obj_id=int(d["obj_id"]), obj_loc=_unvec(d["obj_loc"]), obj_label=d["obj_label"],
        grasped=bool(d["grasped"]), tilt=bool(d["tilt"]))


def demo_to_jsonl(demo: Demonstration) -> str:
    head = {"kind": "header", "schema": DEMO_SCHEMA, "version": DEMO_VERSION,
            "dt": demo.dt, "metadata": demo.metadata}
    lines = [json.dumps(head, sort_keys=True)]
    lines += [json.dumps(frame_to_dict(f), sort_keys=True) for f in demo.frames]
    return "\n".join(lines) + "\n"


def save_demo(path, demo: Demonstration) -> None:
    Path(path).write_text(demo_to_jsonl(demo))


def load_demo(path) -> Demonstration:
    lines = [json.loads(l) for l in Path(path).read_text().splitlines() if l.strip()]
    if not lines or lines[0].get("schema") != DEMO_SCHEMA:
        raise ValueError(f"{path}: not a {DEMO_SCHEMA} file")
    if lines[0].get("version") != DEMO_VERSION:
        raise ValueError(f"{path}: unsupported demo version {lines[0].get('version')}")
    return Demonstration([frame_from_dict(d) for d in lines[1:]], float(lines[0]["dt"]),
                         lines[0].get("metadata", {}))
