"""Kinematic chains: two cobot stand-ins and a four-angle human arm.

Angles are radians everywhere. A robot chain is a list of revolute joints;
joint ``i`` sits at ``link_offset[i]`` expressed in the frame of joint
``i-1`` (after that joint's rotation) and rotates about its own ``axis``.
The end-effector is the origin of the last joint frame.

Human arm angles are ``(torso_yaw, shoulder_elevation, elbow_flexion,
wrist_deviation)``:

* torso yaw rotates the shoulder about the vertical axis through the hip; at
  zero yaw the shoulder lies straight to the right of the hip (-y) and above it;
* shoulder elevation swings the upper arm forward/up from hanging straight down;
* elbow flexion bends the forearm further in the same sagittal plane
  (0 = straight arm);
* wrist deviation bends the hand (wrist -> index finger) in that plane.

Extraction assumes that convention, in particular that the rest shoulder is
lateral to the hip, so only the keypoints are needed to invert it.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

SCHEMA = "cobotmimic-robot"
SCHEMA_VERSION = 1


class KinematicsError(ValueError):
    pass


@dataclass(frozen=True)
class Joint:
    axis: tuple[float, float, float]
    link_offset: tuple[float, float, float]
    limit_lo: float
    limit_hi: float
    name: str = ""


@dataclass(frozen=True)
class RobotSpec:
    name: str
    joints: tuple[Joint, ...]
    mapped_indices: tuple[int, int, int, int]
    neutral_pose: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "joints", tuple(self.joints))
        object.__setattr__(self, "mapped_indices", tuple(int(i) for i in self.mapped_indices))
        object.__setattr__(self, "neutral_pose", tuple(float(v) for v in self.neutral_pose))
        n = len(self.joints)
        for j in self.joints:
            if not j.limit_lo < j.limit_hi:
                raise KinematicsError(f"joint {j.name!r}: limit_lo must be < limit_hi")
            if abs(np.linalg.norm(j.axis) - 1.0) > 1e-9:
                raise KinematicsError(f"joint {j.name!r}: axis must be a unit vector")
        mi = self.mapped_indices
        if len(mi) != 4 or len(set(mi)) != 4 or list(mi) != sorted(mi) or mi[0] < 0 or mi[-1] >= n:
            raise KinematicsError("mapped_indices must be 4 distinct in-range indices, base to tip")
        if len(self.neutral_pose) != n:
            raise KinematicsError("neutral_pose length must equal the joint count")

    @property
    def dof(self) -> int:
        return len(self.joints)

    @property
    def limits(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.array([j.limit_lo for j in self.joints]),
                np.array([j.limit_hi for j in self.joints]))

    @property
    def mapped_limits(self) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.limits
        idx = list(self.mapped_indices)
        return lo[idx], hi[idx]

    @property
    def link_lengths(self) -> np.ndarray:
        return np.array([np.linalg.norm(j.link_offset) for j in self.joints])

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA, "version": SCHEMA_VERSION, "name": self.name,
            "joints": [{"name": j.name, "axis": list(j.axis), "link_offset": list(j.link_offset),
                        "limit_lo": j.limit_lo, "limit_hi": j.limit_hi} for j in self.joints],
            "mapped_indices": list(self.mapped_indices),
            "neutral_pose": list(self.neutral_pose),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RobotSpec":
        if d.get("schema") != SCHEMA or d.get("version") != SCHEMA_VERSION:
            raise KinematicsError(f"expected {SCHEMA} v{SCHEMA_VERSION} document")
        joints = tuple(Joint(tuple(j["axis"]), tuple(j["link_offset"]), float(j["limit_lo"]),
                             float(j["limit_hi"]), j.get("name", "")) for j in d["joints"])
        return cls(d["name"], joints, tuple(d["mapped_indices"]), tuple(d["neutral_pose"]))


def load_robot(path_or_name) -> RobotSpec:
    """Load a robot JSON file; bare names resolve to the bundled configs."""
    p = Path(str(path_or_name))
    if not p.suffix and not p.exists():
        text = resources.files("cobotmimic.data").joinpath(f"{p.name}.json").read_text()
    else:
        if not p.exists():
            raise FileNotFoundError(f"robot spec not found: {p}")
        text = p.read_text()
    return RobotSpec.from_dict(json.loads(text))


def rotation(axis, angle):
    """Rodrigues rotation matrices; ``angle`` may be batched, shape (...,) -> (..., 3, 3)."""
    ax = np.asarray(axis, dtype=np.float64)
    angle = np.asarray(angle, dtype=np.float64)
    c, s = np.cos(angle)[..., None, None], np.sin(angle)[..., None, None]
    k = np.array([[0.0, -ax[2], ax[1]], [ax[2], 0.0, -ax[0]], [-ax[1], ax[0], 0.0]])
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)


def _matmul3(a, b):
    # explicit contraction keeps results independent of the batch size
    return (a[..., :, :, None] * b[..., None, :, :]).sum(axis=-2)


def analytic_fk(spec: RobotSpec, q) -> dict:
    """Joint origins and end-effector for ``q`` of shape (dof,) or (batch, dof)."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape[-1] != spec.dof:
        raise KinematicsError(f"{spec.name} has {spec.dof} joints, got {q.shape[-1]} angles")
    lead = q.shape[:-1]
    R = np.broadcast_to(np.eye(3), lead + (3, 3))
    p = np.zeros(lead + (3,))
    positions = []
    for i, joint in enumerate(spec.joints):
        off = np.asarray(joint.link_offset, dtype=np.float64)
        p = p + (R * off).sum(axis=-1)
        positions.append(p)
        R = _matmul3(R, rotation(joint.axis, q[..., i]))
    joints = np.stack(positions, axis=-2)
    return {"joint_positions": joints, "eef": joints[..., -1, :]}


def embed(spec: RobotSpec, q4) -> np.ndarray:
    """Full joint vector(s) with mapped joints set to ``q4`` and the rest neutral."""
    q4 = np.asarray(q4, dtype=np.float64)
    full = np.broadcast_to(np.asarray(spec.neutral_pose), q4.shape[:-1] + (spec.dof,)).copy()
    full[..., list(spec.mapped_indices)] = q4
    return full


def restricted_fk_oracle(spec: RobotSpec, q4) -> np.ndarray:
    return analytic_fk(spec, embed(spec, q4))["eef"]


def within_limits(spec: RobotSpec, q) -> bool:
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (spec.dof,):
        raise KinematicsError(f"expected {spec.dof} angles")
    lo, hi = spec.limits
    return bool(np.all(q >= lo) and np.all(q <= hi))


# ---------------------------------------------------------------- human arm
@dataclass(frozen=True)
class ArmKeypoints:
    hip: np.ndarray
    shoulder: np.ndarray
    elbow: np.ndarray
    wrist: np.ndarray
    index_finger: np.ndarray | None = None
    thumb: np.ndarray | None = None

    JOINTS = ("hip", "shoulder", "elbow", "wrist", "index_finger", "thumb")

    def as_array(self, with_fingers: bool = False) -> np.ndarray:
        names = self.JOINTS if with_fingers else self.JOINTS[:4]
        return np.stack([np.asarray(getattr(self, n), dtype=np.float64) for n in names])

    @classmethod
    def from_array(cls, a) -> "ArmKeypoints":
        a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
        return cls(*[a[i].copy() for i in range(a.shape[0])])


@dataclass(frozen=True)
class HumanArm:
    hip: tuple[float, float, float] = (0.0, 0.0, 0.0)
    shoulder_offset: tuple[float, float, float] = (0.0, -0.18, 0.45)
    upper_arm: float = 0.34
    forearm: float = 0.31
    hand: float = 0.09
    thumb_spread: float = 0.035

    def __post_init__(self):
        if min(self.upper_arm, self.forearm, self.hand) <= 0:
            raise KinematicsError("segment lengths must be positive")


# angle box on which extraction inverts the forward map
HUMAN_ANGLE_LO = np.array([-1.2, -0.5, 0.0, -0.8])
HUMAN_ANGLE_HI = np.array([1.2, 2.0, 2.3, 0.8])


def _rz(yaw):
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _sagittal(theta):
    # unit vector in the torso x-z plane; theta=0 points straight down
    return np.array([np.sin(theta), 0.0, -np.cos(theta)])


def human_arm_fk(arm: HumanArm, q) -> ArmKeypoints:
    yaw, elev, flex, dev = (float(v) for v in q)
    R = _rz(yaw)
    hip = np.asarray(arm.hip, dtype=np.float64)
    shoulder = hip + R @ np.asarray(arm.shoulder_offset, dtype=np.float64)
    elbow = shoulder + arm.upper_arm * (R @ _sagittal(elev))
    wrist = elbow + arm.forearm * (R @ _sagittal(elev + flex))
    hand_dir = R @ _sagittal(elev + flex + dev)
    index = wrist + arm.hand * hand_dir
    thumb = wrist + 0.5 * arm.hand * hand_dir + R @ np.array([0.0, arm.thumb_spread, 0.0])
    return ArmKeypoints(hip, shoulder, elbow, wrist, index, thumb)


def _wrap(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


def joint_angles_from_keypoints(k: ArmKeypoints) -> np.ndarray:
    """Invert ``human_arm_fk``. Wrist deviation is 0 when no index finger is given."""
    hip, sh, el, wr = (np.asarray(v, dtype=np.float64) for v in (k.hip, k.shoulder, k.elbow, k.wrist))
    torso = sh - hip
    if np.hypot(torso[0], torso[1]) < 1e-9:
        raise KinematicsError("degenerate keypoints: shoulder directly above hip")
    upper, fore = el - sh, wr - el
    if np.linalg.norm(upper) < 1e-9 or np.linalg.norm(fore) < 1e-9:
        raise KinematicsError("degenerate keypoints: zero-length arm segment")
    yaw = _wrap(np.arctan2(torso[1], torso[0]) + np.pi / 2)
    Rt = _rz(-yaw)
    u, f = Rt @ upper, Rt @ fore
    elev = np.arctan2(u[0], -u[2])
    flex = _wrap(np.arctan2(f[0], -f[2]) - elev)
    dev = 0.0
    if k.index_finger is not None:
        h = Rt @ (np.asarray(k.index_finger, dtype=np.float64) - wr)
        if np.linalg.norm(h) < 1e-9:
            raise KinematicsError("degenerate keypoints: zero-length hand")
        dev = _wrap(np.arctan2(h[0], -h[2]) - elev - flex)
    return np.array([yaw, elev, flex, dev])


def human_arm_ik(arm: HumanArm, wrist, deviation: float = 0.0) -> np.ndarray:
    """Angles placing the wrist at ``wrist`` (elbow bent forward, flexion >= 0)."""
    p = np.asarray(wrist, dtype=np.float64) - np.asarray(arm.hip, dtype=np.float64)
    so = np.asarray(arm.shoulder_offset, dtype=np.float64)
    rho = np.hypot(p[0], p[1])
    if rho <= abs(so[1]):
        raise KinematicsError("wrist target too close to the torso axis")
    # yaw that puts the target in the arm's sagittal plane (torso-frame y == so_y)
    yaw = _wrap(np.arctan2(p[1], p[0]) - np.arcsin(so[1] / rho))
    t = _rz(-yaw) @ p - so
    dx, dz = t[0], t[2]
    d2 = dx * dx + dz * dz
    L1, L2 = arm.upper_arm, arm.forearm
    cos_flex = (d2 - L1 * L1 - L2 * L2) / (2 * L1 * L2)
    if cos_flex > 1 + 1e-12 or cos_flex < -1 - 1e-12:
        raise KinematicsError("wrist target outside the arm's reach")
    flex = np.arccos(np.clip(cos_flex, -1.0, 1.0))
    elev = np.arctan2(dx, -dz) - np.arctan2(L2 * np.sin(flex), L1 + L2 * np.cos(flex))
    return np.array([yaw, elev, flex, deviation])
