"""Cartesian RRT and RRT-connect baselines and their conversion to joint trajectories.

Obstacles are axis-aligned boxes. Every returned segment is checked by
sampling at ``collision_resolution`` (1 mm by default). The joint-space
conversion solves each waypoint independently from a random start with no
adjustment penalty, which is how the baseline ignores joint continuity.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .arms import RobotSpec, embed
from .checkpoint import atomic_write_text
from .retarget import FkModel, IkOptConfig, refine_batch


class PlanningError(ValueError):
    pass


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        if any(a >= b for a, b in zip(self.lo, self.hi)):
            raise PlanningError(f"box lo {self.lo} must be below hi {self.hi} on every axis")

    def contains(self, pts) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return np.all((pts >= np.asarray(self.lo)) & (pts <= np.asarray(self.hi)), axis=-1)


@dataclass(frozen=True)
class PlannerConfig:
    step_size: float = 0.05
    goal_tolerance: float = 0.02
    max_nodes: int = 5000
    bounds_lo: tuple[float, float, float] = (0.05, -0.60, -0.05)
    bounds_hi: tuple[float, float, float] = (0.60, 0.40, 0.55)
    obstacles: tuple[Box, ...] = ()
    seed: int = 0
    goal_bias: float = 0.05
    collision_resolution: float = 0.001

    def __post_init__(self):
        if not self.step_size > 0 or not self.goal_tolerance > 0:
            raise PlanningError("step_size and goal_tolerance must be positive")
        if self.max_nodes <= 0:
            raise PlanningError("max_nodes must be positive")
        if not 0 <= self.goal_bias < 1:
            raise PlanningError("goal_bias must lie in [0, 1)")
        object.__setattr__(self, "obstacles", tuple(self.obstacles))

    def in_bounds(self, pts) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return np.all((pts >= np.asarray(self.bounds_lo) - 1e-12)
                      & (pts <= np.asarray(self.bounds_hi) + 1e-12), axis=-1)

    def point_free(self, pts) -> np.ndarray:
        ok = self.in_bounds(pts)
        for box in self.obstacles:
            ok &= ~box.contains(pts)
        return ok

    def segment_free(self, a, b) -> bool:
        a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
        n = max(int(np.ceil(np.linalg.norm(b - a) / self.collision_resolution)), 1)
        s = np.linspace(0.0, 1.0, n + 1)[:, None]
        return bool(np.all(self.point_free(a + s * (b - a))))


@dataclass
class Tree:
    """Nodes with parent indices; the root's parent is -1."""
    nodes: list[np.ndarray] = field(default_factory=list)
    parents: list[int] = field(default_factory=list)
    _arr: np.ndarray | None = None

    def add(self, p, parent: int) -> int:
        self.nodes.append(np.asarray(p, dtype=np.float64))
        self.parents.append(parent)
        if self._arr is None or len(self.nodes) > len(self._arr):
            grown = np.empty((max(64, 2 * len(self.nodes)), 3))
            if self._arr is not None:
                grown[: len(self.nodes) - 1] = self._arr[: len(self.nodes) - 1]
            self._arr = grown
        self._arr[len(self.nodes) - 1] = self.nodes[-1]
        return len(self.nodes) - 1

    def nearest(self, p) -> int:
        d = self._arr[: len(self.nodes)] - p
        return int(np.argmin(np.einsum("ij,ij->i", d, d)))

    def branch(self, i: int) -> list[np.ndarray]:
        """Points from the root to node ``i``."""
        out = []
        while i >= 0:
            out.append(self.nodes[i])
            i = self.parents[i]
        return out[::-1]


@dataclass
class WaypointPath:
    points: np.ndarray
    planner: str
    nodes_expanded: int
    success: bool = True
    trees: list[Tree] = field(default_factory=list, repr=False)

    def __len__(self):
        return len(self.points)

    @property
    def length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.points, axis=0), axis=1)))


def steer(near, target, step: float) -> np.ndarray:
    """Point ``step`` from ``near`` toward ``target``, or ``target`` itself when closer."""
    d = np.asarray(target) - near
    n = float(np.linalg.norm(d))
    if n <= step:
        return np.asarray(target, dtype=np.float64).copy()
    return near + d * (step / n)


def _check_endpoints(start, goal, cfg):
    start = np.asarray(start, dtype=np.float64)
    goal = np.asarray(goal, dtype=np.float64)
    for name, p in (("start", start), ("goal", goal)):
        if p.shape != (3,) or not np.all(np.isfinite(p)):
            raise PlanningError(f"{name} must be a finite 3-vector")
        if not cfg.point_free(p)[0]:
            raise PlanningError(f"{name} {p} is out of bounds or inside an obstacle")
    return start, goal


def _sample(rng, cfg):
    return rng.uniform(cfg.bounds_lo, cfg.bounds_hi)


def rrt_plan(start, goal, cfg: PlannerConfig = PlannerConfig()) -> WaypointPath:
    """Single-tree RRT with goal bias. On success the goal itself closes the path
    when it is reachable by a free segment; otherwise the path ends at the node
    inside the tolerance ball."""
    start, goal = _check_endpoints(start, goal, cfg)
    tree = Tree()
    tree.add(start, -1)
    if np.linalg.norm(goal - start) <= 1e-12:
        return WaypointPath(start[None, :], "rrt", 0, True, [tree])
    rng = np.random.default_rng(cfg.seed)
    added = 0
    while added < cfg.max_nodes:
        sample = goal if rng.random() < cfg.goal_bias else _sample(rng, cfg)
        i = tree.nearest(sample)
        new = steer(tree.nodes[i], sample, cfg.step_size)
        if not cfg.segment_free(tree.nodes[i], new):
            continue
        j = tree.add(new, i)
        added += 1
        if np.linalg.norm(new - goal) <= cfg.goal_tolerance:
            pts = tree.branch(j)
            if np.linalg.norm(new - goal) > 0 and cfg.segment_free(new, goal):
                pts.append(goal.copy())
            return WaypointPath(np.array(pts), "rrt", added, True, [tree])
    return WaypointPath(start[None, :], "rrt", added, False, [tree])


def _extend(tree: Tree, target, cfg) -> tuple[int | None, bool]:
    """One step toward ``target``; returns (new node or None if blocked, reached)."""
    i = tree.nearest(target)
    new = steer(tree.nodes[i], target, cfg.step_size)
    if not cfg.segment_free(tree.nodes[i], new):
        return None, False
    j = tree.add(new, i)
    return j, bool(np.array_equal(new, target))


def rrt_connect_plan(start, goal, cfg: PlannerConfig = PlannerConfig()) -> WaypointPath:
    """Bidirectional RRT: extend one tree toward a sample, then greedily connect the other."""
    start, goal = _check_endpoints(start, goal, cfg)
    ta, tb = Tree(), Tree()
    ta.add(start, -1)
    tb.add(goal, -1)
    if np.linalg.norm(goal - start) <= 1e-12:
        return WaypointPath(start[None, :], "rrt-connect", 0, True, [ta, tb])
    rng = np.random.default_rng(cfg.seed)
    added = 0
    a, b = ta, tb
    while added < cfg.max_nodes:
        sample = _sample(rng, cfg)
        j, _ = _extend(a, sample, cfg)
        if j is not None:
            added += 1
            target = a.nodes[j]
            while added < cfg.max_nodes:
                k, reached = _extend(b, target, cfg)
                if k is None:
                    break
                added += 1
                if reached:
                    pa, pb = a.branch(j), b.branch(k)
                    if a is tb:
                        pa, pb = pb, pa
                    pts = pa + pb[::-1][1:]
                    return WaypointPath(np.array(pts), "rrt-connect", added, True, [ta, tb])
        a, b = b, a
    return WaypointPath(start[None, :], "rrt-connect", added, False, [ta, tb])


PLANNERS = {"rrt": rrt_plan, "rrt-connect": rrt_connect_plan}


def plan(planner: str, start, goal, cfg: PlannerConfig = PlannerConfig()) -> WaypointPath:
    if planner not in PLANNERS:
        raise PlanningError(f"unknown planner {planner!r}; choose from {sorted(PLANNERS)}")
    return PLANNERS[planner](start, goal, cfg)


def plan_through(planner: str, waypoints, cfg: PlannerConfig, seed: int) -> WaypointPath:
    """Chain plans through successive waypoints; each leg gets its own derived seed."""
    waypoints = np.asarray(waypoints, dtype=np.float64)
    seeds = np.random.SeedSequence(seed).generate_state(max(len(waypoints) - 1, 1))
    pts = [waypoints[0]]
    nodes, ok = 0, True
    for k in range(len(waypoints) - 1):
        leg = plan(planner, pts[-1], waypoints[k + 1], replace(cfg, seed=int(seeds[k])))
        nodes += leg.nodes_expanded
        if not leg.success:
            ok = False
            break
        pts.extend(leg.points[1:])
    return WaypointPath(np.array(pts), planner, nodes, ok)


def path_is_valid(path: WaypointPath, cfg: PlannerConfig) -> bool:
    """Bounds, obstacle and step-length checks on every returned segment."""
    pts = path.points
    if not np.all(cfg.point_free(pts)):
        return False
    steps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    if np.any(steps > cfg.step_size + 1e-9):
        return False
    return all(cfg.segment_free(pts[i], pts[i + 1]) for i in range(len(pts) - 1))


# ------------------------------------------------------------------ scenes
def scene_to_dict(cfg: PlannerConfig) -> dict:
    return {"bounds": {"lo": list(cfg.bounds_lo), "hi": list(cfg.bounds_hi)},
            "obstacles": [{"lo": list(b.lo), "hi": list(b.hi)} for b in cfg.obstacles]}


def scene_from_dict(d: dict, base: PlannerConfig = PlannerConfig()) -> PlannerConfig:
    try:
        bounds = d["bounds"]
        obstacles = tuple(Box(o["lo"], o["hi"]) for o in d.get("obstacles", []))
        return replace(base, bounds_lo=tuple(bounds["lo"]), bounds_hi=tuple(bounds["hi"]),
                       obstacles=obstacles)
    except (KeyError, TypeError) as exc:
        raise PlanningError(f"malformed scene description: {exc}") from exc


def load_scene(path, base: PlannerConfig = PlannerConfig()) -> PlannerConfig:
    with open(path) as fh:
        return scene_from_dict(json.load(fh), base)


def save_scene(path, cfg: PlannerConfig) -> None:
    atomic_write_text(path, json.dumps(scene_to_dict(cfg), indent=2) + "\n")


def conveyor_scene(task, base: PlannerConfig = PlannerConfig()) -> PlannerConfig:
    """Task bounds plus the conveyor body below the object plane."""
    lo, hi = np.asarray(task.conveyor_lo), np.asarray(task.conveyor_hi)
    body = Box((lo[0] - 0.04, lo[1] - 0.04, task.bounds_lo[2]), (hi[0] + 0.04, hi[1] + 0.04, lo[2] - 0.02))
    return replace(base, bounds_lo=tuple(task.bounds_lo), bounds_hi=tuple(task.bounds_hi),
                   obstacles=(body,))


def path_to_jsonl(path: WaypointPath) -> str:
    lines = [json.dumps({"kind": "header", "planner": path.planner, "success": path.success,
                         "nodes_expanded": path.nodes_expanded, "n_points": len(path)})]
    lines += [json.dumps({"i": i, "p": [float(v) for v in p]}) for i, p in enumerate(path.points)]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------- joint-space baseline
@dataclass
class BaselineTrajectory:
    joints: np.ndarray          # (N, dof)
    converged: np.ndarray       # (N,) bool
    final_error: np.ndarray     # (N,) meters, measured on the learned model
    dt: float = 0.1


def path_to_joint_trajectory(path, robot: RobotSpec, fk: FkModel,
                             ik_cfg: IkOptConfig = IkOptConfig(alpha=0.0),
                             seed: int = 0, dt: float = 0.1) -> BaselineTrajectory:
    """Solve every waypoint independently from a uniformly random in-limit start.

    Non-mapped joints stay at the neutral pose. Waypoints that fail to converge
    are flagged, not dropped.
    """
    pts = path.points if isinstance(path, WaypointPath) else np.atleast_2d(np.asarray(path, dtype=np.float64))
    if len(pts) == 0:
        raise PlanningError("path has no points")
    lo, hi = robot.mapped_limits
    rng = np.random.default_rng(seed)
    q0 = rng.uniform(lo, hi, (len(pts), 4))
    res = refine_batch(fk, q0, pts, ik_cfg)
    q = np.array([r.q for r in res])
    return BaselineTrajectory(embed(robot, q), np.array([r.converged for r in res]),
                              np.array([r.final_error for r in res]), dt)
