"""Paired benchmark episodes: retargeted policy motion versus a planner baseline.

Each episode starts from a seeded scene. The learned policy is run with its
mean action to get an end-effector path, which is retargeted onto the cobot
with warm starts. The baseline visits the same sequence of sub-goals using a
sampling planner and converts the planned points to joints one waypoint at a
time. Both trajectories are scored with the same metrics on the analytic arm.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .arms import analytic_fk
from .irl import SortingMdp, mdp_step
from .metrics import JointTrajectory, MetricReport, displacement, jerkiness, task_time
from .planners import PlannerConfig, conveyor_scene, path_to_joint_trajectory, plan_through
from .retarget import IkOptConfig, Retargeter, retarget_trajectory
from .world import goal_for

OURS = "neuro-symbolic"
BASELINE_FOR_TASK = {"sorting": "rrt", "pouring": "rrt-connect"}


@dataclass
class PolicyEpisode:
    eef_path: np.ndarray        # (T + 1, 3)
    subgoals: np.ndarray        # (K, 3) distinct sub-goals in visiting order
    finished: bool


def policy_episode(policy, mdp: SortingMdp, seed: int, horizon: int = 80) -> PolicyEpisode:
    """Roll the policy's mean action from a seeded scene; also record the sub-goals
    its observed states imply, in order."""
    scene = mdp.reset(np.random.default_rng(seed))
    path = [np.asarray(scene.eef, dtype=np.float64)]
    goals: list[np.ndarray] = []
    for _ in range(horizon):
        if scene.done:
            break
        eef, obj, label = mdp.observe(scene)
        g = goal_for(mdp.task, eef, obj, label)
        if g is not None and (not goals or np.linalg.norm(goals[-1] - g) > 1e-9):
            goals.append(np.asarray(g, dtype=np.float64))
        a = np.clip(policy.mean_action(eef, obj, label), -mdp.max_step, mdp.max_step)
        scene = mdp_step(mdp, scene, a)
        path.append(np.asarray(scene.eef, dtype=np.float64))
    return PolicyEpisode(np.array(path), np.array(goals).reshape(-1, 3), scene.done)


@dataclass
class MethodResult:
    method: str
    joints: np.ndarray
    eef: np.ndarray             # analytic end-effector path of ``joints``
    converged: np.ndarray
    dt: float = 0.1

    @property
    def traj(self) -> JointTrajectory:
        return JointTrajectory(self.joints, self.dt)

    def metrics(self) -> dict:
        return {"time": task_time(self.traj), "jerkiness": jerkiness(self.traj),
                "displacement": displacement(self.eef),
                "frames": int(len(self.joints)), "nonconverged": int((~self.converged).sum())}


@dataclass
class EpisodeResult:
    seed: int
    task: str
    finished: bool
    ours: MethodResult
    baseline: MethodResult
    planner_ok: bool

    def records(self) -> list[dict]:
        out = []
        for m in (self.ours, self.baseline):
            rec = {"seed": self.seed, "task": self.task, "method": m.method,
                   "policy_finished": self.finished}
            rec.update(m.metrics())
            if m is self.baseline:
                rec["planner_success"] = self.planner_ok
            out.append(rec)
        return out

    @property
    def wins(self) -> tuple[bool, bool]:
        a, b = self.ours.metrics(), self.baseline.metrics()
        return a["jerkiness"] < b["jerkiness"], a["displacement"] < b["displacement"]


@dataclass
class BenchmarkConfig:
    ik: IkOptConfig = field(default_factory=IkOptConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    horizon: int = 80
    baseline: str | None = None     # default: matched to the task


def run_episode(pipe: Retargeter, policy, mdp: SortingMdp, seed: int,
                cfg: BenchmarkConfig = BenchmarkConfig()) -> EpisodeResult:
    ep = policy_episode(policy, mdp, seed, cfg.horizon)
    rt = retarget_trajectory(pipe, ep.eef_path, cfg.ik, warm_start=True, dt=mdp.task.dt)
    ours = MethodResult(OURS, rt.joints, analytic_fk(pipe.robot, rt.joints)["eef"], rt.converged,
                        mdp.task.dt)
    planner = cfg.baseline or BASELINE_FOR_TASK[mdp.task.name]
    scene_cfg = conveyor_scene(mdp.task, cfg.planner)
    waypoints = np.vstack([ep.eef_path[:1], ep.subgoals])
    path = plan_through(planner, waypoints, scene_cfg, seed)
    base_ik = replace(cfg.ik, alpha=0.0)
    bt = path_to_joint_trajectory(path, pipe.robot, pipe.fk, base_ik, seed=seed, dt=mdp.task.dt)
    base = MethodResult(planner, bt.joints, analytic_fk(pipe.robot, bt.joints)["eef"], bt.converged,
                        mdp.task.dt)
    return EpisodeResult(seed, mdp.task.name, ep.finished, ours, base, path.success)


def run_benchmark(pipe: Retargeter, policy, mdp: SortingMdp, seeds,
                  cfg: BenchmarkConfig = BenchmarkConfig()) -> list[EpisodeResult]:
    return [run_episode(pipe, policy, mdp, int(s), cfg) for s in seeds]


def benchmark_report(episodes: list[EpisodeResult]) -> list[MetricReport]:
    by_method: dict[str, list[dict]] = {}
    for ep in episodes:
        for m in (ep.ours, ep.baseline):
            by_method.setdefault(m.method, []).append(m.metrics())
    return [MetricReport.from_episodes(name, [r["time"] for r in rows],
                                       [r["jerkiness"] for r in rows],
                                       [r["displacement"] for r in rows])
            for name, rows in by_method.items()]


def report_csv(reports: list[MetricReport]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, ["method", "avg_time", "avg_jerkiness", "avg_displacement"],
                       lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow(r.row())
    return buf.getvalue()


def episodes_jsonl(episodes: list[EpisodeResult]) -> str:
    return "".join(json.dumps(rec) + "\n" for ep in episodes for rec in ep.records())


def ratios(episodes: list[EpisodeResult]) -> dict:
    """Baseline-to-ours ratios of the mean jerkiness and mean displacement."""
    ours = [ep.ours.metrics() for ep in episodes]
    base = [ep.baseline.metrics() for ep in episodes]

    def mean(rows, k):
        return float(np.mean([r[k] for r in rows]))
    return {"jerkiness": mean(base, "jerkiness") / mean(ours, "jerkiness"),
            "displacement": mean(base, "displacement") / mean(ours, "displacement")}
