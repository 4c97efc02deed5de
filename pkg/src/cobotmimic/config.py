"""Run configuration: one YAML file holding every stage's settings.

``template_text()`` emits the full default file with a comment per field;
``load_config`` validates it into a ``RunConfig`` whose sections are the
library's own config dataclasses.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .arms import RobotSpec, load_robot
from .irl import AirlConfig, IrlError
from .planners import PlannerConfig, PlanningError
from .retarget import IkOptConfig
from .world import NoiseConfig, TaskConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Seeds:
    demos: int = 0          # first seed of the training demonstrations
    heldout: int = 500      # first seed of the held-out demonstrations
    train: int = 0          # network initialization and minibatch order
    benchmark: int = 100    # first seed of the benchmark episodes


@dataclass(frozen=True)
class Counts:
    demos: int = 10
    heldout: int = 40
    episodes: int = 10

    def __post_init__(self):
        if min(self.demos, self.heldout, self.episodes) < 1:
            raise ConfigError("counts must be positive")


@dataclass(frozen=True)
class TrainSettings:
    fk_samples: int = 20000
    fk_steps: int = 12000
    human_ik_steps: int = 3000
    predictor_steps: int = 1500
    fk_rmse_bound: float = 0.02
    predictor_rmse_bound: float = 0.05
    human_ik_rmse_bound: float = 0.05

    def __post_init__(self):
        if min(self.fk_steps, self.human_ik_steps, self.predictor_steps) < 1:
            raise ConfigError("training steps must be positive")
        if self.fk_samples < 1000:
            raise ConfigError("fk_samples must be at least 1000")


@dataclass(frozen=True)
class PlannerSettings:
    step_size: float = 0.05
    goal_tolerance: float = 0.02
    max_nodes: int = 5000
    goal_bias: float = 0.05
    collision_resolution: float = 0.001

    def to_planner(self, task: TaskConfig) -> PlannerConfig:
        return PlannerConfig(bounds_lo=task.bounds_lo, bounds_hi=task.bounds_hi, **asdict(self))


@dataclass(frozen=True)
class RunConfig:
    task: str = "sorting"
    robot: str = "sawyer_like"
    output_dir: str = "run"
    horizon: int = 80
    seeds: Seeds = field(default_factory=Seeds)
    counts: Counts = field(default_factory=Counts)
    noise: NoiseConfig = field(default_factory=lambda: NoiseConfig(keypoint_noise_std=0.005))
    train: TrainSettings = field(default_factory=TrainSettings)
    ik: IkOptConfig = field(default_factory=IkOptConfig)
    planner: PlannerSettings = field(default_factory=PlannerSettings)
    airl: AirlConfig = field(default_factory=AirlConfig)

    @property
    def task_config(self) -> TaskConfig:
        return TaskConfig.pouring() if self.task == "pouring" else TaskConfig()

    def robot_spec(self) -> RobotSpec:
        return load_robot(self.robot)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["airl"]["hidden"] = list(self.airl.hidden)
        return d

    def digest(self) -> str:
        """sha256 of the canonical JSON form."""
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()


SECTIONS = {"seeds": Seeds, "counts": Counts, "noise": NoiseConfig, "train": TrainSettings,
            "ik": IkOptConfig, "planner": PlannerSettings, "airl": AirlConfig}

COMMENTS = {
    "task": "sorting or pouring",
    "robot": "bundled robot name (sawyer_like, kuka_like) or path to a robot JSON file",
    "output_dir": "every artifact of the run is written below this directory",
    "horizon": "step limit of a benchmark policy episode",
    "seeds.demos": "first seed of the training demonstrations",
    "seeds.heldout": "first seed of the held-out demonstrations used by eval",
    "seeds.train": "network initialization and minibatch order",
    "seeds.benchmark": "first seed of the benchmark episodes",
    "counts.demos": "number of training demonstrations",
    "counts.heldout": "number of held-out demonstrations",
    "counts.episodes": "number of benchmark episodes",
    "noise.keypoint_noise_std": "Gaussian keypoint noise, meters",
    "noise.dropout_prob": "probability that a keypoint frame is lost",
    "noise.detection_miss_prob": "probability that a detection falls below the confidence bar",
    "noise.pixel_noise_std": "detector pixel noise",
    "noise.depth_noise_std_mm": "depth noise, millimeters",
    "train.fk_samples": "joint samples drawn for the learned forward kinematics",
    "train.fk_steps": "Adam steps for the forward kinematics model",
    "train.human_ik_steps": "Adam steps for the human arm model",
    "train.predictor_steps": "Adam steps for each gap-filling predictor",
    "train.fk_rmse_bound": "held-out per-axis RMSE limit for the FK model, meters",
    "train.predictor_rmse_bound": "held-out per-axis RMSE limit for the gap-filling predictors, meters",
    "train.human_ik_rmse_bound": "held-out per-axis RMSE limit for the human arm model, meters",
    "ik.alpha": "weight of the joint adjustment penalty",
    "ik.lr": "initial Adam learning rate of the joint refinement",
    "ik.max_iters": "iteration cap of the joint refinement",
    "ik.decay_factor": "learning-rate decay factor",
    "ik.decay_interval": "steps between learning-rate decays",
    "ik.pos_threshold": "stop once the position error is below this, meters",
    "ik.clip_norm": "gradient norm cap",
    "ik.squared_position": "use the squared position error instead of the distance",
    "planner.step_size": "tree extension length, meters",
    "planner.goal_tolerance": "distance at which the goal counts as reached, meters",
    "planner.max_nodes": "node budget before a plan is declared failed",
    "planner.goal_bias": "probability of sampling the goal itself",
    "planner.collision_resolution": "segment check spacing, meters",
    "airl.disc_lr": "discriminator learning rate",
    "airl.policy_lr": "policy learning rate",
    "airl.iterations": "adversarial iterations",
    "airl.rollouts_per_iter": "policy rollouts per iteration",
    "airl.entropy_coef": "entropy bonus weight in the return",
    "airl.kl_step_bound": "largest allowed mean KL between successive policies",
    "airl.seed": "seed of rollouts and discriminator batches",
    "airl.disc_steps": "discriminator updates per iteration",
    "airl.disc_batch": "discriminator minibatch size",
    "airl.policy_epochs": "policy gradient epochs per iteration",
    "airl.init_kl_penalty": "starting KL penalty weight (adapted during training)",
    "airl.gae_lambda": "advantage smoothing factor",
    "airl.bc_coef": "weight of the behavior-cloning anchor on expert pairs",
    "airl.disc_lr_decay": "decay the discriminator learning rate linearly to zero",
    "airl.value_steps": "value baseline updates per iteration",
    "airl.warm_start_steps": "behavior-cloning steps before adversarial training",
    "airl.warm_start_lr": "behavior-cloning learning rate",
    "airl.init_log_std": "initial log standard deviation of the policy",
    "airl.hidden": "hidden layer widths of the policy and discriminator networks",
    "airl.clip_norm": "gradient norm cap",
}


def _yaml_scalar(v) -> str:
    return yaml.safe_dump(v, default_flow_style=True).strip().removesuffix("...").strip()


def template_text(cfg: RunConfig | None = None) -> str:
    """Complete YAML for ``cfg`` (defaults when omitted), one comment per field."""
    d = (cfg or RunConfig()).to_dict()
    lines = ["# cobotmimic run configuration"]
    for key, value in d.items():
        if isinstance(value, dict):
            lines.append(f"{key}:")
            for k, v in value.items():
                lines.append(f"  {k}: {_yaml_scalar(v)}  # {COMMENTS[f'{key}.{k}']}")
        else:
            lines.append(f"{key}: {_yaml_scalar(value)}  # {COMMENTS[key]}")
    return "\n".join(lines) + "\n"


def _section(cls, raw, name):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    if cls is AirlConfig and "hidden" in raw:
        raw = dict(raw, hidden=tuple(raw["hidden"]))
    try:
        return cls(**raw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid {name!r} section: {e}") from e


def config_from_dict(d: dict) -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError("configuration must be a mapping")
    top = {f.name for f in fields(RunConfig)}
    unknown = set(d) - top
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    kw = {k: _section(cls, d.get(k), k) for k, cls in SECTIONS.items()}
    for k in ("task", "robot", "output_dir", "horizon"):
        if k in d:
            kw[k] = d[k]
    cfg = RunConfig(**kw)
    if cfg.task not in ("sorting", "pouring"):
        raise ConfigError(f"task must be sorting or pouring, got {cfg.task!r}")
    if not isinstance(cfg.horizon, int) or cfg.horizon < 1:
        raise ConfigError("horizon must be a positive integer")
    try:
        cfg.robot_spec()
    except (OSError, ValueError, KeyError) as e:
        raise ConfigError(f"cannot load robot {cfg.robot!r}: {e}") from e
    return cfg


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        raw = yaml.safe_load(p.read_text()) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse {p}: {e}") from e
    try:
        return config_from_dict(raw)
    except (IrlError, PlanningError) as e:
        raise ConfigError(str(e)) from e
