"""Adversarial inverse reinforcement learning on the desk-scale sorting MDP.

The discriminator is built from a learned advantage approximator ``f(s, a)``
and the current policy density: ``D = exp(f) / (exp(f) + pi(a|s))``, always
evaluated in log space as ``sigmoid(f - log pi)``. The recovered reward is
``logit(D) = f - log pi``. The policy is a tanh-bounded diagonal Gaussian
improved by a KL-penalized policy gradient whose per-iteration KL is held
under a bound by backtracking.

By default the policy is warm-started by regression onto the demonstrated
actions and keeps a squared-error anchor to them during adversarial updates;
at desk-scale budgets the adversarial signal alone is too noisy to hold the
centimetre precision the task needs near grasp and release points.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .nn import AdamState, ModelSpec, Network, adam_step, clip_grad_norm
from .world import (SceneState, TaskConfig, expert_action, object_of_interest, random_scene,
                    step_scene)

LOG_STD_MIN = -5.0
LOG_STD_MAX = 1.0
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
HALF_LOG_2PIE = 0.5 * math.log(2.0 * math.pi * math.e)
LBA_TOLERANCE = 0.02
PIN_PATIENCE = 50


class IrlError(ValueError):
    pass


# ---------------------------------------------------------------------- mdp
@dataclass(frozen=True)
class SortingMdp:
    """Deterministic sorting dynamics; randomness enters only through the initial scene."""
    task: TaskConfig = field(default_factory=TaskConfig)
    gamma: float = 0.99
    horizon: int = 40

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise IrlError("gamma must lie in [0, 1)")
        if self.horizon < 1:
            raise IrlError("horizon must be at least 1")

    @property
    def max_step(self) -> float:
        return self.task.max_step

    def reset(self, rng: np.random.Generator) -> SceneState:
        return random_scene(self.task, rng)

    def observe(self, scene: SceneState):
        """``(eef, obj_loc, label)`` as seen by the policy."""
        _, label, loc = object_of_interest(self.task, scene)
        return np.asarray(scene.eef, dtype=np.float64), np.asarray(loc, dtype=np.float64), label


def mdp_step(mdp: SortingMdp, s: SceneState, a) -> SceneState:
    a = np.asarray(a, dtype=np.float64)
    if a.shape != (3,) or not np.all(np.isfinite(a)):
        raise IrlError(f"action must be a finite 3-vector, got {a!r}")
    if np.max(np.abs(a)) > mdp.max_step + 1e-12:
        raise IrlError(f"action {a} exceeds the per-step limit {mdp.max_step}")
    return step_scene(mdp.task, s, a)[0]


# ----------------------------------------------------------------- encoding
ENC_DIM = 14
REL_SCALE = 0.2


def encode_states(task: TaskConfig, eef, obj_loc, labels) -> np.ndarray:
    """Workspace-normalized features: eef, object, label one-hot, offset, held and present flags.

    Positions map to [-1, 1] over the task bounds. An absent object (the
    ``-inf`` sentinel) encodes as the eef location with the present flag off.
    """
    eef = np.atleast_2d(np.asarray(eef, dtype=np.float64))
    obj = np.atleast_2d(np.asarray(obj_loc, dtype=np.float64)).copy()
    if isinstance(labels, str):
        labels = [labels]
    lo, hi = np.asarray(task.bounds_lo), np.asarray(task.bounds_hi)
    present = np.all(np.isfinite(obj), axis=1)
    obj[~present] = eef[~present]
    rel = obj - eef
    held = present & (np.linalg.norm(rel, axis=1) < 1e-6)
    onehot = np.zeros((len(eef), 3))
    for i, lab in enumerate(labels):
        onehot[i, task.labels.index(lab)] = 1.0
    return np.concatenate([
        2.0 * (eef - lo) / (hi - lo) - 1.0,
        2.0 * (obj - lo) / (hi - lo) - 1.0,
        onehot,
        rel / REL_SCALE,
        held[:, None].astype(np.float64),
        present[:, None].astype(np.float64),
    ], axis=1)


# ------------------------------------------------------------------- policy
class GaussianPolicy:
    """Diagonal Gaussian with mean ``max_step * tanh(net(x))`` and a learned log-std vector."""

    def __init__(self, task: TaskConfig, net: Network | None = None, log_std=None,
                 hidden=(64, 64), seed: int = 0):
        self.task = task
        self.net = net or Network(ModelSpec.mlp(ENC_DIM, hidden, 3, seed))
        ls = np.full(3, -3.0) if log_std is None else np.asarray(log_std, dtype=np.float64)
        self.log_std = np.clip(ls, LOG_STD_MIN, LOG_STD_MAX)

    @property
    def max_step(self) -> float:
        return self.task.max_step

    def copy(self) -> "GaussianPolicy":
        return GaussianPolicy(self.task, self.net.copy(), self.log_std.copy())

    def get_flat(self) -> np.ndarray:
        return np.concatenate([self.net.params, self.log_std])

    def set_flat(self, flat) -> None:
        n = self.net.spec.n_params
        self.net.params = np.asarray(flat[:n], dtype=np.float64).copy()
        self.log_std = np.clip(np.asarray(flat[n:], dtype=np.float64), LOG_STD_MIN, LOG_STD_MAX)

    def mean_from_encoded(self, x) -> np.ndarray:
        u, _ = self.net.forward(x)
        return self.max_step * np.tanh(u)

    def mean_action(self, eef, obj_loc, label) -> np.ndarray:
        return self.mean_from_encoded(encode_states(self.task, eef, obj_loc, label))[0]

    def log_prob_encoded(self, x, a) -> np.ndarray:
        return gaussian_log_prob(self.mean_from_encoded(x), self.log_std, a)

    def entropy(self) -> float:
        return gaussian_entropy(self.log_std)


class ExpertPolicy:
    """The scripted expert exposed through the policy interface (for self-tests)."""

    def __init__(self, task: TaskConfig):
        self.task = task

    def mean_action(self, eef, obj_loc, label) -> np.ndarray:
        return expert_action(self.task, eef, obj_loc, label)


def gaussian_log_prob(mean, log_std, a) -> np.ndarray:
    z = (np.asarray(a, dtype=np.float64) - mean) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - HALF_LOG_2PI, axis=-1)


def gaussian_entropy(log_std) -> float:
    return float(np.sum(np.asarray(log_std) + HALF_LOG_2PIE))


def gaussian_kl(mu_old, ls_old, mu_new, ls_new) -> np.ndarray:
    """KL(old || new) per row for diagonal Gaussians."""
    var_old, var_new = np.exp(2 * ls_old), np.exp(2 * ls_new)
    return np.sum(ls_new - ls_old + (var_old + (mu_old - mu_new) ** 2) / (2 * var_new) - 0.5, axis=-1)


# ------------------------------------------------------ discriminator, reward
class AdvantageModel:
    """``f(s, a)``: an MLP over the encoded state and the action scaled by the step limit."""

    def __init__(self, task: TaskConfig, net: Network | None = None, hidden=(64, 64), seed: int = 0):
        self.task = task
        self.net = net or Network(ModelSpec.mlp(ENC_DIM + 3, hidden, 1, seed))

    def inputs(self, x, a) -> np.ndarray:
        return np.concatenate([x, np.asarray(a, dtype=np.float64) / self.task.max_step], axis=1)

    def value_encoded(self, x, a) -> np.ndarray:
        out, _ = self.net.forward(self.inputs(x, a))
        return out[:, 0]


def _log_sigmoid(z):
    return -np.logaddexp(0.0, -z)


def discriminator_prob(f, log_pi):
    """``exp(f) / (exp(f) + pi)`` computed as ``sigmoid(f - log pi)``."""
    z = np.asarray(f, dtype=np.float64) - np.asarray(log_pi, dtype=np.float64)
    return np.exp(_log_sigmoid(z))


def discriminator_prob_model(f_model: AdvantageModel, policy: GaussianPolicy, x, a):
    return discriminator_prob(f_model.value_encoded(x, a), policy.log_prob_encoded(x, a))


def reward_from_disc(d):
    """``log D - log(1 - D)``."""
    d = np.asarray(d, dtype=np.float64)
    if np.any(d <= 0) or np.any(d >= 1):
        raise IrlError("discriminator output must lie strictly inside (0, 1)")
    return np.log(d) - np.log1p(-d)


def learned_reward(f_model: AdvantageModel, policy: GaussianPolicy, x, a) -> np.ndarray:
    """The recovered reward, taken directly as ``f - log pi`` (identical to the logit of D)."""
    return f_model.value_encoded(x, a) - policy.log_prob_encoded(x, a)


# ------------------------------------------------------------- trajectories
@dataclass
class Trajectory:
    eef: np.ndarray                 # (T, 3)
    obj_loc: np.ndarray             # (T, 3)
    labels: list[str]
    actions: np.ndarray             # (T, 3)
    logp: np.ndarray                # (T,), nan for demonstrations
    scenes: list[SceneState] | None = None   # (T + 1) visited scenes for rollouts

    def __len__(self):
        return len(self.actions)

    def encoded(self, task: TaskConfig) -> np.ndarray:
        return encode_states(task, self.eef, self.obj_loc, self.labels)


@dataclass
class TrajectoryBatch:
    trajectories: list[Trajectory]

    def __len__(self):
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    def __getitem__(self, i):
        return self.trajectories[i]

    def flat(self, task: TaskConfig):
        """Stacked encoded states and actions of every step."""
        x = np.concatenate([t.encoded(task) for t in self.trajectories])
        a = np.concatenate([t.actions for t in self.trajectories])
        return x, a

    def pairs(self):
        """``((eef, obj_loc, label), action)`` for every step."""
        return [((t.eef[i], t.obj_loc[i], t.labels[i]), t.actions[i])
                for t in self.trajectories for i in range(len(t))]


def trajectories_from_demos(demos) -> TrajectoryBatch:
    out = []
    for d in demos:
        pairs = d.state_action_pairs()
        if not pairs:
            continue
        out.append(Trajectory(
            eef=np.array([p[0] for p in pairs]), obj_loc=np.array([p[1] for p in pairs]),
            labels=[p[2] for p in pairs], actions=np.array([p[3] for p in pairs]),
            logp=np.full(len(pairs), np.nan)))
    return TrajectoryBatch(out)


def rollout(policy: GaussianPolicy, mdp: SortingMdp, horizon: int, n: int, seed: int,
            initial: SceneState | None = None) -> TrajectoryBatch:
    """Sample ``n`` episodes in lockstep; each stream has its own child seed.

    Initial scenes are drawn from the task's scene distribution unless
    ``initial`` fixes a common starting scene.

    Sampled actions are clipped to the per-step box before execution and the
    stored log-density is that of the executed action. An episode ends when
    every object is sorted or after ``horizon`` steps.
    """
    if horizon < 1:
        raise IrlError("horizon must be at least 1")
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]
    scenes = [[initial if initial is not None else mdp.reset(r)] for r in rngs]
    obs = [[] for _ in range(n)]
    acts = [[] for _ in range(n)]
    logps = [[] for _ in range(n)]
    live = list(range(n))
    std = np.exp(policy.log_std)
    for _ in range(horizon):
        if not live:
            break
        cur = [mdp.observe(scenes[i][-1]) for i in live]
        x = encode_states(mdp.task, [c[0] for c in cur], [c[1] for c in cur], [c[2] for c in cur])
        mu = policy.mean_from_encoded(x)
        still = []
        for k, i in enumerate(live):
            raw = mu[k] + std * rngs[i].standard_normal(3)
            a = np.clip(raw, -mdp.max_step, mdp.max_step)
            obs[i].append(cur[k])
            acts[i].append(a)
            logps[i].append(float(gaussian_log_prob(mu[k], policy.log_std, a)))
            nxt = mdp_step(mdp, scenes[i][-1], a)
            scenes[i].append(nxt)
            if not nxt.done:
                still.append(i)
        live = still
    out = []
    for i in range(n):
        out.append(Trajectory(
            eef=np.array([o[0] for o in obs[i]]), obj_loc=np.array([o[1] for o in obs[i]]),
            labels=[o[2] for o in obs[i]], actions=np.array(acts[i]), logp=np.array(logps[i]),
            scenes=scenes[i]))
    return TrajectoryBatch(out)


def entropy_regularized_return(traj: Trajectory, reward_fn, gamma: float,
                               policy: GaussianPolicy | None = None, entropy_coef: float = 1.0) -> float:
    """``sum_t gamma^t (R(s_t, a_t) + c * H(pi(.|s_t)))`` with Gaussian differential entropy.

    ``reward_fn`` takes the trajectory and returns its length-T reward vector.
    Without a policy the entropy term is zero.
    """
    if len(traj) == 0:
        raise IrlError("trajectory is empty")
    r = np.asarray(reward_fn(traj), dtype=np.float64)
    h = policy.entropy() if policy is not None else 0.0
    disc = gamma ** np.arange(len(traj))
    return float(np.sum(disc * (r + entropy_coef * h)))


# ---------------------------------------------------------------------- lba
def evaluate_lba(policy, expert_pairs, tolerance: float = LBA_TOLERANCE) -> float:
    """Percentage of expert pairs whose action the policy's mean action matches within ``tolerance``."""
    if tolerance <= 0:
        raise IrlError("tolerance must be positive")
    pairs = list(expert_pairs)
    if not pairs:
        raise IrlError("no expert state-action pairs to evaluate")
    hits = 0
    for (eef, obj, label), a in pairs:
        m = np.asarray(policy.mean_action(eef, obj, label)).reshape(3)
        hits += np.linalg.norm(m - np.asarray(a, dtype=np.float64)) < tolerance
    return 100.0 * hits / len(pairs)


# ----------------------------------------------------------------- training
@dataclass(frozen=True)
class AirlConfig:
    disc_lr: float = 1e-3
    policy_lr: float = 1e-3
    iterations: int = 150
    rollouts_per_iter: int = 16
    entropy_coef: float = 0.0
    kl_step_bound: float = 0.01
    seed: int = 0
    disc_steps: int = 2
    disc_batch: int = 128
    policy_epochs: int = 20
    init_kl_penalty: float = 1.0
    gae_lambda: float = 0.5
    bc_coef: float = 100.0
    disc_lr_decay: bool = True
    value_steps: int = 50
    warm_start_steps: int = 4000
    warm_start_lr: float = 1e-3
    init_log_std: float = -5.0
    hidden: tuple[int, int] = (64, 64)
    clip_norm: float = 1.0

    def __post_init__(self):
        if self.disc_lr <= 0 or self.policy_lr <= 0 or self.warm_start_lr <= 0:
            raise IrlError("learning rates must be positive")
        if self.kl_step_bound <= 0:
            raise IrlError("kl_step_bound must be positive")
        if self.iterations < 0 or self.rollouts_per_iter < 1:
            raise IrlError("iterations must be >= 0 and rollouts_per_iter >= 1")
        if self.entropy_coef < 0:
            raise IrlError("entropy_coef must be non-negative")


@dataclass
class AirlHistory:
    iteration: list[int] = field(default_factory=list)
    disc_accuracy: list[float] = field(default_factory=list)
    mean_return: list[float] = field(default_factory=list)
    mean_kl: list[float] = field(default_factory=list)
    kl_penalty: list[float] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "disc_accuracy", "mean_return", "mean_kl"])
        for row in zip(self.iteration, self.disc_accuracy, self.mean_return, self.mean_kl):
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
        return buf.getvalue()


@dataclass
class AirlResult:
    reward_model: AdvantageModel
    policy: GaussianPolicy
    history: AirlHistory
    warm_start_loss: float = float("nan")


def warm_start_policy(policy: GaussianPolicy, x, a, steps: int, lr: float, batch: int,
                      rng: np.random.Generator, clip_norm: float = 1.0) -> float:
    """Regress the policy mean onto demonstrated actions; returns the final batch MSE."""
    state = AdamState.zeros_like(policy.net.params, lr)
    params = policy.net.params
    loss = float("nan")
    m = policy.max_step
    for _ in range(steps):
        idx = rng.choice(len(x), size=min(batch, len(x)), replace=False)
        policy.net.params = params
        u, _ = policy.net.forward(x[idx])
        t = np.tanh(u)
        diff = m * t - a[idx]
        loss = float(np.mean(diff * diff))
        g_u = 2.0 * diff / diff.size * m * (1.0 - t * t)
        grads, _ = policy.net.backward(g_u)
        params, state = adam_step(params, clip_grad_norm(grads, clip_norm), state)
    policy.net.params = params
    return loss


def _disc_update(f_model, policy, xe, ae, xp, ap, cfg, state, rng, lr):
    """Binary cross-entropy steps on ``logit = f - log pi``; expert label 1, policy label 0."""
    params = f_model.net.params
    for _ in range(cfg.disc_steps):
        ie = rng.choice(len(xe), size=min(cfg.disc_batch, len(xe)), replace=False)
        ip = rng.choice(len(xp), size=min(cfg.disc_batch, len(xp)), replace=False)
        x = np.concatenate([xe[ie], xp[ip]])
        a = np.concatenate([ae[ie], ap[ip]])
        y = np.concatenate([np.ones(len(ie)), np.zeros(len(ip))])
        w = np.concatenate([np.full(len(ie), 0.5 / len(ie)), np.full(len(ip), 0.5 / len(ip))])
        logp = policy.log_prob_encoded(x, a)
        f_model.net.params = params
        f, _ = f_model.net.forward(f_model.inputs(x, a))
        z = f[:, 0] - logp
        g = (np.exp(_log_sigmoid(z)) - y) * w
        grads, _ = f_model.net.backward(g[:, None])
        params, state = adam_step(params, clip_grad_norm(grads, cfg.clip_norm), state, lr)
    f_model.net.params = params
    return state


def _disc_accuracy(f_model, policy, xe, ae, xp, ap) -> float:
    de = discriminator_prob_model(f_model, policy, xe, ae)
    dp = discriminator_prob_model(f_model, policy, xp, ap)
    return 0.5 * float(np.mean(de > 0.5)) + 0.5 * float(np.mean(dp < 0.5))


class ValueBaseline:
    """State-value regressor used only to reduce policy-gradient variance."""

    def __init__(self, hidden=(64, 64), seed: int = 0, lr: float = 1e-3):
        self.net = Network(ModelSpec.mlp(ENC_DIM, hidden, 1, seed))
        self.state = AdamState.zeros_like(self.net.params, lr)
        self.scale = 1.0

    def __call__(self, x) -> np.ndarray:
        out, _ = self.net.forward(x)
        return out[:, 0] * self.scale

    def fit(self, x, targets, steps: int, batch: int, rng: np.random.Generator, clip_norm: float):
        self.scale = max(float(np.std(targets)), 1e-6) if self.scale == 1.0 else self.scale
        y = targets / self.scale
        params = self.net.params
        for _ in range(steps):
            idx = rng.choice(len(x), size=min(batch, len(x)), replace=False)
            self.net.params = params
            pred, _ = self.net.forward(x[idx])
            g = 2.0 * (pred[:, 0] - y[idx]) / len(idx)
            grads, _ = self.net.backward(g[:, None])
            params, self.state = adam_step(params, clip_grad_norm(grads, clip_norm), self.state)
        self.net.params = params


def _advantages(rewards: list[np.ndarray], values: list[np.ndarray], dones: list[bool],
                gamma: float, lam: float):
    """Generalized advantage estimates and the matching value targets.

    A stream cut off by the horizon bootstraps from the value of its last
    state; a finished stream bootstraps from zero.
    """
    advs, targets = [], []
    for r, v, done in zip(rewards, values, dones):
        n = len(r)
        nxt = np.append(v[1:], 0.0 if done else v[-1])
        delta = r + gamma * nxt - v
        a = np.zeros(n)
        acc = 0.0
        for t in range(n - 1, -1, -1):
            acc = delta[t] + gamma * lam * acc
            a[t] = acc
        advs.append(a)
        targets.append(a + v)
    adv = np.concatenate(advs)
    sd = adv.std()
    return (adv - adv.mean()) / (sd if sd > 1e-12 else 1.0), np.concatenate(targets)


def _policy_objective_grad(policy, x, a, logp_old, adv, mu_old, ls_old, beta, entropy_coef):
    """Surrogate ``mean(ratio * A) + c*H - beta*KL`` and its gradient (flat, ascent direction)."""
    u, _ = policy.net.forward(x)
    t = np.tanh(u)
    mu = policy.max_step * t
    ls = policy.log_std
    inv_var = np.exp(-2 * ls)
    diff = a - mu
    logp = np.sum(-0.5 * diff * diff * inv_var - ls - HALF_LOG_2PI, axis=1)
    ratio = np.exp(logp - logp_old)
    n = len(x)
    kl = gaussian_kl(mu_old, ls_old, mu, ls)
    obj = float(np.mean(ratio * adv) + entropy_coef * gaussian_entropy(ls) - beta * np.mean(kl))
    w = (ratio * adv / n)[:, None]
    g_mu = w * diff * inv_var - beta / n * (mu - mu_old) * inv_var
    g_ls = np.sum(w * (diff * diff * inv_var - 1.0), axis=0)
    var_old = np.exp(2 * ls_old)
    g_ls -= beta / n * np.sum(1.0 - (var_old + (mu_old - mu) ** 2) * inv_var, axis=0)
    g_ls += entropy_coef
    g_u = g_mu * policy.max_step * (1.0 - t * t)
    g_net, _ = policy.net.backward(g_u)
    return obj, np.concatenate([g_net, g_ls]), float(np.mean(kl))


def _anchor_grad(policy, xe, ae, coef):
    """Gradient (ascent direction) of ``-coef * mean ||mu(s_e) - a_e||^2 / max_step^2``."""
    u, _ = policy.net.forward(xe)
    t = np.tanh(u)
    m = policy.max_step
    g_mu = -2.0 * coef * (m * t - ae) / (len(xe) * m * m)
    g_net, _ = policy.net.backward(g_mu * m * (1.0 - t * t))
    return np.concatenate([g_net, np.zeros(3)])


def _policy_update(policy, x, a, logp_old, adv, cfg, beta, xe=None, ae=None):
    """KL-penalized ascent, then backtrack until the mean KL respects the step bound.

    With ``cfg.bc_coef > 0`` the objective also carries a squared-error anchor
    to the demonstrated actions ``(xe, ae)``.
    """
    mu_old = policy.mean_from_encoded(x)
    ls_old = policy.log_std.copy()
    start = policy.get_flat()
    flat = start.copy()
    state = AdamState.zeros_like(flat, cfg.policy_lr)
    for _ in range(cfg.policy_epochs):
        policy.set_flat(flat)
        _, g, _ = _policy_objective_grad(policy, x, a, logp_old, adv, mu_old, ls_old, beta, cfg.entropy_coef)
        if cfg.bc_coef > 0 and xe is not None:
            g = g + _anchor_grad(policy, xe, ae, cfg.bc_coef)
        flat, state = adam_step(flat, -clip_grad_norm(g, cfg.clip_norm), state)
    step = flat - start
    kl = 0.0
    for _ in range(30):
        policy.set_flat(start + step)
        kl = float(np.mean(gaussian_kl(mu_old, ls_old, policy.mean_from_encoded(x), policy.log_std)))
        if kl <= cfg.kl_step_bound:
            break
        step *= 0.5
    else:
        policy.set_flat(start)
        kl = 0.0
    if kl > 1.5 * cfg.kl_step_bound / 2:
        beta *= 2.0
    elif kl < cfg.kl_step_bound / 2 / 1.5:
        beta /= 2.0
    return kl, float(np.clip(beta, 1e-4, 1e4))


def train_airl(demos: TrajectoryBatch, mdp: SortingMdp, cfg: AirlConfig = AirlConfig()) -> AirlResult:
    """Alternate discriminator and policy updates; deterministic given ``cfg.seed``."""
    if len(demos) < 5:
        raise IrlError(f"need at least 5 demonstration trajectories, got {len(demos)}")
    rng = np.random.default_rng(cfg.seed)
    task = mdp.task
    policy = GaussianPolicy(task, hidden=cfg.hidden, seed=cfg.seed,
                            log_std=np.full(3, cfg.init_log_std))
    f_model = AdvantageModel(task, hidden=cfg.hidden, seed=cfg.seed + 1)
    xe, ae = demos.flat(task)
    ws_loss = float("nan")
    if cfg.warm_start_steps > 0:
        ws_loss = warm_start_policy(policy, xe, ae, cfg.warm_start_steps, cfg.warm_start_lr,
                                    cfg.disc_batch, rng, cfg.clip_norm)
    d_state = AdamState.zeros_like(f_model.net.params, cfg.disc_lr)
    baseline = ValueBaseline(cfg.hidden, cfg.seed + 2)
    beta = cfg.init_kl_penalty
    hist = AirlHistory()
    pinned = 0
    roll_seeds = np.random.SeedSequence(cfg.seed).generate_state(max(cfg.iterations, 1))
    for it in range(cfg.iterations):
        batch = rollout(policy, mdp, mdp.horizon, cfg.rollouts_per_iter, int(roll_seeds[it]))
        xp, ap = batch.flat(task)
        d_lr = cfg.disc_lr * (1.0 - it / cfg.iterations) if cfg.disc_lr_decay else cfg.disc_lr
        d_state = _disc_update(f_model, policy, xe, ae, xp, ap, cfg, d_state, rng, d_lr)
        acc = _disc_accuracy(f_model, policy, xe, ae, xp, ap)
        encoded = [t.encoded(task) for t in batch]
        rewards = [learned_reward(f_model, policy, xt, t.actions) for xt, t in zip(encoded, batch)]
        returns = [entropy_regularized_return(t, lambda _t, r=r: r, mdp.gamma, policy, cfg.entropy_coef)
                   for t, r in zip(batch, rewards)]
        values = [baseline(xt) for xt in encoded]
        dones = [t.scenes[-1].done for t in batch]
        adv, targets = _advantages([r + cfg.entropy_coef * policy.entropy() for r in rewards],
                                   values, dones, mdp.gamma, cfg.gae_lambda)
        baseline.fit(xp, targets, cfg.value_steps, cfg.disc_batch, rng, cfg.clip_norm)
        logp_old = np.concatenate([t.logp for t in batch])
        kl, beta = _policy_update(policy, xp, ap, logp_old, adv, cfg, beta, xe, ae)
        hist.iteration.append(it)
        hist.disc_accuracy.append(acc)
        hist.mean_return.append(float(np.mean(returns)))
        hist.mean_kl.append(kl)
        hist.kl_penalty.append(beta)
        pinned = pinned + 1 if acc >= 1.0 else 0
        if pinned == PIN_PATIENCE:
            msg = (f"discriminator accuracy pinned at 1.0 for {PIN_PATIENCE} iterations "
                   f"(iteration {it}); the policy may have collapsed")
            hist.warnings.append(msg)
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return AirlResult(f_model, policy, hist, ws_loss)


# -------------------------------------------------------------- checkpoints
def _task_for(name: str) -> TaskConfig:
    return TaskConfig.pouring() if name == "pouring" else TaskConfig()


def save_policy(path, policy: GaussianPolicy, meta: dict | None = None) -> None:
    m = {"kind": "airl-policy", "task": policy.task.name}
    m.update(meta or {})
    save_checkpoint(path, policy.net, m, {"log_std": policy.log_std})


def load_policy(path, task: TaskConfig | None = None) -> GaussianPolicy:
    net, meta, extras = load_checkpoint(path)
    if meta.get("kind") != "airl-policy":
        raise IrlError(f"{path} is not a policy checkpoint")
    return GaussianPolicy(task or _task_for(meta.get("task", "sorting")), net,
                          extras["log_std"])


def save_reward_model(path, model: AdvantageModel, meta: dict | None = None) -> None:
    m = {"kind": "airl-reward", "task": model.task.name}
    m.update(meta or {})
    save_checkpoint(path, model.net, m)


def load_reward_model(path, task: TaskConfig | None = None) -> AdvantageModel:
    net, meta, _ = load_checkpoint(path)
    if meta.get("kind") != "airl-reward":
        raise IrlError(f"{path} is not a reward-model checkpoint")
    return AdvantageModel(task or _task_for(meta.get("task", "sorting")), net)


def expert_rollout(mdp: SortingMdp, scene: SceneState) -> Trajectory:
    """Expert episode from a given scene, in trajectory form."""
    eef, obj, labels, acts, scenes = [], [], [], [], [scene]
    for _ in range(mdp.horizon):
        if scenes[-1].done:
            break
        e, o, lab = mdp.observe(scenes[-1])
        a = expert_action(mdp.task, e, o, lab)
        eef.append(e), obj.append(o), labels.append(lab), acts.append(a)
        scenes.append(mdp_step(mdp, scenes[-1], a))
    return Trajectory(np.array(eef), np.array(obj), labels, np.array(acts),
                      np.full(len(acts), np.nan), scenes)
