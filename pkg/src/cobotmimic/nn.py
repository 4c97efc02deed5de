"""Small trainable networks on numpy: dense and LSTM layers, MSE, Adam.

All arithmetic is float64. Parameters of a network live in one flat array so
that optimizers, clipping and checkpoints can treat them as a single vector;
each layer holds reshaped views into it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

KINDS = ("dense", "recurrent")
ACTIVATIONS = ("relu", "linear")


class ShapeError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class Layer:
    kind: str
    in_dim: int
    out_dim: int
    activation: str = "linear"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.in_dim <= 0 or self.out_dim <= 0:
            raise ValueError("layer dimensions must be positive")

    def param_shapes(self) -> list[tuple[int, ...]]:
        if self.kind == "dense":
            return [(self.in_dim, self.out_dim), (self.out_dim,)]
        h4 = 4 * self.out_dim
        return [(self.in_dim, h4), (self.out_dim, h4), (h4,)]


@dataclass(frozen=True)
class ModelSpec:
    layers: tuple[Layer, ...]
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ValueError("model needs at least one layer")
        for i in range(1, len(self.layers)):
            prev, cur = self.layers[i - 1], self.layers[i]
            if prev.out_dim != cur.in_dim:
                raise ShapeError(
                    f"layer {i} expects {cur.in_dim} inputs but layer {i - 1} gives {prev.out_dim}")
            if prev.kind == "dense" and cur.kind == "recurrent":
                raise ValueError("recurrent layers must precede dense layers")

    @classmethod
    def mlp(cls, in_dim: int, hidden: Sequence[int], out_dim: int, seed: int = 0) -> "ModelSpec":
        dims = [in_dim, *hidden]
        layers = [Layer("dense", a, b, "relu") for a, b in zip(dims[:-1], dims[1:])]
        layers.append(Layer("dense", dims[-1], out_dim, "linear"))
        return cls(tuple(layers), seed)

    @classmethod
    def recurrent_mlp(cls, in_dim: int, rec_units: Sequence[int], hidden: Sequence[int],
                      out_dim: int, seed: int = 0) -> "ModelSpec":
        dims = [in_dim, *rec_units]
        layers = [Layer("recurrent", a, b) for a, b in zip(dims[:-1], dims[1:])]
        tail = cls.mlp(dims[-1], hidden, out_dim).layers
        return cls(tuple(layers) + tail, seed)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def n_recurrent(self) -> int:
        return sum(layer.kind == "recurrent" for layer in self.layers)

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for layer in self.layers for s in layer.param_shapes())

    def to_dict(self) -> dict:
        return {"seed": self.seed,
                "layers": [{"kind": l.kind, "in_dim": l.in_dim, "out_dim": l.out_dim,
                            "activation": l.activation} for l in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(tuple(Layer(**l) for l in d["layers"]), int(d.get("seed", 0)))


def _sigmoid(z):
    # split form avoids overflow warnings for large |z|
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class Network:
    """A stack of recurrent layers followed by dense layers.

    Dense-only networks accept inputs of shape ``(..., in_dim)``. Networks with
    recurrent layers take sequences shaped ``(batch, time, in_dim)``; a 1-D
    input is treated as a single step of a single stream. ``forward`` caches
    what ``backward`` needs, so calls must alternate forward -> backward.
    """

    def __init__(self, spec: ModelSpec, params: np.ndarray | None = None):
        self.spec = spec
        if params is None:
            params = self._init_params(spec)
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (spec.n_params,):
            raise ShapeError(f"expected {spec.n_params} parameters, got {params.shape}")
        self.params = params.copy()
        self._cache = None

    @staticmethod
    def _init_params(spec: ModelSpec) -> np.ndarray:
        rng = np.random.default_rng(spec.seed)
        chunks = []
        for layer in spec.layers:
            if layer.kind == "dense":
                lim = np.sqrt(6.0 / (layer.in_dim + layer.out_dim))
                chunks.append(rng.uniform(-lim, lim, layer.in_dim * layer.out_dim))
                chunks.append(np.zeros(layer.out_dim))
            else:
                h = layer.out_dim
                lim_x = np.sqrt(6.0 / (layer.in_dim + h))
                lim_h = np.sqrt(6.0 / (2 * h))
                chunks.append(rng.uniform(-lim_x, lim_x, layer.in_dim * 4 * h))
                chunks.append(rng.uniform(-lim_h, lim_h, h * 4 * h))
                b = np.zeros(4 * h)
                b[h:2 * h] = 1.0  # forget gate
                chunks.append(b)
        return np.concatenate(chunks)

    # parameter views are rebuilt on access so that `params` may be reassigned
    def _views(self, flat: np.ndarray) -> list[list[np.ndarray]]:
        out, k = [], 0
        for layer in self.spec.layers:
            vs = []
            for shape in layer.param_shapes():
                n = int(np.prod(shape))
                vs.append(flat[k:k + n].reshape(shape))
                k += n
            out.append(vs)
        return out

    def copy(self) -> "Network":
        return Network(self.spec, self.params)

    def zero_hidden(self, batch: int = 1):
        return tuple((np.zeros((batch, l.out_dim)), np.zeros((batch, l.out_dim)))
                     for l in self.spec.layers if l.kind == "recurrent")

    # ------------------------------------------------------------------ forward
    def forward(self, x, hidden=None):
        """Return ``(output, hidden')``; ``hidden'`` is None for dense-only nets."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.spec.in_dim:
            raise ShapeError(f"layer 0 ({self.spec.layers[0].kind}) expects last dimension "
                             f"{self.spec.in_dim}, got input shape {x.shape}")
        views = self._views(self.params)
        if self.spec.n_recurrent == 0:
            lead = x.shape[:-1]
            a = x.reshape(-1, x.shape[-1])
            acts = [a]
            for layer, (w, b) in zip(self.spec.layers, views):
                a = a @ w + b
                if layer.activation == "relu":
                    a = np.maximum(a, 0.0)
                acts.append(a)
            self._cache = ("dense", lead, acts)
            return a.reshape(*lead, a.shape[-1]), None

        single = x.ndim == 1
        if single:
            x = x[None, None, :]
        if x.ndim != 3:
            raise ShapeError(f"recurrent model expects (batch, time, features), got {x.shape}")
        bsz, steps, _ = x.shape
        if hidden is None:
            hidden = self.zero_hidden(bsz)
        new_hidden, rec_caches = [], []
        seq = x
        li = 0
        for layer, vs in zip(self.spec.layers, views):
            if layer.kind != "recurrent":
                break
            wx, wh, b = vs
            h_prev, c_prev = (np.asarray(v, dtype=np.float64) for v in hidden[li])
            if h_prev.shape != (bsz, layer.out_dim):
                raise ShapeError(f"layer {li} hidden state has shape {h_prev.shape}, "
                                 f"expected {(bsz, layer.out_dim)}")
            H = layer.out_dim
            xw = seq @ wx + b
            hs = np.empty((bsz, steps, H))
            gates = np.empty((bsz, steps, 4 * H))
            cs = np.empty((bsz, steps, H))
            h0, c0 = h_prev, c_prev
            for t in range(steps):
                z = xw[:, t] + h_prev @ wh
                g = np.empty_like(z)
                g[:, :2 * H] = _sigmoid(z[:, :2 * H])
                g[:, 2 * H:3 * H] = np.tanh(z[:, 2 * H:3 * H])
                g[:, 3 * H:] = _sigmoid(z[:, 3 * H:])
                c_prev = g[:, H:2 * H] * c_prev + g[:, :H] * g[:, 2 * H:3 * H]
                h_prev = g[:, 3 * H:] * np.tanh(c_prev)
                gates[:, t] = g
                cs[:, t] = c_prev
                hs[:, t] = h_prev
            rec_caches.append((seq, h0, c0, gates, cs, hs))
            new_hidden.append((h_prev, c_prev))
            seq = hs
            li += 1
        a = seq.reshape(bsz * steps, -1)
        acts = [a]
        for layer, vs in zip(self.spec.layers[li:], views[li:]):
            w, b = vs
            a = a @ w + b
            if layer.activation == "relu":
                a = np.maximum(a, 0.0)
            acts.append(a)
        out = a.reshape(bsz, steps, -1)
        self._cache = ("recurrent", (bsz, steps, single), (rec_caches, acts))
        if single:
            out = out[0, 0]
        return out, tuple(new_hidden)

    def predict(self, x, hidden=None):
        return self.forward(x, hidden)[0]

    # ----------------------------------------------------------------- backward
    def backward(self, grad_out):
        """Gradients for the cached forward pass: ``(param_grads_flat, input_grad)``."""
        if self._cache is None:
            raise RuntimeError("backward called without a cached forward pass")
        kind, meta, store = self._cache
        grad_out = np.asarray(grad_out, dtype=np.float64)
        grads = np.zeros_like(self.params)
        gviews = self._views(grads)
        pviews = self._views(self.params)
        layers = self.spec.layers
        if kind == "dense":
            lead, acts = meta, store
            d = grad_out.reshape(-1, grad_out.shape[-1])
            for i in range(len(layers) - 1, -1, -1):
                if layers[i].activation == "relu":
                    d = d * (acts[i + 1] > 0)
                gviews[i][0][...] = acts[i].T @ d
                gviews[i][1][...] = d.sum(axis=0)
                d = d @ pviews[i][0].T
            return grads, d.reshape(*lead, d.shape[-1])

        bsz, steps, single = meta
        rec_caches, acts = store
        n_rec = len(rec_caches)
        if single:
            grad_out = grad_out[None, None, :]
        d = grad_out.reshape(bsz * steps, -1)
        for i in range(len(layers) - 1, n_rec - 1, -1):
            j = i - n_rec
            if layers[i].activation == "relu":
                d = d * (acts[j + 1] > 0)
            gviews[i][0][...] = acts[j].T @ d
            gviews[i][1][...] = d.sum(axis=0)
            d = d @ pviews[i][0].T
        dseq = d.reshape(bsz, steps, -1)
        for i in range(n_rec - 1, -1, -1):
            seq, h0, c0, gates, cs, hs = rec_caches[i]
            wx, wh, _ = pviews[i]
            H = layers[i].out_dim
            dz_all = np.empty((bsz, steps, 4 * H))
            dh_next = np.zeros((bsz, H))
            dc_next = np.zeros((bsz, H))
            dwh = np.zeros_like(wh)
            for t in range(steps - 1, -1, -1):
                g = gates[:, t]
                ig, fg, gg, og = g[:, :H], g[:, H:2 * H], g[:, 2 * H:3 * H], g[:, 3 * H:]
                c_prev = cs[:, t - 1] if t > 0 else c0
                h_prev = hs[:, t - 1] if t > 0 else h0
                tc = np.tanh(cs[:, t])
                dh = dseq[:, t] + dh_next
                dc = dh * og * (1.0 - tc * tc) + dc_next
                dz = dz_all[:, t]
                dz[:, :H] = dc * gg * ig * (1.0 - ig)
                dz[:, H:2 * H] = dc * c_prev * fg * (1.0 - fg)
                dz[:, 2 * H:3 * H] = dc * ig * (1.0 - gg * gg)
                dz[:, 3 * H:] = dh * tc * og * (1.0 - og)
                dc_next = dc * fg
                dwh += h_prev.T @ dz
                dh_next = dz @ wh.T
            flat_dz = dz_all.reshape(bsz * steps, -1)
            gviews[i][0][...] = seq.reshape(bsz * steps, -1).T @ flat_dz
            gviews[i][1][...] = dwh
            gviews[i][2][...] = flat_dz.sum(axis=0)
            dseq = (flat_dz @ wx.T).reshape(bsz, steps, -1)
        if single:
            dseq = dseq[0, 0]
        return grads, dseq


def forward(model: Network, x, hidden=None):
    return model.forward(x, hidden)


def backward(model: Network, loss_grad):
    return model.backward(loss_grad)


# ---------------------------------------------------------------- loss / optim
def mse_loss(pred, target) -> tuple[float, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    diff = pred - target
    n = diff.size
    return float(np.sum(diff * diff) / n), 2.0 * diff / n


def global_norm(grads) -> float:
    if isinstance(grads, np.ndarray):
        return float(np.sqrt(np.sum(grads * grads)))
    return float(np.sqrt(sum(np.sum(g * g) for g in grads)))


def clip_grad_norm(grads, max_norm: float):
    """Rescale so the global L2 norm does not exceed ``max_norm``."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = global_norm(grads)
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    if isinstance(grads, np.ndarray):
        return grads * scale
    return [g * scale for g in grads]


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step: int = 0
    base_lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, params: np.ndarray, base_lr: float = 1e-3) -> "AdamState":
        return cls(np.zeros_like(params, dtype=np.float64),
                   np.zeros_like(params, dtype=np.float64), 0, base_lr)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float | None = None):
    """One bias-corrected Adam update. Returns ``(params', state')``."""
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != state.first_moment.shape or params.shape != grads.shape:
        raise ShapeError("Adam parameter/gradient/state shapes disagree")
    if not np.all(np.isfinite(grads)):
        raise TrainingError(f"non-finite gradient at Adam step {state.step + 1}")
    lr = state.base_lr if lr is None else lr
    t = state.step + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    new_state = AdamState(m, v, t, state.base_lr, state.beta1, state.beta2, state.epsilon)
    return new_params, new_state


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 1e-3
    max_steps: int = 2000
    decay_factor: float = 1.0
    decay_interval: int = 1000
    clip_norm: float | None = None
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.decay_factor <= 1:
            raise ValueError("decay_factor must be in (0, 1]")
        if self.max_steps <= 0 or self.decay_interval <= 0 or self.batch_size <= 0:
            raise ValueError("max_steps, decay_interval and batch_size must be positive")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive when given")


def lr_at(step: int, cfg: TrainConfig) -> float:
    if step < 0:
        raise ValueError("step must be non-negative")
    return cfg.base_lr * cfg.decay_factor ** (step // cfg.decay_interval)


@dataclass
class FitResult:
    losses: list[float] = field(default_factory=list)
    steps: int = 0

    @property
    def final_loss(self) -> float:
        return self.losses[-1] if self.losses else float("nan")


def fit(net: Network, x: np.ndarray, y: np.ndarray, cfg: TrainConfig,
        mask: np.ndarray | None = None, log_every: int = 1) -> FitResult:
    """Minibatch MSE training with Adam, step decay and optional clipping.

    ``x``/``y`` are indexed along their first axis; for recurrent nets that
    axis enumerates sequences of shape (time, features). ``mask`` (same
    leading shape as ``y`` without the feature axis) zeroes padded targets.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.shape[0]
    if n == 0:
        raise TrainingError("no training samples")
    rng = np.random.default_rng(cfg.seed)
    state = AdamState.zeros_like(net.params, cfg.base_lr)
    res = FitResult()
    params = net.params
    for step in range(cfg.max_steps):
        idx = rng.choice(n, size=min(cfg.batch_size, n), replace=False) if n > cfg.batch_size \
            else np.arange(n)
        xb, yb = x[idx], y[idx]
        net.params = params
        pred, _ = net.forward(xb)
        if mask is None:
            loss, g = mse_loss(pred, yb)
        else:
            mb = mask[idx][..., None].astype(np.float64)
            cnt = max(mb.sum() * yb.shape[-1], 1.0)
            diff = (pred - yb) * mb
            loss, g = float(np.sum(diff * diff) / cnt), 2.0 * diff / cnt
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss at step {step}")
        grads, _ = net.backward(g)
        if cfg.clip_norm is not None:
            grads = clip_grad_norm(grads, cfg.clip_norm)
        params, state = adam_step(params, grads, state, lr_at(step, cfg))
        if step % log_every == 0:
            res.losses.append(loss)
    net.params = params
    res.steps = cfg.max_steps
    return res
