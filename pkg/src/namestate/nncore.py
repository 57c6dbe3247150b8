"""Recurrent cells, softmax cross-entropy and optimizers with analytic gradients.

All cell functions work on a batch: ``x`` is ``(B, input_dim)`` and hidden
states are ``(B, hidden_dim)``. A 1-D vector is treated as a batch of one
and the outputs are returned 1-D again.

Weights use the ``x @ W`` layout, with gates stacked along the columns:

* RNN:  ``h' = tanh(x W_ih + b_ih + h W_hh + b_hh)``
* GRU:  gates ``[update z, reset r, candidate n]``;
  ``n = tanh(x W_in + b_in + r * (h W_hn + b_hn))``, ``h' = (1 - z) n + z h``
* LSTM: gates ``[input i, forget f, output o, candidate g]``;
  ``c' = f c + i g``, ``h' = o tanh(c')``
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

KINDS = ("RNN", "LSTM", "GRU")
N_GATES = {"RNN": 1, "GRU": 3, "LSTM": 4}
WEIGHT_NAMES = ("W_ih", "W_hh")
BIAS_NAMES = ("b_ih", "b_hh")


@dataclass
class CellParams:
    kind: str
    input_dim: int
    hidden_dim: int
    weights: dict[str, np.ndarray]
    grads: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown cell kind {self.kind!r}")
        if self.input_dim <= 0 or self.hidden_dim <= 0:
            raise ValueError("input_dim and hidden_dim must be positive")
        g = N_GATES[self.kind] * self.hidden_dim
        shapes = {"W_ih": (self.input_dim, g), "W_hh": (self.hidden_dim, g), "b_ih": (g,), "b_hh": (g,)}
        for name, shape in shapes.items():
            if self.weights[name].shape != shape:
                raise ValueError(f"{name} has shape {self.weights[name].shape}, expected {shape}")
        if not self.grads:
            self.grads = {k: np.zeros_like(v) for k, v in self.weights.items()}

    @property
    def dtype(self):
        return self.weights["W_ih"].dtype

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0)


def init_cell(kind: str, input_dim: int, hidden_dim: int, rng: np.random.Generator,
              dtype=np.float32) -> CellParams:
    """Uniform(-1/sqrt(H), 1/sqrt(H)) init; LSTM forget-gate input bias set to 1."""
    g = N_GATES[kind] * hidden_dim
    bound = 1.0 / np.sqrt(hidden_dim)
    weights = {
        "W_ih": rng.uniform(-bound, bound, (input_dim, g)),
        "W_hh": rng.uniform(-bound, bound, (hidden_dim, g)),
        "b_ih": rng.uniform(-bound, bound, g),
        "b_hh": rng.uniform(-bound, bound, g),
    }
    if kind == "LSTM":
        weights["b_ih"][hidden_dim:2 * hidden_dim] = 1.0
        weights["b_hh"][hidden_dim:2 * hidden_dim] = 0.0
    weights = {k: v.astype(dtype) for k, v in weights.items()}
    return CellParams(kind, input_dim, hidden_dim, weights)


def sigmoid(x):
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class CellCache:
    kind: str
    input_dim: int
    hidden_dim: int
    squeeze: bool
    x: np.ndarray
    h_prev: np.ndarray
    values: dict


def _as_batch(v: np.ndarray, width: int, what: str) -> np.ndarray:
    v = np.asarray(v)
    if v.ndim == 1:
        v = v[None, :]
    if v.ndim != 2 or v.shape[1] != width:
        raise ValueError(f"{what} has shape {v.shape}, expected width {width}")
    return v


def cell_forward(params: CellParams, x_t, h_prev, c_prev=None):
    """One time step. Returns ``(h_t, c_t, cache)``; ``c_t`` is None unless LSTM."""
    squeeze = np.ndim(x_t) == 1
    x = _as_batch(x_t, params.input_dim, "x_t")
    h = _as_batch(h_prev, params.hidden_dim, "h_prev")
    if h.shape[0] != x.shape[0]:
        raise ValueError(f"h_prev batch {h.shape[0]} != x_t batch {x.shape[0]}")
    if (c_prev is not None) != (params.kind == "LSTM"):
        raise ValueError("c_prev must be given for LSTM cells and only for them")
    w = params.weights
    H = params.hidden_dim
    vals: dict = {}
    c_t = None
    if params.kind == "RNN":
        h_t = np.tanh(x @ w["W_ih"] + w["b_ih"] + h @ w["W_hh"] + w["b_hh"])
        vals["h"] = h_t
    elif params.kind == "GRU":
        gi = x @ w["W_ih"] + w["b_ih"]
        gh = h @ w["W_hh"] + w["b_hh"]
        z = sigmoid(gi[:, :H] + gh[:, :H])
        r = sigmoid(gi[:, H:2 * H] + gh[:, H:2 * H])
        ghn = gh[:, 2 * H:]
        n = np.tanh(gi[:, 2 * H:] + r * ghn)
        h_t = (1.0 - z) * n + z * h
        vals.update(z=z, r=r, n=n, ghn=ghn)
    else:
        c = _as_batch(c_prev, H, "c_prev")
        if c.shape[0] != x.shape[0]:
            raise ValueError(f"c_prev batch {c.shape[0]} != x_t batch {x.shape[0]}")
        a = x @ w["W_ih"] + w["b_ih"] + h @ w["W_hh"] + w["b_hh"]
        i = sigmoid(a[:, :H])
        f = sigmoid(a[:, H:2 * H])
        o = sigmoid(a[:, 2 * H:3 * H])
        g = np.tanh(a[:, 3 * H:])
        c_t = f * c + i * g
        tc = np.tanh(c_t)
        h_t = o * tc
        vals.update(i=i, f=f, o=o, g=g, c_prev=c, tc=tc)
    cache = CellCache(params.kind, params.input_dim, H, squeeze, x, h, vals)
    if squeeze:
        h_t = h_t[0]
        c_t = None if c_t is None else c_t[0]
    return h_t, c_t, cache


def cell_backward(params: CellParams, cache: CellCache, dh_t, dc_t=None, grads=None):
    """Backpropagate one step; parameter gradients are added into ``grads``.

    ``grads`` defaults to ``params.grads``. Returns ``(dx, dh_prev, dc_prev)``.
    """
    if (cache.kind, cache.input_dim, cache.hidden_dim) != (params.kind, params.input_dim, params.hidden_dim):
        raise ValueError("cache was produced by a cell with a different kind or shape")
    grads = params.grads if grads is None else grads
    H = params.hidden_dim
    w = params.weights
    x, h = cache.x, cache.h_prev
    v = cache.values
    dh = _as_batch(dh_t, H, "dh_t")
    dc_prev = None
    if params.kind == "RNN":
        da_ih = da_hh = dh * (1.0 - v["h"] ** 2)
        dh_prev = da_hh @ w["W_hh"].T
    elif params.kind == "GRU":
        z, r, n, ghn = v["z"], v["r"], v["n"], v["ghn"]
        dz = dh * (h - n)
        dan = dh * (1.0 - z) * (1.0 - n ** 2)
        dar = dan * ghn * r * (1.0 - r)
        daz = dz * z * (1.0 - z)
        da_ih = np.concatenate([daz, dar, dan], axis=1)
        da_hh = np.concatenate([daz, dar, dan * r], axis=1)
        dh_prev = dh * z + da_hh @ w["W_hh"].T
    else:
        i, f, o, g, c, tc = v["i"], v["f"], v["o"], v["g"], v["c_prev"], v["tc"]
        dc = dh * o * (1.0 - tc ** 2)
        if dc_t is not None:
            dc = dc + _as_batch(dc_t, H, "dc_t")
        da_ih = da_hh = np.concatenate([
            dc * g * i * (1.0 - i),
            dc * c * f * (1.0 - f),
            dh * tc * o * (1.0 - o),
            dc * i * (1.0 - g ** 2),
        ], axis=1)
        dh_prev = da_hh @ w["W_hh"].T
        dc_prev = dc * f
    grads["W_ih"] += x.T @ da_ih
    grads["b_ih"] += da_ih.sum(axis=0)
    grads["W_hh"] += h.T @ da_hh
    grads["b_hh"] += da_hh.sum(axis=0)
    dx = da_ih @ w["W_ih"].T
    if cache.squeeze:
        dx, dh_prev = dx[0], dh_prev[0]
        dc_prev = None if dc_prev is None else dc_prev[0]
    return dx, dh_prev, dc_prev


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_nll(logits, target):
    """Negative log-likelihood of ``target`` under ``softmax(logits)``.

    Works on a single vector (scalar loss) or a ``(B, C)`` batch with a
    ``(B,)`` target array (per-row losses). Returns ``(loss, dlogits)``.
    """
    logits = np.asarray(logits)
    single = logits.ndim == 1
    z = np.atleast_2d(logits)
    t = np.atleast_1d(np.asarray(target))
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(z.shape[0])
    loss = log_norm - shifted[rows, t]
    d = np.exp(shifted - log_norm[:, None])
    d[rows, t] -= 1.0
    if single:
        return float(loss[0]), d[0]
    return loss, d


def clip_grad_norm(grads: list[np.ndarray], max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads)))
    if total > max_norm:
        scale = max_norm / total
        for g in grads:
            g *= scale
    return total


@dataclass
class OptimizerState:
    kind: str  # "sgd" or "adam"
    learning_rate: float
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    buffers: dict[str, list[np.ndarray]] = field(default_factory=dict)

    def _ensure(self, params: list[np.ndarray], names: tuple[str, ...]) -> None:
        for name in names:
            if name not in self.buffers:
                self.buffers[name] = [np.zeros_like(p) for p in params]
            elif [b.shape for b in self.buffers[name]] != [p.shape for p in params]:
                raise ValueError(f"optimizer buffer {name!r} does not match parameter shapes")


def _check_shapes(params, grads):
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} parameters but {len(grads)} gradients")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ValueError(f"gradient {i} has shape {g.shape}, parameter has {p.shape}")


def sgd_momentum_step(params: list[np.ndarray], grads: list[np.ndarray], state: OptimizerState) -> None:
    """Classical momentum: ``v = mu v + g; p -= lr v``."""
    if state.kind != "sgd":
        raise ValueError(f"state is for {state.kind!r}, not sgd")
    _check_shapes(params, grads)
    state._ensure(params, ("velocity",))
    for p, g, v in zip(params, grads, state.buffers["velocity"]):
        v *= state.momentum
        v += g
        p -= state.learning_rate * v
    state.step_count += 1


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: OptimizerState) -> None:
    if state.kind != "adam":
        raise ValueError(f"state is for {state.kind!r}, not adam")
    _check_shapes(params, grads)
    state._ensure(params, ("m", "v"))
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    step = state.learning_rate / (1.0 - b1 ** t)
    v_corr = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.buffers["m"], state.buffers["v"]):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= (step * m / (np.sqrt(v / v_corr) + state.epsilon)).astype(p.dtype, copy=False)


def optimizer_step(params, grads, state: OptimizerState) -> None:
    if state.kind == "sgd":
        sgd_momentum_step(params, grads, state)
    elif state.kind == "adam":
        adam_step(params, grads, state)
    else:
        raise ValueError(f"unknown optimizer {state.kind!r}")
