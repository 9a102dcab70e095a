"""Small numpy neural-network kernels with hand-written backward passes.

Everything runs in float64. Functions accept a leading batch axis; the
single-example forms (1-D vectors) used in the cell/attention helpers are
promoted internally and squeezed on the way out.

LSTM gate blocks are stacked row-wise in the order input, forget, output,
candidate, so ``W`` has shape ``(4H, D)``, ``U`` ``(4H, H)`` and ``b`` ``(4H,)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GATES = ("input", "forget", "output", "candidate")


class DivergenceError(FloatingPointError):
    """Raised when a forward or backward pass produces non-finite values."""


def sigmoid(x):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def _finite(name, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise DivergenceError(f"non-finite values in {name}")


# ---------------------------------------------------------------------------
# LSTM
# ---------------------------------------------------------------------------

@dataclass
class LstmParams:
    W: np.ndarray
    U: np.ndarray
    b: np.ndarray

    @property
    def hidden(self) -> int:
        return self.U.shape[1]

    @property
    def input_dim(self) -> int:
        return self.W.shape[1]

    def check(self):
        H = self.U.shape[1]
        if self.U.shape != (4 * H, H) or self.W.shape[0] != 4 * H or self.b.shape != (4 * H,):
            raise ValueError(
                f"inconsistent LSTM shapes W{self.W.shape} U{self.U.shape} b{self.b.shape}"
            )

    @classmethod
    def init(cls, rng, input_dim: int, hidden: int, forget_bias: float = 1.0):
        W = glorot_uniform(rng, 4 * hidden, input_dim)
        U = glorot_uniform(rng, 4 * hidden, hidden)
        b = np.zeros(4 * hidden)
        b[hidden:2 * hidden] = forget_bias
        return cls(W, U, b)

    @classmethod
    def zeros(cls, input_dim: int, hidden: int):
        return cls(np.zeros((4 * hidden, input_dim)), np.zeros((4 * hidden, hidden)), np.zeros(4 * hidden))


@dataclass
class CellCache:
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    gates: tuple
    tanh_c: np.ndarray
    squeeze: bool
    params_id: int


def _cell_step(xw, h_prev, c_prev, U, b):
    """One LSTM step given the precomputed input projection ``xw = x @ W.T``."""
    H = h_prev.shape[-1]
    z = xw + h_prev @ U.T + b
    ifo = sigmoid(z[:, :3 * H])
    i = ifo[:, :H]
    f = ifo[:, H:2 * H]
    o = ifo[:, 2 * H:]
    g = np.tanh(z[:, 3 * H:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (i, f, o, g), tc


def _cell_step_back(dh, dc, c_prev, gates, tc):
    """Backward of :func:`_cell_step` down to the gate pre-activations.

    Returns ``(dz, dc_prev)``; callers turn ``dz`` into weight, input and
    hidden-state gradients.
    """
    i, f, o, g = gates
    dc = dc + dh * o * (1.0 - tc * tc)
    dz = np.concatenate(
        [
            dc * g * i * (1.0 - i),
            dc * c_prev * f * (1.0 - f),
            dh * tc * o * (1.0 - o),
            dc * i * (1.0 - g * g),
        ],
        axis=-1,
    )
    return dz, dc * f


def lstm_cell_forward(x, h_prev, c_prev, p: LstmParams):
    """Single LSTM step. Returns ``(h, c, cache)``."""
    squeeze = np.ndim(x) == 1
    x, h_prev, c_prev = (np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in (x, h_prev, c_prev))
    p.check()
    if x.shape[-1] != p.input_dim or h_prev.shape[-1] != p.hidden or c_prev.shape != h_prev.shape:
        raise ValueError(
            f"shape mismatch: x{x.shape} h{h_prev.shape} c{c_prev.shape} for input {p.input_dim}, hidden {p.hidden}"
        )
    h, c, gates, tc = _cell_step(x @ p.W.T, h_prev, c_prev, p.U, p.b)
    _finite("LSTM cell output", h, c)
    cache = CellCache(x, h_prev, c_prev, gates, tc, squeeze, id(p))
    if squeeze:
        return h[0], c[0], cache
    return h, c, cache


def lstm_cell_backward(grad_h, grad_c, cache: CellCache, p: LstmParams):
    """Returns ``(grad_x, grad_h_prev, grad_c_prev, grad_params)``."""
    if cache.params_id != id(p) or cache.x.shape[-1] != p.input_dim:
        raise ValueError("cache does not belong to these parameters")
    dh = np.atleast_2d(np.asarray(grad_h, dtype=np.float64))
    dc = np.atleast_2d(np.asarray(grad_c, dtype=np.float64))
    if dh.shape != cache.h_prev.shape or dc.shape != cache.c_prev.shape:
        raise ValueError("upstream gradient shape does not match cached step")
    dz, dc_prev = _cell_step_back(dh, dc, cache.c_prev, cache.gates, cache.tanh_c)
    grads = LstmParams(dz.T @ cache.x, dz.T @ cache.h_prev, dz.sum(axis=0))
    dx = dz @ p.W
    dh_prev = dz @ p.U
    if cache.squeeze:
        return dx[0], dh_prev[0], dc_prev[0], grads
    return dx, dh_prev, dc_prev, grads


def lstm_forward(X, p: LstmParams, reverse: bool = False):
    """Run an LSTM over ``X`` of shape (B, T, D) from zero state.

    With ``reverse`` the sequence is consumed from the end, and output ``t``
    is the state after reading ``X[:, t:]``. Returns ``(H_seq, cache)``.
    """
    B, T, _ = X.shape
    Hd = p.hidden
    XW = X @ p.W.T
    hs = np.empty((B, T, Hd))
    h = np.zeros((B, Hd))
    c = np.zeros((B, Hd))
    steps = range(T - 1, -1, -1) if reverse else range(T)
    caches = [None] * T
    for t in steps:
        c_prev, h_prev = c, h
        h, c, gates, tc = _cell_step(XW[:, t], h_prev, c_prev, p.U, p.b)
        hs[:, t] = h
        caches[t] = (h_prev, c_prev, gates, tc)
    _finite("LSTM sequence output", hs)
    return hs, (X, caches, reverse)


def lstm_backward(dHs, cache, p: LstmParams):
    """Backward of :func:`lstm_forward`. Returns ``(dX, grad_params)``."""
    X, caches, reverse = cache
    B, T, _ = X.shape
    Hd = p.hidden
    dZ = np.empty((B, T, 4 * Hd))
    dh_next = np.zeros((B, Hd))
    dc_next = np.zeros((B, Hd))
    steps = range(T) if reverse else range(T - 1, -1, -1)
    for t in steps:
        h_prev, c_prev, gates, tc = caches[t]
        dz, dc_next = _cell_step_back(dHs[:, t] + dh_next, dc_next, c_prev, gates, tc)
        dh_next = dz @ p.U
        dZ[:, t] = dz
    # recurrent input at each step is the state produced by the previous step
    Hprev = np.stack([caches[t][0] for t in range(T)], axis=1)
    dZf = dZ.reshape(-1, 4 * Hd)
    grads = LstmParams(
        dZf.T @ X.reshape(-1, X.shape[-1]),
        dZf.T @ Hprev.reshape(-1, Hd),
        dZf.sum(axis=0),
    )
    dX = dZ @ p.W
    return dX, grads


def bidirectional_run(inputs, fwd: LstmParams, bwd: LstmParams, return_cache: bool = False):
    """Concatenate forward and backward LSTM states at every step.

    ``inputs`` is (T, D) or (B, T, D). Output step ``t`` is
    ``[h_fwd(x_0..x_t) ; h_bwd(x_t..x_end)]``.
    """
    X = np.asarray(inputs, dtype=np.float64)
    squeeze = X.ndim == 2
    if squeeze:
        X = X[None]
    if X.shape[1] == 0:
        raise ValueError("empty sequence")
    hf, cf = lstm_forward(X, fwd)
    hb, cb = lstm_forward(X, bwd, reverse=True)
    out = np.concatenate([hf, hb], axis=-1)
    if squeeze:
        out = out[0]
    if return_cache:
        return out, (cf, cb, squeeze)
    return out


def bidirectional_backward(dout, cache, fwd: LstmParams, bwd: LstmParams):
    cf, cb, squeeze = cache
    dout = dout[None] if squeeze else dout
    H = fwd.hidden
    dXf, gf = lstm_backward(dout[..., :H], cf, fwd)
    dXb, gb = lstm_backward(dout[..., H:], cb, bwd)
    dX = dXf + dXb
    return (dX[0] if squeeze else dX), gf, gb


# ---------------------------------------------------------------------------
# Additive attention
# ---------------------------------------------------------------------------

@dataclass
class AttentionParams:
    Wq: np.ndarray
    Wk: np.ndarray
    v: np.ndarray

    @classmethod
    def init(cls, rng, query_dim: int, key_dim: int, attn_dim: int):
        Wq = glorot_uniform(rng, attn_dim, query_dim)
        Wk = glorot_uniform(rng, attn_dim, key_dim)
        v = glorot_uniform(rng, 1, attn_dim)[0]
        return cls(Wq, Wk, v)

    def check(self):
        A = self.v.shape[0]
        if self.Wq.shape[0] != A or self.Wk.shape[0] != A or self.v.ndim != 1:
            raise ValueError(f"inconsistent attention shapes Wq{self.Wq.shape} Wk{self.Wk.shape} v{self.v.shape}")


def attention_forward(Q, K, p: AttentionParams):
    """Batched additive attention.

    ``Q`` is (B, Tq, Dq), ``K`` is (B, Tk, Dk). Scores are
    ``v . tanh(Wq q + Wk k)``; returns ``(context (B, Tq, Dk), weights
    (B, Tq, Tk), cache)``.
    """
    if K.shape[1] == 0:
        raise ValueError("attention needs at least one key")
    pq = Q @ p.Wq.T
    pk = K @ p.Wk.T
    S = pq[:, :, None, :] + pk[:, None, :, :]
    np.tanh(S, out=S)
    e = S @ p.v
    w = softmax(e, axis=-1)
    ctx = w @ K
    return ctx, w, (Q, K, S, w)


def attention_backward(dctx, cache, p: AttentionParams, dweights=None):
    """Returns ``(dQ, dK, grad_params)``."""
    Q, K, S, w = cache
    dw = dctx @ K.transpose(0, 2, 1)
    if dweights is not None:
        dw = dw + dweights
    dK = w.transpose(0, 2, 1) @ dctx
    de = w * (dw - np.sum(dw * w, axis=-1, keepdims=True))
    A = p.v.shape[0]
    dv = de.reshape(-1) @ S.reshape(-1, A)
    dpre = S * S
    np.subtract(1.0, dpre, out=dpre)
    dpre *= p.v
    dpre *= de[..., None]
    dpq = dpre.sum(axis=2)
    dpk = dpre.sum(axis=1)
    grads = AttentionParams(
        dpq.reshape(-1, A).T @ Q.reshape(-1, Q.shape[-1]),
        dpk.reshape(-1, A).T @ K.reshape(-1, K.shape[-1]),
        dv,
    )
    dQ = dpq @ p.Wq
    dK = dK + dpk @ p.Wk
    return dQ, dK, grads


def additive_attention(query, keys, p: AttentionParams):
    """Attend from one query vector over a (n, Dk) key matrix.

    Returns ``(context, weights)``.
    """
    keys = np.asarray(keys, dtype=np.float64)
    if keys.ndim != 2 or keys.shape[0] == 0:
        raise ValueError("keys must be a non-empty (n, dim) array")
    p.check()
    q = np.asarray(query, dtype=np.float64)[None, None, :]
    ctx, w, _ = attention_forward(q, keys[None], p)
    return ctx[0, 0], w[0, 0]


# ---------------------------------------------------------------------------
# Dense, softmax, cross-entropy
# ---------------------------------------------------------------------------

def dense_forward(x, W, b):
    return x @ W.T + b


def dense_backward(dy, x, W):
    """Returns ``(dx, dW, db)`` for ``y = x @ W.T + b`` with any leading axes."""
    dyf = dy.reshape(-1, dy.shape[-1])
    xf = x.reshape(-1, x.shape[-1])
    return dy @ W, dyf.T @ xf, dyf.sum(axis=0)


def softmax(logits, axis: int = -1):
    z = np.asarray(logits, dtype=np.float64)
    z = z - np.max(z, axis=axis, keepdims=True)
    ez = np.exp(z)
    return ez / np.sum(ez, axis=axis, keepdims=True)


PROB_FLOOR = 1e-12


def cross_entropy(probs, true_class) -> float:
    """``-log p[true_class]`` with the probability clamped at 1e-12."""
    probs = np.asarray(probs, dtype=np.float64)
    k = int(true_class)
    if not 0 <= k < probs.shape[-1]:
        raise IndexError(f"class index {k} out of range for {probs.shape[-1]} classes")
    return float(-np.log(max(probs[..., k], PROB_FLOOR)))


def softmax_cross_entropy(logits, targets):
    """Summed cross-entropy over all rows and its gradient w.r.t. ``logits``.

    ``logits`` has shape (..., C) and ``targets`` the matching integer shape.
    """
    probs = softmax(logits)
    flat = probs.reshape(-1, probs.shape[-1])
    idx = np.asarray(targets).reshape(-1)
    picked = np.maximum(flat[np.arange(len(idx)), idx], PROB_FLOOR)
    loss = float(-np.sum(np.log(picked)))
    grad = flat.copy()
    grad[np.arange(len(idx)), idx] -= 1.0
    return loss, grad.reshape(probs.shape), probs


# ---------------------------------------------------------------------------
# Optimisation
# ---------------------------------------------------------------------------

class AdamState:
    """Adam moments for a dict of named parameter arrays."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def copy(self) -> "AdamState":
        other = AdamState(self.lr, self.beta1, self.beta2, self.eps)
        other.t = self.t
        other.m = {k: a.copy() for k, a in self.m.items()}
        other.v = {k: a.copy() for k, a in self.v.items()}
        return other


def adam_step(params: dict, grads: dict, state: AdamState) -> None:
    """Update ``params`` in place; non-finite gradients abort before any change."""
    for k in params:
        if not np.all(np.isfinite(grads[k])):
            raise DivergenceError(f"non-finite gradient for {k}; step skipped")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for k, p in params.items():
        g = grads[k]
        if k not in state.m:
            state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        m = state.m[k]
        v = state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def global_norm(grads: dict) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_by_global_norm(grads: dict, max_norm: float) -> float:
    """Scale ``grads`` in place so their joint L2 norm is at most ``max_norm``."""
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def grad_check(loss_fn, params: dict, eps: float = 1e-5, max_coords=None, seed: int = 0) -> float:
    """Largest relative gap between analytic and central-difference gradients.

    ``loss_fn(params)`` must return ``(loss, grads)`` with ``grads`` keyed
    like ``params``. The relative gap per coordinate is
    ``|a - n| / max(|a|, |n|, 1e-8)``. With ``max_coords`` only a seeded
    random subset of each array is probed.
    """
    _, analytic = loss_fn(params)
    analytic = {k: np.array(g, dtype=np.float64) for k, g in analytic.items()}
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, p in params.items():
        flat = p.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        ga = analytic[name].reshape(-1)
        for j in coords:
            orig = flat[j]
            flat[j] = orig + eps
            lp, _ = loss_fn(params)
            flat[j] = orig - eps
            lm, _ = loss_fn(params)
            flat[j] = orig
            num = (lp - lm) / (2 * eps)
            denom = max(abs(ga[j]), abs(num), 1e-8)
            worst = max(worst, abs(ga[j] - num) / denom)
    return worst
