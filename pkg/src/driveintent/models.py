"""Per-timestep intent classifiers over symbol sequences.

Three architectures share one interface:

* ``proposed``: one-hot symbols -> stacked bidirectional LSTM -> additive
  self-attention (query = encoder state at the same step, keys = all
  encoder states) -> dense softmax over ``[h_t ; context_t]``.
* ``standard-lstm``: unidirectional LSTM, dense softmax on ``h_t``.
* ``mlp``: two tanh layers over a zero-padded window of the last ``w``
  one-hot symbols.

Output length always equals input length.
"""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import nn
from .discretize import NUM_SYMBOLS, SymbolSequence
from .traces import CLASS_ORDER, Maneuver

NUM_CLASSES = len(CLASS_ORDER)
MODEL_KINDS = ("proposed", "standard-lstm", "mlp")


@dataclass
class ModelConfig:
    vocab_size: int = NUM_SYMBOLS
    num_classes: int = NUM_CLASSES
    hidden: int = 64
    attention_dim: int = 32
    layers: int = 1
    mlp_hidden: tuple = (64, 32)
    window: int = 5
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 60
    patience: int = 10
    val_fraction: float = 0.15
    clip_norm: float = 5.0
    seed: int = 0

    def __post_init__(self):
        self.mlp_hidden = tuple(int(h) for h in self.mlp_hidden)

    def validate(self) -> None:
        if self.vocab_size != NUM_SYMBOLS:
            raise ValueError(f"vocab_size is fixed at {NUM_SYMBOLS}")
        if self.num_classes != NUM_CLASSES:
            raise ValueError(f"num_classes is fixed at {NUM_CLASSES}")
        positive = ("hidden", "attention_dim", "layers", "window", "batch_size", "max_epochs", "patience")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if len(self.mlp_hidden) != 2 or min(self.mlp_hidden) <= 0:
            raise ValueError("mlp_hidden must be two positive sizes")
        if not self.learning_rate > 0 or not self.clip_norm > 0:
            raise ValueError("learning_rate and clip_norm must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mlp_hidden"] = list(self.mlp_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class PredictionRecord:
    id: str
    probs: np.ndarray
    attention: np.ndarray | None = None

    @property
    def labels(self) -> list[Maneuver]:
        return [CLASS_ORDER[k] for k in np.argmax(self.probs, axis=-1)]

    @property
    def length(self) -> int:
        return len(self.probs)


def one_hot(symbols) -> np.ndarray:
    """(..., T) integer symbols in 1..6 -> (..., T, 6) float one-hot."""
    s = np.asarray(symbols, dtype=np.int64)
    if s.size and (s.min() < 1 or s.max() > NUM_SYMBOLS):
        raise ValueError(f"symbols must lie in 1..{NUM_SYMBOLS}")
    return np.eye(NUM_SYMBOLS)[s - 1]


class IntentModel:
    """Base class: holds config, named parameters and training history.

    Subclasses implement ``_init_params``, ``_forward`` and ``_backward``.
    An instance doubles as the checkpoint object.
    """

    kind = ""

    def __init__(self, config: ModelConfig, params: dict | None = None, seed: int | None = None):
        config.validate()
        self.config = config
        self.seed = config.seed if seed is None else seed
        self.history: list[dict] = []
        self.meta: dict = {}
        if params is None:
            rng = np.random.default_rng(self.seed)
            params = self._init_params(rng)
        self.params = params
        self._check_shapes()

    def _check_shapes(self):
        rng = np.random.default_rng(0)
        expected = self._init_params(rng)
        if set(expected) != set(self.params):
            raise ValueError(f"parameter names do not match a {self.kind} model")
        for k, v in expected.items():
            if self.params[k].shape != v.shape:
                raise ValueError(f"parameter {k} has shape {self.params[k].shape}, expected {v.shape}")

    def copy(self) -> "IntentModel":
        other = copy.copy(self)
        other.config = copy.deepcopy(self.config)
        other.params = {k: v.copy() for k, v in self.params.items()}
        other.history = copy.deepcopy(self.history)
        other.meta = copy.deepcopy(self.meta)
        return other

    # -- batched core ------------------------------------------------------
    def _init_params(self, rng) -> dict:
        raise NotImplementedError

    def _forward(self, X):
        """(B, T, 6) one-hot -> (logits (B, T, C), attention or None, cache)."""
        raise NotImplementedError

    def _backward(self, dlogits, cache) -> dict:
        raise NotImplementedError

    def logits(self, symbols):
        logits, attn, _ = self._forward(one_hot(np.atleast_2d(symbols)))
        return logits, attn

    def loss_and_grads(self, symbols, targets):
        """Summed per-step cross-entropy over a (B, T) batch and its gradients.

        Returns ``(loss_sum, grads, correct_steps)``.
        """
        X = one_hot(symbols)
        logits, _, cache = self._forward(X)
        loss, dlogits, probs = nn.softmax_cross_entropy(logits, targets)
        grads = self._backward(dlogits, cache)
        correct = int(np.sum(np.argmax(probs, axis=-1) == targets))
        return loss, grads, correct

    def loss(self, symbols, targets):
        logits, _, _ = self._forward(one_hot(symbols))
        loss, _, probs = nn.softmax_cross_entropy(logits, targets)
        return loss, int(np.sum(np.argmax(probs, axis=-1) == targets))

    # -- public API --------------------------------------------------------
    def forward(self, seq) -> PredictionRecord:
        """Per-step class probabilities (and attention, if any) for one sequence."""
        if isinstance(seq, SymbolSequence):
            sid, symbols = seq.id, seq.symbols
        else:
            sid, symbols = "", np.asarray(seq)
        symbols = np.asarray(symbols, dtype=np.int64)
        if symbols.ndim != 1 or symbols.size == 0:
            raise ValueError("expected a non-empty 1-D symbol sequence")
        logits, attn = self.logits(symbols[None])
        return PredictionRecord(sid, nn.softmax(logits[0]), None if attn is None else attn[0])

    def predict_batch(self, symbols) -> tuple[np.ndarray, np.ndarray | None]:
        """(B, T) symbols -> ((B, T, C) probabilities, attention or None)."""
        logits, attn = self.logits(symbols)
        return nn.softmax(logits), attn


class ProposedModel(IntentModel):
    kind = "proposed"

    @property
    def encoder_dim(self) -> int:
        return 2 * self.config.hidden

    def _init_params(self, rng):
        cfg = self.config
        p = {}
        in_dim = cfg.vocab_size
        for layer in range(cfg.layers):
            for direction in ("fwd", "bwd"):
                lstm = nn.LstmParams.init(rng, in_dim, cfg.hidden)
                p[f"enc{layer}.{direction}.W"] = lstm.W
                p[f"enc{layer}.{direction}.U"] = lstm.U
                p[f"enc{layer}.{direction}.b"] = lstm.b
            in_dim = 2 * cfg.hidden
        att = nn.AttentionParams.init(rng, in_dim, in_dim, cfg.attention_dim)
        p["att.Wq"], p["att.Wk"], p["att.v"] = att.Wq, att.Wk, att.v
        p["out.W"] = nn.glorot_uniform(rng, cfg.num_classes, 2 * in_dim)
        p["out.b"] = np.zeros(cfg.num_classes)
        return p

    def _lstm(self, layer, direction):
        pre = f"enc{layer}.{direction}."
        return nn.LstmParams(self.params[pre + "W"], self.params[pre + "U"], self.params[pre + "b"])

    def _att(self):
        p = self.params
        return nn.AttentionParams(p["att.Wq"], p["att.Wk"], p["att.v"])

    def _forward(self, X):
        h = X
        enc_caches = []
        for layer in range(self.config.layers):
            h, cache = nn.bidirectional_run(h, self._lstm(layer, "fwd"), self._lstm(layer, "bwd"), return_cache=True)
            enc_caches.append(cache)
        ctx, weights, att_cache = nn.attention_forward(h, h, self._att())
        feat = np.concatenate([h, ctx], axis=-1)
        logits = nn.dense_forward(feat, self.params["out.W"], self.params["out.b"])
        return logits, weights, (enc_caches, att_cache, feat)

    def _backward(self, dlogits, cache):
        enc_caches, att_cache, feat = cache
        grads = {}
        dfeat, grads["out.W"], grads["out.b"] = nn.dense_backward(dlogits, feat, self.params["out.W"])
        D = self.encoder_dim
        dQ, dK, ga = nn.attention_backward(dfeat[..., D:], att_cache, self._att())
        grads["att.Wq"], grads["att.Wk"], grads["att.v"] = ga.Wq, ga.Wk, ga.v
        dh = dfeat[..., :D] + dQ + dK
        for layer in range(self.config.layers - 1, -1, -1):
            fwd, bwd = self._lstm(layer, "fwd"), self._lstm(layer, "bwd")
            dh, gf, gb = nn.bidirectional_backward(dh, enc_caches[layer], fwd, bwd)
            for direction, g in (("fwd", gf), ("bwd", gb)):
                pre = f"enc{layer}.{direction}."
                grads[pre + "W"], grads[pre + "U"], grads[pre + "b"] = g.W, g.U, g.b
        return grads


class StandardLSTM(IntentModel):
    kind = "standard-lstm"

    def _init_params(self, rng):
        cfg = self.config
        p = {}
        in_dim = cfg.vocab_size
        for layer in range(cfg.layers):
            lstm = nn.LstmParams.init(rng, in_dim, cfg.hidden)
            p[f"enc{layer}.W"], p[f"enc{layer}.U"], p[f"enc{layer}.b"] = lstm.W, lstm.U, lstm.b
            in_dim = cfg.hidden
        p["out.W"] = nn.glorot_uniform(rng, cfg.num_classes, in_dim)
        p["out.b"] = np.zeros(cfg.num_classes)
        return p

    def _lstm(self, layer):
        pre = f"enc{layer}."
        return nn.LstmParams(self.params[pre + "W"], self.params[pre + "U"], self.params[pre + "b"])

    def _forward(self, X):
        h = X
        caches = []
        for layer in range(self.config.layers):
            h, cache = nn.lstm_forward(h, self._lstm(layer))
            caches.append(cache)
        logits = nn.dense_forward(h, self.params["out.W"], self.params["out.b"])
        return logits, None, (caches, h)

    def _backward(self, dlogits, cache):
        caches, h = cache
        grads = {}
        dh, grads["out.W"], grads["out.b"] = nn.dense_backward(dlogits, h, self.params["out.W"])
        for layer in range(self.config.layers - 1, -1, -1):
            dh, g = nn.lstm_backward(dh, caches[layer], self._lstm(layer))
            pre = f"enc{layer}."
            grads[pre + "W"], grads[pre + "U"], grads[pre + "b"] = g.W, g.U, g.b
        return grads


def window_features(X, w: int) -> np.ndarray:
    """Stack the last ``w`` one-hot rows per step, oldest first, zero-padded at the start."""
    B, T, V = X.shape
    padded = np.concatenate([np.zeros((B, w - 1, V)), X], axis=1)
    return np.concatenate([padded[:, j:j + T] for j in range(w)], axis=-1)


class WindowMLP(IntentModel):
    kind = "mlp"

    def _init_params(self, rng):
        cfg = self.config
        h1, h2 = cfg.mlp_hidden
        in_dim = cfg.window * cfg.vocab_size
        return {
            "fc1.W": nn.glorot_uniform(rng, h1, in_dim),
            "fc1.b": np.zeros(h1),
            "fc2.W": nn.glorot_uniform(rng, h2, h1),
            "fc2.b": np.zeros(h2),
            "out.W": nn.glorot_uniform(rng, cfg.num_classes, h2),
            "out.b": np.zeros(cfg.num_classes),
        }

    def _forward(self, X):
        p = self.params
        x = window_features(X, self.config.window)
        a1 = np.tanh(nn.dense_forward(x, p["fc1.W"], p["fc1.b"]))
        a2 = np.tanh(nn.dense_forward(a1, p["fc2.W"], p["fc2.b"]))
        logits = nn.dense_forward(a2, p["out.W"], p["out.b"])
        return logits, None, (x, a1, a2)

    def _backward(self, dlogits, cache):
        x, a1, a2 = cache
        p = self.params
        g = {}
        da2, g["out.W"], g["out.b"] = nn.dense_backward(dlogits, a2, p["out.W"])
        da1, g["fc2.W"], g["fc2.b"] = nn.dense_backward(da2 * (1 - a2 * a2), a1, p["fc2.W"])
        _, g["fc1.W"], g["fc1.b"] = nn.dense_backward(da1 * (1 - a1 * a1), x, p["fc1.W"])
        return g


_KINDS = {cls.kind: cls for cls in (ProposedModel, StandardLSTM, WindowMLP)}


def model_class(kind: str):
    try:
        return _KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}; choose from {', '.join(MODEL_KINDS)}") from None


def build(config: ModelConfig | None = None, seed: int | None = None, kind: str = "proposed") -> IntentModel:
    """Freshly initialised model; identical (config, seed, kind) give identical parameters."""
    config = copy.deepcopy(config) if config is not None else ModelConfig()
    if seed is not None:
        config.seed = seed
    return model_class(kind)(config)


def baseline_standard_lstm(config: ModelConfig | None = None, seed: int | None = None) -> StandardLSTM:
    return build(config, seed, "standard-lstm")


def baseline_mlp(config: ModelConfig | None = None, seed: int | None = None) -> WindowMLP:
    return build(config, seed, "mlp")
