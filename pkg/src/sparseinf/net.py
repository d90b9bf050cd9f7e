"""Small fully-connected networks with per-sample factor capture.

Weights of layer ``i`` are stored as one ``(out_i, in_i + 1)`` matrix whose
last column is the bias; every layer input is augmented with a trailing 1.
The flat parameter vector of a layer is the column-stacked ``vec(W)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

ACTIVATIONS = ("relu", "tanh", "identity")
LOSSES = ("mse", "cross_entropy")
LABEL_MODES = ("model_sampled", "empirical")
CHECKPOINT_SCHEMA = 1


class NumericError(FloatingPointError):
    def __init__(self, layer: int, what: str = "activation"):
        self.layer = layer
        super().__init__(f"non-finite {what} at layer {layer}")


class TrainingDivergence(RuntimeError):
    def __init__(self, epoch: int, trace: list[float]):
        self.epoch = epoch
        self.trace = trace
        super().__init__(f"training loss became non-finite at epoch {epoch}")


@dataclass(frozen=True)
class NetworkSpec:
    layer_sizes: tuple[int, ...]
    activation: str = "relu"
    loss: str = "mse"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"need at least two positive layer sizes, got {sizes}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    def layer_shapes(self) -> list[tuple[int, int]]:
        """``(out, in + 1)`` for every layer."""
        s = self.layer_sizes
        return [(s[i + 1], s[i] + 1) for i in range(self.n_layers)]

    def to_dict(self) -> dict:
        return {"layer_sizes": list(self.layer_sizes), "activation": self.activation, "loss": self.loss}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(tuple(d["layer_sizes"]), d.get("activation", "relu"), d.get("loss", "mse"))


@dataclass
class LayerFactorBatch:
    """Per-sample augmented inputs ``a`` (T, in+1) and pre-activation grads ``g`` (T, out)."""

    a: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        self.a = np.atleast_2d(np.asarray(self.a, dtype=float))
        self.g = np.atleast_2d(np.asarray(self.g, dtype=float))
        if self.a.shape[0] != self.g.shape[0]:
            raise ValueError("a and g must have the same number of samples")

    @property
    def count(self) -> int:
        return self.a.shape[0]

    @property
    def n(self) -> int:
        return self.a.shape[1]

    @property
    def m(self) -> int:
        return self.g.shape[1]

    def grads(self) -> np.ndarray:
        """Per-sample ``vec(g a^T)`` as rows of a (T, n*m) array."""
        return (self.a[:, :, None] * self.g[:, None, :]).reshape(self.count, -1)


@dataclass
class ForwardCache:
    inputs: list[np.ndarray] = field(default_factory=list)  # augmented a_{i-1}, (B, in+1)
    pre: list[np.ndarray] = field(default_factory=list)  # h_i, (B, out)


def _act(name: str, h: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(h, 0.0)
    if name == "tanh":
        return np.tanh(h)
    return h


def _act_grad(name: str, h: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (h > 0.0).astype(float)
    if name == "tanh":
        return 1.0 - np.tanh(h) ** 2
    return np.ones_like(h)


def _augment(x: np.ndarray) -> np.ndarray:
    return np.concatenate([x, np.ones((x.shape[0], 1))], axis=1)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def init_weights(spec: NetworkSpec, rng: np.random.Generator) -> list[np.ndarray]:
    weights = []
    for out, inp in spec.layer_shapes():
        fan_in = inp - 1
        scale = np.sqrt((2.0 if spec.activation == "relu" else 1.0) / fan_in)
        W = np.zeros((out, inp))
        W[:, :-1] = rng.standard_normal((out, fan_in)) * scale
        weights.append(W)
    return weights


def _check_weights(spec: NetworkSpec, weights: Sequence[np.ndarray]) -> None:
    shapes = spec.layer_shapes()
    if len(weights) != len(shapes):
        raise ValueError(f"expected {len(shapes)} weight matrices, got {len(weights)}")
    for i, (W, shp) in enumerate(zip(weights, shapes)):
        if W.shape != shp:
            raise ValueError(f"layer {i}: weight shape {W.shape} != {shp}")


def forward(spec: NetworkSpec, weights: Sequence[np.ndarray], x) -> tuple[np.ndarray, ForwardCache]:
    """Network output (regression values or logits) and the activation cache.

    ``x`` may be a single input vector or a (B, d) batch; the output has the
    matching rank.
    """
    _check_weights(spec, weights)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    h = np.atleast_2d(x)
    if h.shape[1] != spec.layer_sizes[0]:
        raise ValueError(f"input width {h.shape[1]} != {spec.layer_sizes[0]}")
    cache = ForwardCache()
    last = spec.n_layers - 1
    for i, W in enumerate(weights):
        a = _augment(h)
        cache.inputs.append(a)
        with np.errstate(over="ignore", invalid="ignore"):
            z = a @ W.T
        if not np.all(np.isfinite(z)):
            raise NumericError(i)
        cache.pre.append(z)
        h = z if i == last else _act(spec.activation, z)
    return (h[0] if single else h), cache


def backward(spec: NetworkSpec, weights: Sequence[np.ndarray], cache: ForwardCache, dout: np.ndarray) -> list[np.ndarray]:
    """Backpropagate ``dout`` (gradient w.r.t. the output pre-activation) to every layer's ``h``."""
    gs = [None] * spec.n_layers
    g = np.atleast_2d(dout)
    for i in range(spec.n_layers - 1, -1, -1):
        gs[i] = g
        if i > 0:
            g = (g @ weights[i][:, :-1]) * _act_grad(spec.activation, cache.pre[i - 1])
    return gs


def loss_output_grad(spec: NetworkSpec, out: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-sample gradient of the loss w.r.t. the output layer's pre-activation.

    MSE uses the per-sample loss ``0.5 * ||f - y||^2``; cross entropy works on
    logits with integer labels.
    """
    out = np.atleast_2d(out)
    if spec.loss == "mse":
        y = np.asarray(y, dtype=float).reshape(out.shape)
        return out - y
    p = softmax(out)
    p[np.arange(out.shape[0]), np.asarray(y, dtype=int)] -= 1.0
    return p


def per_sample_loss(spec: NetworkSpec, out: np.ndarray, y) -> np.ndarray:
    out = np.atleast_2d(out)
    if spec.loss == "mse":
        r = out - np.asarray(y, dtype=float).reshape(out.shape)
        return 0.5 * np.sum(r * r, axis=1)
    z = out - out.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return -logp[np.arange(out.shape[0]), np.asarray(y, dtype=int)]


def sample_model_labels(spec: NetworkSpec, out: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One label per input drawn from the network's own predictive distribution.

    Regression uses a unit-variance Gaussian around the output.
    """
    out = np.atleast_2d(out)
    if spec.loss == "mse":
        return out + rng.standard_normal(out.shape)
    p = softmax(out)
    u = rng.random(out.shape[0])
    idx = (np.cumsum(p, axis=1) < u[:, None]).sum(axis=1)
    return np.minimum(idx, out.shape[1] - 1)


def per_sample_factors(
    spec: NetworkSpec,
    weights: Sequence[np.ndarray],
    X,
    y=None,
    label_mode: str = "model_sampled",
    rng: np.random.Generator | None = None,
) -> list[LayerFactorBatch]:
    """Capture (a, g) for every sample at every layer.

    ``model_sampled`` draws the labels from the model (true Fisher) and never
    reads ``y``; ``empirical`` backpropagates the dataset labels.
    """
    if label_mode not in LABEL_MODES:
        raise ValueError(f"unknown label_mode {label_mode!r}")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out, cache = forward(spec, weights, X)
    if label_mode == "model_sampled":
        if rng is None:
            raise ValueError("model_sampled labels need an rng")
        labels = sample_model_labels(spec, out, rng)
    else:
        if y is None:
            raise ValueError("empirical labels need y")
        labels = y
    gs = backward(spec, weights, cache, loss_output_grad(spec, out, labels))
    return [LayerFactorBatch(a, g) for a, g in zip(cache.inputs, gs)]


def output_factors(spec: NetworkSpec, weights: Sequence[np.ndarray], X, output: int = 0) -> list[LayerFactorBatch]:
    """(a, g) where g is the gradient of output unit ``output`` (not of the loss).

    ``vec(g a^T)`` is then the Jacobian row of that output w.r.t. the layer's
    parameters.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out, cache = forward(spec, weights, X)
    dout = np.zeros_like(np.atleast_2d(out))
    dout[:, output] = 1.0
    gs = backward(spec, weights, cache, dout)
    return [LayerFactorBatch(a, g) for a, g in zip(cache.inputs, gs)]


def layer_theta(W: np.ndarray) -> np.ndarray:
    return W.T.ravel()


def layer_weights(theta: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    out, inp = shape
    return np.asarray(theta, dtype=float).reshape(inp, out).T.copy()


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    lr: float = 1e-3
    epochs: int = 2000
    batch_size: int | None = None  # None: full batch
    weight_decay: float = 0.0
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class TrainResult:
    weights: list[np.ndarray]
    loss_trace: list[float]


def mean_loss(spec: NetworkSpec, weights, X, y) -> float:
    out, _ = forward(spec, weights, np.atleast_2d(X))
    with np.errstate(over="ignore", invalid="ignore"):
        return float(np.mean(per_sample_loss(spec, out, y)))


def _batch_grads(spec, weights, X, y):
    out, cache = forward(spec, weights, X)
    gs = backward(spec, weights, cache, loss_output_grad(spec, out, y))
    B = X.shape[0]
    return [g.T @ a / B for a, g in zip(cache.inputs, gs)]


def train_map(spec: NetworkSpec, X, y, config: TrainConfig | None = None, weights=None) -> TrainResult:
    """Fit MAP weights with Adam or plain SGD; deterministic for a fixed seed.

    The loss trace holds the full-dataset mean loss after every epoch.
    """
    config = config or TrainConfig()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] == 0:
        raise ValueError("cannot train on an empty dataset")
    rng = np.random.default_rng(config.seed)
    weights = [W.copy() for W in weights] if weights is not None else init_weights(spec, rng)
    m1 = [np.zeros_like(W) for W in weights]
    m2 = [np.zeros_like(W) for W in weights]
    n = X.shape[0]
    bs = n if not config.batch_size else min(config.batch_size, n)
    trace: list[float] = []
    step = 0
    y = np.asarray(y)
    for epoch in range(config.epochs):
        order = rng.permutation(n) if bs < n else np.arange(n)
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            grads = _batch_grads(spec, weights, X[idx], y[idx])
            step += 1
            for i, (W, dW) in enumerate(zip(weights, grads)):
                if config.weight_decay:
                    dW = dW + config.weight_decay * W
                if config.optimizer == "sgd":
                    W -= config.lr * dW
                    continue
                m1[i] = config.beta1 * m1[i] + (1 - config.beta1) * dW
                m2[i] = config.beta2 * m2[i] + (1 - config.beta2) * dW * dW
                mh = m1[i] / (1 - config.beta1**step)
                vh = m2[i] / (1 - config.beta2**step)
                W -= config.lr * mh / (np.sqrt(vh) + config.eps)
        try:
            loss = mean_loss(spec, weights, X, y)
        except NumericError:
            loss = float("nan")
        trace.append(loss)
        if not np.isfinite(loss):
            raise TrainingDivergence(epoch, trace)
    return TrainResult(weights, trace)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path, spec: NetworkSpec, weights, seed: int) -> None:
    doc = {
        "schema_version": CHECKPOINT_SCHEMA,
        "spec": spec.to_dict(),
        "weights": [W.tolist() for W in weights],
        "seed": int(seed),
    }
    # json writes floats with repr(), which round-trips exactly
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> tuple[NetworkSpec, list[np.ndarray], int]:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema_version") != CHECKPOINT_SCHEMA:
        raise ValueError(f"unsupported checkpoint schema {doc.get('schema_version')!r}")
    spec = NetworkSpec.from_dict(doc["spec"])
    weights = [np.asarray(W, dtype=float) for W in doc["weights"]]
    _check_weights(spec, weights)
    return spec, weights, int(doc["seed"])
