"""Dense-network core: forward/backward passes, losses and Adam.

Everything is float64 numpy. Layers compute ``act(x @ W + b)`` with ``W`` of
shape ``(in_dim, out_dim)``. Gradients are hand-derived per layer and chained
in reverse order, which is all the model needs (no general autodiff graph).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

ACTIVATIONS = ("relu", "sigmoid", "identity")
PROB_CLAMP = 1e-7


def sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class DenseLayer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ConfigurationError(
                f"weight {self.weight.shape} and bias {self.bias.shape} do not match"
            )
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.weight.copy(), self.bias.copy(), self.activation)


def glorot_layer(in_dim: int, out_dim: int, activation: str, rng: np.random.Generator) -> DenseLayer:
    """Uniform Glorot initialisation with zero bias."""
    limit = np.sqrt(6.0 / (in_dim + out_dim))
    w = rng.uniform(-limit, limit, size=(in_dim, out_dim))
    return DenseLayer(w, np.zeros(out_dim), activation)


def init_mlp(
    in_dim: int,
    widths: list[int] | tuple[int, ...],
    activations: list[str] | tuple[str, ...],
    rng: np.random.Generator,
) -> list[DenseLayer]:
    if len(widths) != len(activations):
        raise ConfigurationError("need one activation per layer")
    layers = []
    prev = in_dim
    for width, act in zip(widths, activations):
        if width < 1:
            raise ConfigurationError(f"layer width must be positive, got {width}")
        layers.append(glorot_layer(prev, width, act, rng))
        prev = width
    return layers


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "sigmoid":
        return sigmoid(z)
    return z


def _activation_grad(z: np.ndarray, a: np.ndarray, activation: str) -> np.ndarray:
    """d act / d z evaluated at pre-activation ``z`` (output ``a``)."""
    if activation == "relu":
        return (z > 0).astype(np.float64)
    if activation == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(z)


def _check_input(layers: list[DenseLayer], x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ConfigurationError(f"input must be 2-D, got shape {x.shape}")
    if layers and x.shape[1] != layers[0].in_dim:
        raise ConfigurationError(
            f"input has {x.shape[1]} columns, first layer expects {layers[0].in_dim}"
        )
    for prev, nxt in zip(layers, layers[1:]):
        if prev.out_dim != nxt.in_dim:
            raise ConfigurationError(
                f"layer widths do not chain: {prev.out_dim} -> {nxt.in_dim}"
            )
    return x


@dataclass
class Trace:
    """Per-layer inputs, pre-activations and outputs from one forward pass."""

    inputs: list[np.ndarray] = field(default_factory=list)
    pre: list[np.ndarray] = field(default_factory=list)
    post: list[np.ndarray] = field(default_factory=list)

    @property
    def output(self) -> np.ndarray:
        return self.post[-1] if self.post else self.inputs[0]


def forward_trace(layers: list[DenseLayer], x: np.ndarray) -> Trace:
    x = _check_input(layers, x)
    trace = Trace(inputs=[x])
    h = x
    for i, layer in enumerate(layers):
        if i > 0:
            trace.inputs.append(h)
        z = h @ layer.weight + layer.bias
        h = _activate(z, layer.activation)
        trace.pre.append(z)
        trace.post.append(h)
    return trace


def forward_mlp(layers: list[DenseLayer], x: np.ndarray) -> np.ndarray:
    """Apply the layers in order; returns an ``(n, out_dim)`` array."""
    return forward_trace(layers, x).output


def backward_mlp(
    layers: list[DenseLayer],
    x: np.ndarray,
    upstream: np.ndarray,
    trace: Trace | None = None,
) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
    """Backpropagate ``upstream`` (dL/d output) through the layers.

    Returns ``([(dW, db), ...], dX)`` with one pair per layer. Pass the
    ``trace`` from :func:`forward_trace` to skip recomputing the forward pass.
    """
    if trace is None:
        trace = forward_trace(layers, x)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != trace.output.shape:
        raise ConfigurationError(
            f"upstream gradient shape {upstream.shape} != output shape {trace.output.shape}"
        )
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(layers)  # type: ignore[list-item]
    delta = upstream
    for i in range(len(layers) - 1, -1, -1):
        layer = layers[i]
        dz = delta * _activation_grad(trace.pre[i], trace.post[i], layer.activation)
        grads[i] = (trace.inputs[i].T @ dz, dz.sum(axis=0))
        delta = dz @ layer.weight.T
    return grads, delta


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient with respect to ``pred``."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.size == 0:
        raise ValueError("mse_loss of an empty vector")
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    n = diff.size
    return float(np.dot(diff.ravel(), diff.ravel()) / n), 2.0 * diff / n


def bce_terms(p: np.ndarray, positive: bool, eps: float = PROB_CLAMP) -> tuple[float, np.ndarray]:
    """Mean log-likelihood term of a binary cross-entropy.

    ``positive`` gives ``mean(log p)``, otherwise ``mean(log(1 - p))``. ``p`` is
    clamped to ``[eps, 1 - eps]`` first; the returned gradient (w.r.t. the
    unclamped ``p``) is zero wherever the clamp was active.
    """
    p = np.asarray(p, dtype=np.float64)
    n = p.size
    pc = np.clip(p, eps, 1.0 - eps)
    inside = (p >= eps) & (p <= 1.0 - eps)
    if positive:
        value = float(np.mean(np.log(pc)))
        grad = np.where(inside, 1.0 / (n * pc), 0.0)
    else:
        value = float(np.mean(np.log1p(-pc)))
        grad = np.where(inside, -1.0 / (n * (1.0 - pc)), 0.0)
    return value, grad


@dataclass
class OptimState:
    """Adam moments for a fixed list of parameter arrays."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: list[np.ndarray], lr: float = 1e-3, **kwargs) -> "OptimState":
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            lr=lr,
            **kwargs,
        )


def adam_step(
    params: list[np.ndarray], grads: list[np.ndarray], state: OptimState
) -> tuple[list[np.ndarray], OptimState]:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ConfigurationError("params, grads and optimizer state differ in length")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ConfigurationError(f"shape mismatch in adam_step: {p.shape} vs {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def layer_params(layers: list[DenseLayer]) -> list[np.ndarray]:
    """Flat ``[W0, b0, W1, b1, ...]`` view (the arrays themselves, not copies)."""
    out = []
    for layer in layers:
        out.extend((layer.weight, layer.bias))
    return out


def flatten_grads(grads: list[tuple[np.ndarray, np.ndarray]]) -> list[np.ndarray]:
    out = []
    for dw, db in grads:
        out.extend((dw, db))
    return out
