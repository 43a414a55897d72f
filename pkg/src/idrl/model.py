"""Infomax and domain-independent representation learner.

Components:

* ``g``: covariates -> representation ``R`` (dense net)
* summary ``s = sigmoid(mean_treated(R)/2 + mean_control(R)/2)``
* ``phi``: covariates -> hidden domain code ``H`` -> P(t=1); trained by
  cross-entropy on ``t`` with its own optimizer
* infomax discriminator ``d_s(r, s) = sigmoid(r' W_s s)``
* domain discriminator ``d_h(r, h) = sigmoid(r' W_h h)``
* two outcome heads on ``R`` (control / treated)

Negatives come from shuffling every covariate column independently. Training
minimises the factual MSE, maximises the infomax JSD bound and plays a
min-max game on the domain bound: ``W_h`` ascends it while ``g`` receives the
reversed gradient and descends it. ``H`` is treated as a constant input to the
domain bound.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import nn
from .data import Dataset, Scaler
from .errors import ConfigurationError, TrainingError
from .nn import DenseLayer, OptimState, adam_step, backward_mlp, bce_terms, forward_trace, sigmoid

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass(frozen=True)
class IdrlConfig:
    rep_layers: tuple[int, ...] = (64, 64)
    rep_dim: int = 32
    rep_activation: str = "relu"
    head_layers: tuple[int, ...] = (32, 32)
    phi_layers: tuple[int, ...] = (32,)
    alpha: float = 1.0
    beta: float = 1.0
    epochs: int = 120
    batch_size: int | None = None
    learning_rate: float = 1e-3
    phi_learning_rate: float = 1e-3
    phi_pretrain_epochs: int = 0
    # the bilinear discriminators need to keep pace with g, otherwise the
    # reversed gradient drives MI_h below chance instead of towards it
    disc_learning_rate: float = 1e-2
    disc_steps: int = 3
    seed: int = 0
    disable_mi_s: bool = False
    disable_mi_h: bool = False
    freeze_phi: bool = False

    def __post_init__(self):
        object.__setattr__(self, "rep_layers", tuple(int(w) for w in self.rep_layers))
        object.__setattr__(self, "head_layers", tuple(int(w) for w in self.head_layers))
        object.__setattr__(self, "phi_layers", tuple(int(w) for w in self.phi_layers))
        if self.alpha < 0 or self.beta < 0:
            raise ConfigurationError("alpha and beta must be nonnegative")
        if self.rep_dim < 1:
            raise ConfigurationError("rep_dim must be at least 1")
        if any(w < 1 for w in self.rep_layers + self.head_layers + self.phi_layers):
            raise ConfigurationError("layer widths must be positive")
        if not self.phi_layers:
            raise ConfigurationError("phi needs at least one hidden layer to define H")
        if self.phi_pretrain_epochs < 0:
            raise ConfigurationError("phi_pretrain_epochs must be nonnegative")
        if self.disc_steps < 0:
            raise ConfigurationError("disc_steps must be nonnegative")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be nonnegative")
        if self.batch_size is not None and self.batch_size < 2:
            raise ConfigurationError("batch_size must be at least 2")
        if self.rep_activation not in nn.ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.rep_activation!r}")

    @property
    def effective_alpha(self) -> float:
        return 0.0 if self.disable_mi_s else self.alpha

    @property
    def effective_beta(self) -> float:
        return 0.0 if self.disable_mi_h else self.beta

    @property
    def label(self) -> str:
        a, b = self.effective_alpha > 0, self.effective_beta > 0
        if a and b:
            return "idrl"
        if b:
            return "idrl_wo_mi_s"
        if a:
            return "idrl_wo_mi_h"
        return "tarnet_equiv"

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("rep_layers", "head_layers", "phi_layers"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "IdrlConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class IdrlParams:
    g: list[DenseLayer]
    head0: list[DenseLayer]
    head1: list[DenseLayer]
    phi: list[DenseLayer]
    W_s: np.ndarray
    W_h: np.ndarray

    def trainable(self) -> list[np.ndarray]:
        """Arrays receiving gradients from :func:`objective`, in gradient order."""
        return self.network_arrays() + [self.W_s, self.W_h]

    def network_arrays(self) -> list[np.ndarray]:
        return nn.layer_params(self.g) + nn.layer_params(self.head0) + nn.layer_params(self.head1)

    def phi_arrays(self) -> list[np.ndarray]:
        return nn.layer_params(self.phi)

    def copy(self) -> "IdrlParams":
        return IdrlParams(
            [l.copy() for l in self.g], [l.copy() for l in self.head0],
            [l.copy() for l in self.head1], [l.copy() for l in self.phi],
            self.W_s.copy(), self.W_h.copy(),
        )

    def to_dict(self) -> dict:
        def layers(ls):
            return [{"weight": l.weight.tolist(), "bias": l.bias.tolist(),
                     "activation": l.activation} for l in ls]

        return {"g": layers(self.g), "head0": layers(self.head0), "head1": layers(self.head1),
                "phi": layers(self.phi), "W_s": self.W_s.tolist(), "W_h": self.W_h.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "IdrlParams":
        def layers(ls):
            return [DenseLayer(np.array(l["weight"], dtype=np.float64),
                               np.array(l["bias"], dtype=np.float64), l["activation"])
                    for l in ls]

        return cls(layers(d["g"]), layers(d["head0"]), layers(d["head1"]), layers(d["phi"]),
                   np.array(d["W_s"], dtype=np.float64), np.array(d["W_h"], dtype=np.float64))


def _streams(seed: int) -> dict[str, np.random.Generator]:
    # independent streams so switching a component off leaves the others' draws intact
    names = ("g", "heads", "phi", "disc", "shuffle", "batches")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {name: np.random.default_rng(ss) for name, ss in zip(names, children)}


def init_params(config: IdrlConfig, d: int, seed: int | None = None) -> IdrlParams:
    rngs = _streams(config.seed if seed is None else seed)
    g_widths = config.rep_layers + (config.rep_dim,)
    g = nn.init_mlp(d, g_widths, ("relu",) * len(config.rep_layers) + (config.rep_activation,), rngs["g"])
    head_widths = config.head_layers + (1,)
    head_acts = ("relu",) * len(config.head_layers) + ("identity",)
    head0 = nn.init_mlp(config.rep_dim, head_widths, head_acts, rngs["heads"])
    head1 = nn.init_mlp(config.rep_dim, head_widths, head_acts, rngs["heads"])
    phi = nn.init_mlp(d, config.phi_layers + (1,),
                      ("relu",) * len(config.phi_layers) + ("identity",), rngs["phi"])
    h_dim = config.phi_layers[-1]
    lim_s = math.sqrt(6.0 / (2 * config.rep_dim))
    lim_h = math.sqrt(6.0 / (config.rep_dim + h_dim))
    W_s = rngs["disc"].uniform(-lim_s, lim_s, size=(config.rep_dim, config.rep_dim))
    W_h = rngs["disc"].uniform(-lim_h, lim_h, size=(config.rep_dim, h_dim))
    return IdrlParams(g, head0, head1, phi, W_s, W_h)


def represent(params: IdrlParams, X: np.ndarray) -> np.ndarray:
    return nn.forward_mlp(params.g, X)


def _arm_weights(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t)
    n_t = int(np.sum(t == 1))
    n_c = int(np.sum(t == 0))
    if n_t == 0 or n_c == 0:
        raise ValueError(f"summary needs both arms (treated={n_t}, control={n_c})")
    return np.where(t == 1, 0.5 / n_t, 0.5 / n_c)


def summarize(R: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Sigmoid of the average of the treated-mean and control-mean rows."""
    return sigmoid(_arm_weights(t) @ np.asarray(R, dtype=np.float64))


def negative_shuffle(X: np.ndarray, seed) -> np.ndarray:
    """Permute every column of ``X`` independently (``seed`` may be a Generator)."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] < 2:
        raise ValueError("need at least two rows to shuffle")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.permuted(X, axis=0)


def predict_domain(params: IdrlParams, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Hidden domain code ``H`` and treatment probability from ``phi``."""
    trace = forward_trace(params.phi, X)
    return trace.post[-2], sigmoid(trace.output[:, 0])


def score_ds(params: IdrlParams, r: np.ndarray, s: np.ndarray) -> np.ndarray:
    """``sigmoid(r' W_s s)``; ``r`` may be one row or a stack of rows."""
    return sigmoid(np.asarray(r, dtype=np.float64) @ (params.W_s @ s))


def score_dh(params: IdrlParams, r: np.ndarray, h: np.ndarray) -> np.ndarray:
    """``sigmoid(r' W_h h)``, rowwise when ``r`` and ``h`` are stacks."""
    r = np.asarray(r, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    return sigmoid(np.sum((r @ params.W_h) * h, axis=-1))


def _jsd_bound(p_pos: np.ndarray, p_neg: np.ndarray):
    vp, gp = bce_terms(p_pos, positive=True)
    vn, gn = bce_terms(p_neg, positive=False)
    # chain through the sigmoid: d p / d logit = p (1 - p)
    return 0.5 * (vp + vn), 0.5 * gp * p_pos * (1 - p_pos), 0.5 * gn * p_neg * (1 - p_neg)


def mi_s_value_grad(W_s: np.ndarray, R: np.ndarray, R_neg: np.ndarray, t: np.ndarray):
    """Infomax bound and its gradients ``(value, dR, dR_neg, dW_s)``.

    The gradient through the summary ``s`` is included.
    """
    w = _arm_weights(t)
    s = sigmoid(w @ R)
    Ws = W_s @ s
    p_pos = sigmoid(R @ Ws)
    p_neg = sigmoid(R_neg @ Ws)
    value, da, dan = _jsd_bound(p_pos, p_neg)
    dR = np.outer(da, Ws)
    dR_neg = np.outer(dan, Ws)
    d_Ws = R.T @ da + R_neg.T @ dan
    dW = np.outer(d_Ws, s)
    ds = W_s.T @ d_Ws
    dR += np.outer(w, ds * s * (1 - s))
    return value, dR, dR_neg, dW


def loss_mi_s(params: IdrlParams, R: np.ndarray, R_neg: np.ndarray, s: np.ndarray) -> float:
    """JSD infomax bound between rows and the summary (to be maximised)."""
    if R.shape[0] != R_neg.shape[0]:
        raise ValueError("positive and negative sets must have equal size")
    value, _, _ = _jsd_bound(score_ds(params, R, s), score_ds(params, R_neg, s))
    return value


def mi_h_value_grad(W_h: np.ndarray, R: np.ndarray, H: np.ndarray, H_neg: np.ndarray):
    """Domain bound and its gradients ``(value, dR, dW_h)``; ``H`` is constant."""
    RW = R @ W_h
    p_pos = sigmoid(np.sum(RW * H, axis=1))
    p_neg = sigmoid(np.sum(RW * H_neg, axis=1))
    value, db, dbn = _jsd_bound(p_pos, p_neg)
    mix = db[:, None] * H + dbn[:, None] * H_neg
    return value, mix @ W_h.T, R.T @ mix


def loss_mi_h(params: IdrlParams, R: np.ndarray, H: np.ndarray, H_neg: np.ndarray) -> float:
    """JSD bound between representations and domain codes (positives pair r_i
    with h_i, negatives pair r_j with the shuffled-input code)."""
    if not (R.shape[0] == H.shape[0] == H_neg.shape[0]):
        raise ValueError("row counts of R, H and H_neg differ")
    value, _, _ = _jsd_bound(score_dh(params, R, H), score_dh(params, R, H_neg))
    return value


def predict_outcomes(params: IdrlParams, R: np.ndarray, t: np.ndarray | None = None):
    """Return ``(y0, y1, y_f)``; ``y_f`` is None when ``t`` is not given."""
    y0 = nn.forward_mlp(params.head0, R)[:, 0]
    y1 = nn.forward_mlp(params.head1, R)[:, 0]
    yf = None if t is None else np.where(np.asarray(t) == 1, y1, y0)
    return y0, y1, yf


@dataclass
class ObjectiveTerms:
    loss_y: float
    mi_s: float | None
    mi_h: float | None
    total: float


def objective(
    params: IdrlParams,
    X: np.ndarray,
    X_neg: np.ndarray | None,
    t: np.ndarray,
    y: np.ndarray,
    alpha: float,
    beta: float,
    H: np.ndarray | None = None,
    H_neg: np.ndarray | None = None,
    reverse: bool = True,
) -> tuple[ObjectiveTerms, list[np.ndarray]]:
    """Composite objective ``L_Y - alpha*MI_s - beta*MI_h`` and parameter gradients.

    Gradients are aligned with :meth:`IdrlParams.trainable`. With
    ``reverse=True`` the ``MI_h`` contribution reaching ``g`` is negated, so a
    descent step moves ``W_h`` to tighten the bound and ``g`` to shrink it.
    With ``reverse=False`` every gradient is the exact gradient of ``total``.
    Terms with zero weight are skipped.
    """
    t = np.asarray(t)
    tr = forward_trace(params.g, X)
    R = tr.output
    tr0 = forward_trace(params.head0, R)
    tr1 = forward_trace(params.head1, R)
    y0, y1 = tr0.output[:, 0], tr1.output[:, 0]
    loss_y, dyf = nn.mse_loss(np.where(t == 1, y1, y0), y)
    g0, dR0 = backward_mlp(params.head0, R, ((1 - t) * dyf)[:, None], tr0)
    g1, dR1 = backward_mlp(params.head1, R, (t * dyf)[:, None], tr1)
    dR = dR0 + dR1

    total = loss_y
    mi_s = mi_h = None
    dW_s = np.zeros_like(params.W_s)
    dW_h = np.zeros_like(params.W_h)
    g_grads = None

    if alpha > 0:
        tr_neg = forward_trace(params.g, X_neg)
        mi_s, dR_s, dRn_s, dWs = mi_s_value_grad(params.W_s, R, tr_neg.output, t)
        total -= alpha * mi_s
        dR -= alpha * dR_s
        dW_s = -alpha * dWs
        g_grads, _ = backward_mlp(params.g, X_neg, -alpha * dRn_s, tr_neg)

    if beta > 0:
        if H is None or H_neg is None:
            raise ConfigurationError("beta > 0 needs domain codes H and H_neg")
        mi_h, dR_h, dWh = mi_h_value_grad(params.W_h, R, H, H_neg)
        total -= beta * mi_h
        dR += (beta if reverse else -beta) * dR_h
        dW_h = -beta * dWh

    gp, _ = backward_mlp(params.g, X, dR, tr)
    if g_grads is not None:
        gp = [(a + c, b + e) for (a, b), (c, e) in zip(gp, g_grads)]

    grads = nn.flatten_grads(gp) + nn.flatten_grads(g0) + nn.flatten_grads(g1) + [dW_s, dW_h]
    return ObjectiveTerms(loss_y, mi_s, mi_h, total), grads


def _phi_step(params: IdrlParams, X: np.ndarray, t: np.ndarray, state: OptimState) -> float:
    trace = forward_trace(params.phi, X)
    p = sigmoid(trace.output[:, 0])
    pc = np.clip(p, nn.PROB_CLAMP, 1 - nn.PROB_CLAMP)
    ce = -float(np.mean(t * np.log(pc) + (1 - t) * np.log1p(-pc)))
    upstream = ((p - t) / t.size)[:, None]
    grads, _ = backward_mlp(params.phi, X, upstream, trace)
    adam_step(params.phi_arrays(), nn.flatten_grads(grads), state)
    return ce


def fit_domain_predictor(params: IdrlParams, X: np.ndarray, t: np.ndarray,
                         epochs: int, lr: float = 1e-3) -> list[float]:
    """Train ``phi`` alone by full-batch cross-entropy; returns the loss curve."""
    state = OptimState.for_params(params.phi_arrays(), lr=lr)
    t = np.asarray(t, dtype=np.float64)
    return [_phi_step(params, X, t, state) for _ in range(epochs)]


@dataclass
class FittedIdrl:
    """Trained parameters plus the input/target scaling used during training."""

    config: IdrlConfig
    params: IdrlParams
    x_scaler: Scaler
    y_mean: float
    y_scale: float
    best_epoch: int = -1
    log: list[dict] = field(default_factory=list)

    def predict(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Potential-outcome predictions ``(y0, y1)`` on the original scale."""
        R = represent(self.params, self.x_scaler.transform(X))
        y0, y1, _ = predict_outcomes(self.params, R)
        return y0 * self.y_scale + self.y_mean, y1 * self.y_scale + self.y_mean

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "config": self.config.to_dict(),
            "seed": self.config.seed,
            "x_scaler": self.x_scaler.to_dict(),
            "y_mean": self.y_mean,
            "y_scale": self.y_scale,
            "best_epoch": self.best_epoch,
            "params": self.params.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FittedIdrl":
        if d.get("format_version") != FORMAT_VERSION:
            raise ConfigurationError(f"unsupported model format {d.get('format_version')!r}")
        return cls(
            IdrlConfig.from_dict(d["config"]), IdrlParams.from_dict(d["params"]),
            Scaler.from_dict(d["x_scaler"]), float(d["y_mean"]), float(d["y_scale"]),
            int(d.get("best_epoch", -1)),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "FittedIdrl":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _discriminator_steps(params, X, X_neg, t, alpha, beta, H, H_neg, steps, state):
    """Extra ascent steps on ``W_s``/``W_h`` with the representation held fixed."""
    R = represent(params, X)
    R_neg = represent(params, X_neg) if alpha > 0 else None
    for _ in range(steps):
        dW_s = np.zeros_like(params.W_s)
        dW_h = np.zeros_like(params.W_h)
        if alpha > 0:
            dW_s = -alpha * mi_s_value_grad(params.W_s, R, R_neg, t)[3]
        if beta > 0:
            dW_h = -beta * mi_h_value_grad(params.W_h, R, H, H_neg)[2]
        adam_step([params.W_s, params.W_h], [dW_s, dW_h], state)


def _batches(n: int, batch_size: int | None, rng: np.random.Generator):
    if batch_size is None or batch_size >= n:
        return [np.arange(n)]
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def fit(config: IdrlConfig, train: Dataset, valid: Dataset | None = None) -> FittedIdrl:
    """Train on ``train``; keep the parameters with the best validation factual RMSE.

    Per step: shuffle negatives, fit ``phi`` one step on ``(X, t)`` and take
    ``H``/``H_neg`` from it, then one Adam step on the composite objective.
    Without ``valid`` the final parameters are returned.
    """
    train.require_both_arms()
    alpha, beta = config.effective_alpha, config.effective_beta
    x_scaler = Scaler.fit(train.X)
    X = x_scaler.transform(train.X)
    t = train.t
    y_mean = float(train.y_f.mean())
    y_scale = float(train.y_f.std()) or 1.0
    y = (train.y_f - y_mean) / y_scale
    Xv = x_scaler.transform(valid.X) if valid is not None else None

    params = init_params(config, train.d)
    rngs = _streams(config.seed)
    opt = OptimState.for_params(params.network_arrays(), lr=config.learning_rate)
    disc_opt = OptimState.for_params([params.W_s, params.W_h], lr=config.disc_learning_rate)
    phi_opt = OptimState.for_params(params.phi_arrays(), lr=config.phi_learning_rate)

    if beta > 0:
        t_float = t.astype(np.float64)
        for _ in range(config.phi_pretrain_epochs):
            _phi_step(params, X, t_float, phi_opt)

    result = FittedIdrl(config, params, x_scaler, y_mean, y_scale)
    best_rmse = math.inf
    best_params = params.copy()
    for epoch in range(config.epochs):
        totals = {"loss_y": 0.0, "mi_s": 0.0, "mi_h": 0.0, "phi_ce": 0.0}
        n_batches = 0
        for idx in _batches(train.n, config.batch_size, rngs["batches"]):
            Xb, tb, yb = X[idx], t[idx], y[idx]
            both_arms = 0 < tb.sum() < tb.size
            a_b = alpha if both_arms else 0.0
            Xn = negative_shuffle(Xb, rngs["shuffle"]) if (a_b > 0 or beta > 0) else None
            H = Hn = None
            if beta > 0:
                H, _ = predict_domain(params, Xb)
                Hn, _ = predict_domain(params, Xn)
                if not config.freeze_phi:
                    totals["phi_ce"] += _phi_step(params, Xb, tb.astype(np.float64), phi_opt)
            if config.disc_steps and (a_b > 0 or beta > 0):
                _discriminator_steps(params, Xb, Xn, tb, a_b, beta, H, Hn,
                                     config.disc_steps, disc_opt)
            terms, grads = objective(params, Xb, Xn, tb, yb, a_b, beta, H, Hn)
            if not math.isfinite(terms.total):
                raise TrainingError(
                    f"non-finite objective at epoch {epoch}: loss_y={terms.loss_y}, "
                    f"mi_s={terms.mi_s}, mi_h={terms.mi_h}"
                )
            adam_step(params.network_arrays(), grads[:-2], opt)
            if a_b > 0 or beta > 0:
                adam_step([params.W_s, params.W_h], grads[-2:], disc_opt)
            totals["loss_y"] += terms.loss_y
            totals["mi_s"] += terms.mi_s or 0.0
            totals["mi_h"] += terms.mi_h or 0.0
            n_batches += 1

        entry = {"epoch": epoch}
        entry.update({k: v / n_batches for k, v in totals.items()})
        if Xv is not None:
            _, _, yf = predict_outcomes(params, represent(params, Xv), valid.t)
            rmse = float(np.sqrt(np.mean((yf * y_scale + y_mean - valid.y_f) ** 2)))
            entry["valid_rmse"] = rmse
            if rmse < best_rmse:
                best_rmse = rmse
                best_params = params.copy()
                result.best_epoch = epoch
        result.log.append(entry)

    if Xv is not None and config.epochs > 0:
        result.params = best_params
    else:
        result.best_epoch = config.epochs - 1
    return result


def estimate_effects(model: FittedIdrl, ds: Dataset) -> tuple[np.ndarray, float]:
    """Individual effects ``y1_hat - y0_hat`` and their mean."""
    y0, y1 = model.predict(ds.X)
    ite = y1 - y0
    return ite, float(np.mean(ite))
