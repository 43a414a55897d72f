"""Treatment-effect evaluation metrics and a kNN baseline."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree

from .data import Dataset, Scaler
from .errors import UnsupportedMetricError


def _pair(a, b, what="ITE"):
    if a is None or b is None:
        raise UnsupportedMetricError(f"ground-truth {what} unavailable")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValueError("empty input")
    return a, b


def pehe(ite_true, ite_pred) -> tuple[float, float]:
    """Return ``(eps_pehe, sqrt(eps_pehe))``."""
    a, b = _pair(ite_true, ite_pred)
    value = float(np.mean((a - b) ** 2))
    return value, math.sqrt(value)


def ate_error(ite_true, ite_pred) -> float:
    """Absolute difference between true and estimated average effects."""
    a, b = _pair(ite_true, ite_pred)
    # mean of differences rather than difference of means: same value, less cancellation
    return abs(float(np.mean(b - a)))


def _randomized_subset(y1_hat, y0_hat, y_f, t, e_flag):
    if e_flag is None:
        raise UnsupportedMetricError("no randomized-subset flags (e_flag) available")
    e = np.asarray(e_flag) == 1
    if not e.any():
        raise UnsupportedMetricError("no units in the randomized subset")
    return (np.asarray(y1_hat, dtype=np.float64), np.asarray(y0_hat, dtype=np.float64),
            np.asarray(y_f, dtype=np.float64), np.asarray(t), e)


def policy_risk_detail(y1_hat, y0_hat, y_f, t, e_flag) -> tuple[float, list[str]]:
    """Policy risk plus the names of any empty conditioning cells.

    The policy treats a unit when ``y1_hat - y0_hat > 0``. Everything is
    computed on the randomized subset; an empty cell contributes zero.
    """
    y1_hat, y0_hat, y_f, t, e = _randomized_subset(y1_hat, y0_hat, y_f, t, e_flag)
    policy = (y1_hat - y0_hat > 0)[e]
    y, tt = y_f[e], t[e]
    p_treat = float(np.mean(policy))
    empty = []
    treat_cell = policy & (tt == 1)
    ctrl_cell = ~policy & (tt == 0)
    if treat_cell.any():
        value_treat = float(np.mean(y[treat_cell]))
    else:
        value_treat = 0.0
        empty.append("treated&pi=1")
    if ctrl_cell.any():
        value_ctrl = float(np.mean(y[ctrl_cell]))
    else:
        value_ctrl = 0.0
        empty.append("control&pi=0")
    return 1.0 - (value_treat * p_treat + value_ctrl * (1.0 - p_treat)), empty


def policy_risk(y1_hat, y0_hat, y_f, t, e_flag) -> float:
    value, empty = policy_risk_detail(y1_hat, y0_hat, y_f, t, e_flag)
    if empty:
        warnings.warn(f"policy risk: empty cells {empty} counted as zero", RuntimeWarning, stacklevel=2)
    return value


def att_error(y1_hat, y0_hat, y_f, t, e_flag) -> float:
    """``|ATT - mean over treated of (y1_hat - y0_hat)|``.

    ATT is the treated mean outcome minus the mean outcome of controls inside
    the randomized subset.
    """
    y1_hat, y0_hat, y_f, t, e = _randomized_subset(y1_hat, y0_hat, y_f, t, e_flag)
    treated = t == 1
    ctrl_e = (t == 0) & e
    if not treated.any():
        raise UnsupportedMetricError("no treated units")
    if not ctrl_e.any():
        raise UnsupportedMetricError("no control units inside the randomized subset")
    att = float(np.mean(y_f[treated])) - float(np.mean(y_f[ctrl_e]))
    return abs(att - float(np.mean((y1_hat - y0_hat)[treated])))


def factual_rmse(y0_hat, y1_hat, y_f, t) -> float:
    pred = np.where(np.asarray(t) == 1, y1_hat, y0_hat)
    return float(np.sqrt(np.mean((pred - np.asarray(y_f)) ** 2)))


def knn_estimator(train: Dataset, query_X: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-arm k-nearest-neighbour outcome means in standardised covariate space."""
    if k < 1:
        raise ValueError("k must be at least 1")
    scaler = Scaler.fit(train.X)
    Xs = scaler.transform(train.X)
    Q = scaler.transform(np.atleast_2d(query_X))
    preds = []
    for arm in (0, 1):
        mask = train.t == arm
        if mask.sum() < k:
            raise ValueError(f"arm t={arm} has {int(mask.sum())} units, fewer than k={k}")
        _, idx = cKDTree(Xs[mask]).query(Q, k=k)
        idx = np.asarray(idx).reshape(Q.shape[0], k)
        preds.append(train.y_f[mask][idx].mean(axis=1))
    return preds[0], preds[1]


@dataclass
class MetricsReport:
    """One method on one split. Metrics the data cannot support are None."""

    sqrt_pehe: float | None
    eps_ate: float | None
    factual_rmse: float
    split_label: str
    r_pol: float | None = None
    eps_att: float | None = None
    policy_empty_cells: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["policy_empty_cells"] = list(self.policy_empty_cells)
        return d


def true_ite(ds: Dataset) -> np.ndarray | None:
    """Noiseless ITE if known, else the noisy one from both observed outcomes."""
    if ds.has_ite:
        return ds.true_ite()
    if ds.y_cf is not None:
        return np.where(ds.t == 1, ds.y_f - ds.y_cf, ds.y_cf - ds.y_f)
    return None


def evaluate(ds: Dataset, y0_hat, y1_hat, split_label: str) -> MetricsReport:
    """Every metric ``ds`` can support for predictions ``(y0_hat, y1_hat)``."""
    y0_hat = np.asarray(y0_hat, dtype=np.float64)
    y1_hat = np.asarray(y1_hat, dtype=np.float64)
    ite_pred = y1_hat - y0_hat
    ite = true_ite(ds)
    sqrt_pehe = eps_ate = None
    if ite is not None:
        sqrt_pehe = pehe(ite, ite_pred)[1]
        eps_ate = ate_error(ite, ite_pred)
    r_pol = eps_att = None
    empty: list[str] = []
    if ds.e_flag is not None and ds.e_flag.any():
        r_pol, empty = policy_risk_detail(y1_hat, y0_hat, ds.y_f, ds.t, ds.e_flag)
        try:
            eps_att = att_error(y1_hat, y0_hat, ds.y_f, ds.t, ds.e_flag)
        except UnsupportedMetricError:
            eps_att = None
    return MetricsReport(
        sqrt_pehe=sqrt_pehe,
        eps_ate=eps_ate,
        factual_rmse=factual_rmse(y0_hat, y1_hat, ds.y_f, ds.t),
        split_label=split_label,
        r_pol=r_pol,
        eps_att=eps_att,
        policy_empty_cells=tuple(empty),
    )
