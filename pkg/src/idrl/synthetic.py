"""Synthetic observational data with four variable roles.

Covariates are laid out as ``X = (C, Z, I, A)``: confounders drive both
treatment and outcome, instrumental variables only the treatment, adjustment
variables only the outcome and irrelevant variables nothing. Outcomes follow a
partially linear model ``Y = tau(C, A) * T + g(C, A) + eps`` with
``T ~ Bernoulli(e0(C, Z))``.

Functional forms (none of them are pinned down by the source design):

* ``tau(v) = 1 + b_tau.v + 0.5 sin(b_s.v)``
* ``g(v) = b_g.v + 0.3 (b_n.v)^2``
* ``e0(w) = clip(logistic(kappa * b_e.w), 0.05, 0.95)``

with ``v = (C, A)`` and ``w = (C, Z)``. Coefficient vectors are drawn once from
``N(0, 1/dim)`` under ``coefficient_seed``. ``kappa`` maps ``overlap_z``
population standard deviations of the linear score onto logit(0.95).
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Dataset

FAMILIES = ("independent", "low", "medium", "high")
FAMILY_RHO = {"independent": 0.0, "low": 0.2, "medium": 0.5, "high": 0.8}
PERTURBATION_WEIGHT = 0.15
E0_BOUNDS = (0.05, 0.95)


@dataclass(frozen=True)
class SyntheticSpec:
    n_samples: int = 3000
    n_confounders: int = 15
    n_adjustment: int = 15
    n_instrumental: int = 10
    n_irrelevant: int = 20
    correlation_family: str = "medium"
    coefficient_seed: int = 0
    sample_seed: int = 0
    noise_sd: float = 1.0
    q: float = 0.0
    propensity_scale: float = 1.0
    overlap_z: float = 2.0

    def __post_init__(self):
        counts = (self.n_confounders, self.n_adjustment, self.n_instrumental, self.n_irrelevant)
        if any(c < 0 for c in counts):
            raise ValueError(f"variable counts must be nonnegative, got {counts}")
        if self.n_samples < 1:
            raise ValueError("n_samples must be positive")
        if self.d < 1:
            raise ValueError("need at least one covariate")
        if self.correlation_family not in FAMILIES:
            raise ValueError(f"unknown correlation family {self.correlation_family!r}")
        if not 0.0 <= self.q <= 1.0:
            raise ValueError(f"q must lie in [0, 1], got {self.q}")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be nonnegative")

    @property
    def d(self) -> int:
        return self.n_confounders + self.n_adjustment + self.n_instrumental + self.n_irrelevant

    def roles(self) -> tuple[str, ...]:
        return (
            ("confounder",) * self.n_confounders
            + ("instrumental",) * self.n_instrumental
            + ("irrelevant",) * self.n_irrelevant
            + ("adjustment",) * self.n_adjustment
        )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class GroundTruth:
    tau: np.ndarray
    g_base: np.ndarray
    e0: np.ndarray

    def subset(self, idx) -> "GroundTruth":
        return GroundTruth(self.tau[idx], self.g_base[idx], self.e0[idx])


@dataclass(frozen=True)
class Coefficients:
    """Frozen coefficient vectors; outcome ones act on (C, A), propensity on (C, Z)."""

    tau_linear: np.ndarray
    tau_sine: np.ndarray
    base_linear: np.ndarray
    base_quadratic: np.ndarray
    propensity: np.ndarray
    kappa: float = field(default=1.0)

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.tau_linear, self.tau_sine, self.base_linear,
                    self.base_quadratic, self.propensity):
            h.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
        h.update(np.float64(self.kappa).tobytes())
        return h.hexdigest()

    def to_dict(self) -> dict:
        return {
            "tau_linear": self.tau_linear.tolist(),
            "tau_sine": self.tau_sine.tolist(),
            "base_linear": self.base_linear.tolist(),
            "base_quadratic": self.base_quadratic.tolist(),
            "propensity": self.propensity.tolist(),
            "kappa": self.kappa,
            "sha256": self.digest(),
        }


def _random_correlation(d: int, rng: np.random.Generator) -> np.ndarray:
    # random orthogonal basis with spread eigenvalues, rescaled to unit diagonal
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    q = q * np.sign(np.diag(r))
    eig = rng.uniform(0.2, 2.0, size=d)
    cov = (q * eig) @ q.T
    sd = np.sqrt(np.diag(cov))
    return cov / np.outer(sd, sd)


def correlation_matrix(family: str, d: int, seed: int = 0) -> np.ndarray:
    """Correlation matrix of one of the four families.

    ``independent`` is the identity. The others blend an exchangeable matrix
    (off-diagonal rho = 0.2 / 0.5 / 0.8) with a random correlation matrix built
    from a random orthogonal basis, weight ``PERTURBATION_WEIGHT``. A convex
    combination of positive-definite unit-diagonal matrices stays one.
    """
    if d < 1:
        raise ValueError("d must be at least 1")
    if family not in FAMILY_RHO:
        raise ValueError(f"unknown correlation family {family!r}")
    if family == "independent":
        return np.eye(d)
    rho = FAMILY_RHO[family]
    exch = np.full((d, d), rho)
    np.fill_diagonal(exch, 1.0)
    if d == 1:
        return exch
    noise = _random_correlation(d, np.random.default_rng(seed))
    corr = (1.0 - PERTURBATION_WEIGHT) * exch + PERTURBATION_WEIGHT * noise
    corr = 0.5 * (corr + corr.T)
    np.fill_diagonal(corr, 1.0)
    return corr


def _column_blocks(spec: SyntheticSpec) -> dict[str, slice]:
    c, z, i, a = spec.n_confounders, spec.n_instrumental, spec.n_irrelevant, spec.n_adjustment
    return {
        "C": slice(0, c),
        "Z": slice(c, c + z),
        "I": slice(c + z, c + z + i),
        "A": slice(c + z + i, c + z + i + a),
    }


def _draw_coefficients(spec: SyntheticSpec, corr: np.ndarray) -> Coefficients:
    rng = np.random.default_rng(spec.coefficient_seed)
    dim_out = spec.n_confounders + spec.n_adjustment
    dim_prop = spec.n_confounders + spec.n_instrumental

    def draw(dim):
        if dim == 0:
            return np.zeros(0)
        return rng.normal(0.0, 1.0 / np.sqrt(dim), size=dim)

    tau_linear, tau_sine = draw(dim_out), draw(dim_out)
    base_linear, base_quadratic = draw(dim_out), draw(dim_out)
    propensity = draw(dim_prop) * spec.propensity_scale

    blocks = _column_blocks(spec)
    prop_cols = np.r_[blocks["C"], blocks["Z"]]
    score_var = float(propensity @ corr[np.ix_(prop_cols, prop_cols)] @ propensity) if dim_prop else 0.0
    logit_hi = np.log(E0_BOUNDS[1] / (1.0 - E0_BOUNDS[1]))
    kappa = logit_hi / (spec.overlap_z * np.sqrt(score_var)) if score_var > 0 else 1.0
    return Coefficients(tau_linear, tau_sine, base_linear, base_quadratic, propensity, float(kappa))


def coefficients(spec: SyntheticSpec) -> Coefficients:
    corr = correlation_matrix(spec.correlation_family, spec.d, spec.coefficient_seed)
    return _draw_coefficients(spec, corr)


def _logistic(z):
    return 1.0 / (1.0 + np.exp(-z))


def structural_functions(X: np.ndarray, spec: SyntheticSpec, coef: Coefficients):
    """``(tau, g, e0)`` evaluated on covariate rows laid out as ``(C, Z, I, A)``."""
    blocks = _column_blocks(spec)
    v = np.hstack([X[:, blocks["C"]], X[:, blocks["A"]]])
    w = np.hstack([X[:, blocks["C"]], X[:, blocks["Z"]]])
    tau = 1.0 + v @ coef.tau_linear + 0.5 * np.sin(v @ coef.tau_sine)
    g_base = v @ coef.base_linear + 0.3 * (v @ coef.base_quadratic) ** 2
    e0 = np.clip(_logistic(coef.kappa * (w @ coef.propensity)), *E0_BOUNDS)
    return tau, g_base, e0


def generate(spec: SyntheticSpec) -> tuple[Dataset, GroundTruth]:
    """Draw ``spec.n_samples`` units. ``spec.q`` is ignored here (see :func:`amplify_bias`)."""
    corr = correlation_matrix(spec.correlation_family, spec.d, spec.coefficient_seed)
    coef = _draw_coefficients(spec, corr)

    rng = np.random.default_rng(spec.sample_seed)
    n = spec.n_samples
    chol = np.linalg.cholesky(corr)
    X = rng.standard_normal((n, spec.d)) @ chol.T

    tau, g_base, e0 = structural_functions(X, spec, coef)
    t = (rng.uniform(size=n) < e0).astype(np.int64)
    mu0, mu1 = g_base, g_base + tau
    noise_f = rng.normal(0.0, spec.noise_sd, size=n) if spec.noise_sd > 0 else np.zeros(n)
    noise_cf = rng.normal(0.0, spec.noise_sd, size=n) if spec.noise_sd > 0 else np.zeros(n)
    y_f = np.where(t == 1, mu1, mu0) + noise_f
    y_cf = np.where(t == 1, mu0, mu1) + noise_cf

    ds = Dataset(X, t, y_f, y_cf=y_cf, mu0=mu0, mu1=mu1, roles=spec.roles())
    return ds, GroundTruth(tau, g_base, e0)


def metadata(spec: SyntheticSpec) -> dict:
    """JSON-ready description of a generated dataset (spec, seeds, coefficients)."""
    return {
        "spec": spec.to_dict(),
        "column_roles": list(spec.roles()),
        "coefficients": coefficients(spec).to_dict(),
        "functional_forms": {
            "tau": "1 + b_tau.(C,A) + 0.5*sin(b_s.(C,A))",
            "g": "b_g.(C,A) + 0.3*(b_n.(C,A))^2",
            "e0": "clip(logistic(kappa*b_e.(C,Z)), 0.05, 0.95)",
        },
    }


def bias_indices(e0: np.ndarray, q: float, target_n: int, seed: int) -> np.ndarray:
    """Indices chosen by the q-mixture draw; see :func:`amplify_bias`."""
    e0 = np.asarray(e0, dtype=np.float64)
    n = e0.size
    if target_n > n:
        raise ValueError(f"target_n={target_n} exceeds available units n={n}")
    if target_n < 0:
        raise ValueError("target_n must be nonnegative")
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {q}")
    rng = np.random.default_rng(seed)
    biased_draw = rng.uniform(size=target_n) < q
    # a uniform draw from the remaining units is the next untaken entry of a
    # uniformly random permutation
    uniform_order = rng.permutation(n)
    ranked_order = np.argsort(-np.abs(e0 - 0.5), kind="stable")
    taken = np.zeros(n, dtype=bool)
    chosen = np.empty(target_n, dtype=np.int64)
    pos_uniform = pos_ranked = 0
    for k in range(target_n):
        if biased_draw[k]:
            while taken[ranked_order[pos_ranked]]:
                pos_ranked += 1
            idx = ranked_order[pos_ranked]
        else:
            while taken[uniform_order[pos_uniform]]:
                pos_uniform += 1
            idx = uniform_order[pos_uniform]
        taken[idx] = True
        chosen[k] = idx
    return np.sort(chosen)


def amplify_bias(ds: Dataset, gt: GroundTruth, q: float, target_n: int, seed: int) -> Dataset:
    """Subsample ``target_n`` units, favouring extreme propensities.

    Each draw (without replacement) is uniform over the remaining units with
    probability ``1 - q``; otherwise it takes the remaining unit with the largest
    ``|e0 - 0.5|``. ``q = 1`` keeps exactly the most extreme units.
    """
    return ds.subset(bias_indices(gt.e0, q, target_n, seed))
