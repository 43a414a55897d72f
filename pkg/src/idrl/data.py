"""Dataset container, stratified splitting and column standardisation."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

ROLES = ("confounder", "instrumental", "adjustment", "irrelevant")
_VECTOR_FIELDS = ("y_cf", "mu0", "mu1", "e_flag")


@dataclass(frozen=True)
class Dataset:
    """Observational data ``{x_i, t_i, y_i}`` plus whatever ground truth is known.

    ``mu0``/``mu1`` are noiseless potential-outcome means (synthetic or
    semi-synthetic data); ``e_flag`` marks membership in a randomized subset,
    as in the Jobs data.
    """

    X: np.ndarray
    t: np.ndarray
    y_f: np.ndarray
    y_cf: np.ndarray | None = None
    mu0: np.ndarray | None = None
    mu1: np.ndarray | None = None
    e_flag: np.ndarray | None = None
    roles: tuple[str, ...] | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError(f"X must be 2-D, got shape {X.shape}")
        n = X.shape[0]
        t = np.asarray(self.t)
        if t.shape != (n,):
            raise ValueError(f"t has shape {t.shape}, expected ({n},)")
        if not np.all((t == 0) | (t == 1)):
            raise ValueError("t must contain only 0 and 1")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "t", t.astype(np.int64))
        object.__setattr__(self, "y_f", self._vec(self.y_f, "y_f", n))
        for name in _VECTOR_FIELDS:
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, self._vec(value, name, n))
        if self.e_flag is not None and not np.all((self.e_flag == 0) | (self.e_flag == 1)):
            raise ValueError("e_flag must contain only 0 and 1")
        if self.roles is not None:
            roles = tuple(self.roles)
            if len(roles) != X.shape[1]:
                raise ValueError(f"{len(roles)} roles for {X.shape[1]} columns")
            bad = set(roles) - set(ROLES)
            if bad:
                raise ValueError(f"unknown roles {sorted(bad)}")
            object.__setattr__(self, "roles", roles)

    @staticmethod
    def _vec(value, name: str, n: int) -> np.ndarray:
        arr = np.asarray(value, dtype=np.float64)
        if arr.shape != (n,):
            raise ValueError(f"{name} has shape {arr.shape}, expected ({n},)")
        return arr

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def n_treated(self) -> int:
        return int(self.t.sum())

    @property
    def n_control(self) -> int:
        return self.n - self.n_treated

    @property
    def has_ite(self) -> bool:
        return self.mu0 is not None and self.mu1 is not None

    def true_ite(self) -> np.ndarray:
        if self.mu0 is None or self.mu1 is None:
            raise ValueError("dataset carries no mu0/mu1")
        return self.mu1 - self.mu0

    def require_both_arms(self) -> None:
        if self.n_treated == 0 or self.n_control == 0:
            raise ValueError(
                f"both treatment arms must be nonempty (treated={self.n_treated}, "
                f"control={self.n_control})"
            )

    def subset(self, idx: np.ndarray) -> "Dataset":
        idx = np.asarray(idx)
        kw = {name: (None if getattr(self, name) is None else getattr(self, name)[idx])
              for name in _VECTOR_FIELDS}
        return Dataset(self.X[idx], self.t[idx], self.y_f[idx], roles=self.roles, **kw)

    def with_X(self, X: np.ndarray) -> "Dataset":
        return replace(self, X=X)


def concat(datasets: list[Dataset]) -> Dataset:
    """Stack datasets row-wise; optional fields survive only if all parts have them."""
    if not datasets:
        raise ValueError("nothing to concatenate")
    kw = {}
    for name in _VECTOR_FIELDS:
        parts = [getattr(ds, name) for ds in datasets]
        kw[name] = None if any(p is None for p in parts) else np.concatenate(parts)
    return Dataset(
        np.vstack([ds.X for ds in datasets]),
        np.concatenate([ds.t for ds in datasets]),
        np.concatenate([ds.y_f for ds in datasets]),
        roles=datasets[0].roles,
        **kw,
    )


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.63
    valid: float = 0.27
    test: float = 0.10
    seed: int = 0

    def __post_init__(self):
        fr = (self.train, self.valid, self.test)
        if any(f <= 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must be positive and sum to 1, got {fr}")

    @property
    def fractions(self) -> tuple[float, float, float]:
        return (self.train, self.valid, self.test)


def _largest_remainder(total: int, weights) -> np.ndarray:
    """Integer apportionment of ``total`` proportional to ``weights``."""
    w = np.asarray(weights, dtype=np.float64)
    raw = total * w / w.sum()
    counts = np.floor(raw).astype(np.int64)
    short = total - counts.sum()
    # ties broken by position, which keeps this deterministic
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


def split_indices(t: np.ndarray, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    t = np.asarray(t)
    n = t.size
    if n < 10:
        raise ValueError(f"need at least 10 units to split, got {n}")
    sizes = _largest_remainder(n, spec.fractions)
    n_t = int(t.sum())
    treated_per_split = _largest_remainder(n_t, sizes) if n_t else np.zeros(3, np.int64)
    control_per_split = sizes - treated_per_split
    for k, name in enumerate(("train", "valid", "test")):
        if treated_per_split[k] == 0 or control_per_split[k] == 0:
            raise ValueError(
                f"{name} split would have an empty treatment arm "
                f"(treated={treated_per_split[k]}, control={control_per_split[k]})"
            )
    rng = np.random.default_rng(spec.seed)
    treated = rng.permutation(np.flatnonzero(t == 1))
    control = rng.permutation(np.flatnonzero(t == 0))
    t_cuts = np.cumsum(treated_per_split)[:-1]
    c_cuts = np.cumsum(control_per_split)[:-1]
    parts = [
        np.sort(np.concatenate([a, b]))
        for a, b in zip(np.split(treated, t_cuts), np.split(control, c_cuts))
    ]
    return parts[0], parts[1], parts[2]


def split(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Stratified train/valid/test partition; deterministic given ``spec.seed``."""
    tr, va, te = split_indices(ds.t, spec)
    return ds.subset(tr), ds.subset(va), ds.subset(te)


@dataclass
class Scaler:
    """Per-column affine map ``(x - mean) / scale``."""

    mean: np.ndarray
    scale: np.ndarray = field(repr=False)

    @classmethod
    def fit(cls, X: np.ndarray) -> "Scaler":
        X = np.asarray(X, dtype=np.float64)
        if X.shape[0] == 0:
            raise ValueError("cannot fit a scaler on zero rows")
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        const = std == 0
        # constant columns pass through untouched
        mean = np.where(const, 0.0, mean)
        scale = np.where(const, 1.0, std)
        return cls(mean, scale)

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.scale

    def inverse_transform(self, Z: np.ndarray) -> np.ndarray:
        return np.asarray(Z, dtype=np.float64) * self.scale + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["scale"], dtype=np.float64))


def standardize(train: Dataset, others: list[Dataset] = ()) -> tuple[Scaler, Dataset, list[Dataset]]:
    scaler = Scaler.fit(train.X)
    return (
        scaler,
        train.with_X(scaler.transform(train.X)),
        [ds.with_X(scaler.transform(ds.X)) for ds in others],
    )
