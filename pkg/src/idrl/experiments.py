"""Config-driven experiment runs: benchmark, ablation, bias sweep and grid.

Every replication ``r`` uses ``seed = seed_base + r`` for the data draw, the
split, the bias subsample and model initialisation, so each emitted file (which
embeds the resolved config) is enough to rerun it exactly.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import metrics
from .data import Dataset, SplitSpec, concat, split
from .errors import ConfigurationError
from .io import load_csv
from .model import IdrlConfig, fit
from .synthetic import FAMILIES, SyntheticSpec, amplify_bias, generate

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
METRIC_NAMES = ("sqrt_pehe", "eps_ate", "r_pol", "eps_att", "factual_rmse")
VARIANTS = {
    "idrl": {},
    "idrl_wo_mi_s": {"disable_mi_s": True},
    "idrl_wo_mi_h": {"disable_mi_h": True},
    "tarnet_equiv": {"disable_mi_s": True, "disable_mi_h": True},
}


@dataclass
class ExperimentConfig:
    """Resolved experiment settings (the JSON config file maps onto this)."""

    synthetic: dict | None = None
    csv: str | None = None
    schema_hint: dict | None = None
    model: dict = field(default_factory=dict)
    split: dict = field(default_factory=dict)
    replications: int = 10
    seed_base: int = 0
    baselines: list[str] = field(default_factory=lambda: ["tarnet_equiv", "knn"])
    knn_k: int = 5
    metrics: list[str] = field(default_factory=lambda: list(METRIC_NAMES))
    out: str = "results"

    def __post_init__(self):
        if (self.synthetic is None) == (self.csv is None):
            raise ConfigurationError("exactly one of 'synthetic' or 'csv' must be given")
        if self.replications < 1:
            raise ConfigurationError("replications must be at least 1")
        unknown = set(self.baselines) - {"knn"} - set(VARIANTS)
        if unknown:
            raise ConfigurationError(f"unknown baselines {sorted(unknown)}")
        bad = set(self.metrics) - set(METRIC_NAMES)
        if bad:
            raise ConfigurationError(f"unknown metrics {sorted(bad)}")
        # validate eagerly so errors surface before any training
        self.model_config()
        self.split_spec(0)
        if self.synthetic is not None:
            self.synthetic_spec(0)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        source = d.pop("dataset", None)
        if source is not None:
            d.update(source)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model_config().to_dict()
        d["split"] = {k: v for k, v in asdict(self.split_spec(0)).items() if k != "seed"}
        if self.synthetic is not None:
            syn = self.synthetic_spec(0).to_dict()
            syn.pop("sample_seed")
            syn["pool_size"] = self.synthetic.get("pool_size")
            d["synthetic"] = syn
        return d

    def model_config(self, seed: int | None = None, **overrides) -> IdrlConfig:
        kw = dict(self.model)
        kw.update(overrides)
        if seed is not None:
            kw["seed"] = seed
        return IdrlConfig.from_dict(kw)

    def split_spec(self, seed: int) -> SplitSpec:
        return SplitSpec(**{**self.split, "seed": seed})

    def synthetic_spec(self, seed: int) -> SyntheticSpec:
        kw = {k: v for k, v in (self.synthetic or {}).items() if k != "pool_size"}
        kw["sample_seed"] = seed
        return SyntheticSpec(**kw)

    def with_synthetic(self, **changes) -> "ExperimentConfig":
        if self.synthetic is None:
            raise ConfigurationError("this experiment needs a synthetic data source")
        return replace(self, synthetic={**self.synthetic, **changes})


def load_dataset(cfg: ExperimentConfig, seed: int) -> Dataset:
    """The replication's full dataset (before splitting)."""
    if cfg.csv is not None:
        return load_csv(cfg.csv, cfg.schema_hint)
    spec = cfg.synthetic_spec(seed)
    pool_size = cfg.synthetic.get("pool_size")
    if pool_size is None:
        if spec.q > 0:
            raise ConfigurationError("q > 0 needs 'pool_size' to subsample from")
        return generate(spec)[0]
    if pool_size < spec.n_samples:
        raise ConfigurationError("pool_size must be at least n_samples")
    ds, gt = generate(replace(spec, n_samples=pool_size))
    return amplify_bias(ds, gt, spec.q, spec.n_samples, seed)


def _reports(ds_in: Dataset, ds_out: Dataset, predict) -> dict:
    return {
        "in_sample": metrics.evaluate(ds_in, *predict(ds_in.X), "in_sample").to_dict(),
        "out_sample": metrics.evaluate(ds_out, *predict(ds_out.X), "out_sample").to_dict(),
    }


def run_replication(cfg: ExperimentConfig, rep: int, methods: list[str]) -> dict:
    seed = cfg.seed_base + rep
    ds = load_dataset(cfg, seed)
    train, valid, test = split(ds, cfg.split_spec(seed))
    in_sample = concat([train, valid])
    out = {"replication": rep, "seed": seed, "methods": {}}
    for label in methods:
        if label == "knn":
            def predict(X, pool=in_sample):
                return metrics.knn_estimator(pool, X, cfg.knn_k)
            entry = _reports(in_sample, test, predict)
        else:
            model = fit(cfg.model_config(seed, **VARIANTS[label]), train, valid)
            entry = _reports(in_sample, test, model.predict)
            entry["best_epoch"] = model.best_epoch
        out["methods"][label] = entry
    return out


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("IDRL_THREADS", "1")))
    except ValueError:
        return 1


def run_replications(cfg: ExperimentConfig, methods: list[str]) -> list[dict]:
    """All replications, in index order regardless of worker count."""
    reps = range(cfg.replications)
    workers = min(_threads(), cfg.replications)
    if workers == 1:
        return [run_replication(cfg, r, methods) for r in reps]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_replication, [cfg] * len(reps), reps, [methods] * len(reps)))


def aggregate(replications: list[dict], metric_names=METRIC_NAMES) -> dict:
    """Mean of every metric over replications, per method and split."""
    agg: dict = {}
    for label in replications[0]["methods"]:
        agg[label] = {}
        for split_label in ("in_sample", "out_sample"):
            means = {}
            for name in metric_names:
                vals = [r["methods"][label][split_label][name] for r in replications]
                vals = [v for v in vals if v is not None]
                means[name] = float(np.mean(vals)) if vals else None
            agg[label][split_label] = means
    return agg


def _dump_json(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_series(path: Path, header: list[str], rows: list[list], provenance: dict) -> None:
    """CSV with a leading ``# {json}`` provenance line (``pandas.read_csv(comment='#')``)."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("# " + json.dumps(provenance, sort_keys=True) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _provenance(cfg: ExperimentConfig, kind: str, **extra) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": kind,
        "config": cfg.to_dict(),
        "seeds": [cfg.seed_base + r for r in range(cfg.replications)],
        **extra,
    }


def benchmark_methods(cfg: ExperimentConfig) -> list[str]:
    primary = cfg.model_config().label
    return [primary] + [b for b in cfg.baselines if b != primary]


def run_benchmark(cfg: ExperimentConfig, write: bool = True) -> dict:
    """Train the configured model (plus baselines) per replication and aggregate."""
    reps = run_replications(cfg, benchmark_methods(cfg))
    report = _provenance(cfg, "benchmark")
    report["replications"] = reps
    report["aggregate"] = aggregate(reps, cfg.metrics)
    if write:
        _dump_json(report, Path(cfg.out) / "benchmark.json")
    return report


def run_ablation(cfg: ExperimentConfig, include_tarnet: bool = True, write: bool = True) -> dict:
    """Full model vs. each single-term ablation on identical seeds."""
    methods = ["idrl", "idrl_wo_mi_s", "idrl_wo_mi_h"] + (["tarnet_equiv"] if include_tarnet else [])
    reps = run_replications(cfg, methods)
    report = _provenance(cfg, "ablation", methods=methods)
    report["replications"] = reps
    report["aggregate"] = aggregate(reps, cfg.metrics)
    if write:
        out = Path(cfg.out)
        _dump_json(report, out / "ablation.json")
        rows = []
        for label in methods:
            a = report["aggregate"][label]
            rows.append([label, a["out_sample"]["sqrt_pehe"], a["out_sample"]["eps_ate"],
                         a["in_sample"]["sqrt_pehe"], a["in_sample"]["eps_ate"]])
        _write_series(out / "ablation.csv",
                      ["method", "out_sqrt_pehe", "out_eps_ate", "in_sqrt_pehe", "in_eps_ate"],
                      rows, _provenance(cfg, "ablation", methods=methods))
    return report


def run_bias_sweep(cfg: ExperimentConfig, q_values, methods=("idrl", "tarnet_equiv"),
                   write: bool = True) -> dict:
    """Out-of-sample metrics versus the selection-bias level ``q``."""
    q_values = [float(q) for q in q_values]
    if any(not 0.0 <= q <= 1.0 for q in q_values):
        raise ConfigurationError(f"q values must lie in [0, 1], got {q_values}")
    if cfg.synthetic is None:
        raise ConfigurationError("the bias sweep needs a synthetic data source")
    if cfg.synthetic.get("pool_size") is None:
        n = cfg.synthetic_spec(0).n_samples
        cfg = cfg.with_synthetic(pool_size=3 * n)
    methods = list(methods)
    rows, runs = [], {}
    for q in q_values:
        reps = run_replications(cfg.with_synthetic(q=q), methods)
        runs[repr(q)] = reps
        for label in methods:
            for r in reps:
                m = r["methods"][label]["out_sample"]
                rows.append([q, label, m["sqrt_pehe"], m["eps_ate"], r["replication"]])
    prov = _provenance(cfg, "bias_sweep", q_values=q_values, methods=methods)
    result = {**prov, "rows": rows, "runs": runs}
    if write:
        _write_series(Path(cfg.out) / "bias_sweep.csv",
                      ["q", "method", "sqrt_pehe", "eps_ate", "replication"], rows, prov)
    return result


def run_grid(cfg: ExperimentConfig, correlation_families=FAMILIES, instrumental_counts=(10,),
             irrelevant_counts=(20,), methods=("idrl", "tarnet_equiv"), write: bool = True) -> dict:
    """Full-factorial runs over correlation family x instrumental x irrelevant counts."""
    axes = (list(correlation_families), [int(c) for c in instrumental_counts],
            [int(c) for c in irrelevant_counts])
    if not all(axes):
        raise ConfigurationError("every grid axis needs at least one value")
    if cfg.synthetic is None:
        raise ConfigurationError("the grid needs a synthetic data source")
    methods = list(methods)
    header = ["family", "n_instrumental", "n_irrelevant", "replication", "seed"]
    for label in methods:
        header += [f"{label}_sqrt_pehe", f"{label}_eps_ate"]
    rows = []
    for fam in axes[0]:
        for n_z in axes[1]:
            for n_i in axes[2]:
                cell = cfg.with_synthetic(correlation_family=fam, n_instrumental=n_z, n_irrelevant=n_i)
                for r in run_replications(cell, methods):
                    row = [fam, n_z, n_i, r["replication"], r["seed"]]
                    for label in methods:
                        m = r["methods"][label]["out_sample"]
                        row += [m["sqrt_pehe"], m["eps_ate"]]
                    rows.append(row)
    prov = _provenance(cfg, "grid", correlation_families=axes[0], instrumental_counts=axes[1],
                       irrelevant_counts=axes[2], methods=methods)
    result = {**prov, "header": header, "rows": rows}
    if write:
        _write_series(Path(cfg.out) / "grid.csv", header, rows, prov)
    return result


def grid_means(result: dict, method: str) -> dict[tuple, float]:
    """Mean sqrt-PEHE per grid cell for one method."""
    col = result["header"].index(f"{method}_sqrt_pehe")
    cells: dict[tuple, list[float]] = {}
    for row in result["rows"]:
        cells.setdefault((row[0], row[1], row[2]), []).append(row[col])
    return {k: float(np.mean(v)) for k, v in cells.items()}
