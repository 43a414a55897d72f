"""Command-line entry point: ``idrl <command> --config cfg.json [--seed N] [--out DIR]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import experiments, io, synthetic
from .data import split
from .experiments import ExperimentConfig
from .model import fit

log = logging.getLogger("idrl")


def _load(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else None
    if cfg is None:
        cfg = ExperimentConfig(synthetic={})
    if args.seed is not None:
        cfg = replace(cfg, seed_base=args.seed)
    if args.out is not None:
        cfg = replace(cfg, out=args.out)
    return cfg


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def cmd_generate(cfg: ExperimentConfig, args) -> None:
    if cfg.synthetic is None:
        raise SystemExit("generate needs a synthetic data source in the config")
    ds = experiments.load_dataset(cfg, cfg.seed_base)
    path = Path(cfg.out) / "dataset.csv"
    meta = synthetic.metadata(cfg.synthetic_spec(cfg.seed_base))
    meta["pool_size"] = cfg.synthetic.get("pool_size")
    io.write_csv(ds, path, meta)
    print(path)


def cmd_train(cfg: ExperimentConfig, args) -> None:
    seed = cfg.seed_base
    ds = experiments.load_dataset(cfg, seed)
    train, valid, _ = split(ds, cfg.split_spec(seed))
    model = fit(cfg.model_config(seed), train, valid)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    model.save(out / "model.json")
    experiments._dump_json({"config": cfg.to_dict(), "seed": seed, "log": model.log},
                           out / "train_log.json")
    print(out / "model.json")


def cmd_evaluate(cfg: ExperimentConfig, args) -> None:
    report = experiments.run_benchmark(cfg)
    _print_aggregate(report["aggregate"])


def cmd_ablate(cfg: ExperimentConfig, args) -> None:
    report = experiments.run_ablation(cfg, include_tarnet=not args.no_tarnet)
    _print_aggregate(report["aggregate"])


def cmd_sweep_q(cfg: ExperimentConfig, args) -> None:
    result = experiments.run_bias_sweep(cfg, _floats(args.q))
    print(Path(cfg.out) / "bias_sweep.csv", f"({len(result['rows'])} rows)")


def cmd_grid(cfg: ExperimentConfig, args) -> None:
    result = experiments.run_grid(cfg, args.families.split(","), _ints(args.instrumental),
                                  _ints(args.irrelevant))
    print(Path(cfg.out) / "grid.csv", f"({len(result['rows'])} rows)")


def _print_aggregate(agg: dict) -> None:
    for label, splits in agg.items():
        for split_label, values in splits.items():
            shown = ", ".join(f"{k}={v:.4f}" for k, v in values.items() if v is not None)
            print(f"{label:14s} {split_label:10s} {shown}")


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "sweep-q": cmd_sweep_q,
    "grid": cmd_grid,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="idrl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="experiment config (JSON)")
        p.add_argument("--seed", type=int, help="overrides seed_base")
        p.add_argument("--out", help="output directory (overrides config 'out')")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "ablate":
            p.add_argument("--no-tarnet", action="store_true", help="omit the tarnet_equiv row")
        if name == "sweep-q":
            p.add_argument("--q", default="0,0.25,0.5,0.75,1", help="comma-separated q values")
        if name == "grid":
            p.add_argument("--families", default=",".join(synthetic.FAMILIES))
            p.add_argument("--instrumental", default="10,20")
            p.add_argument("--irrelevant", default="20,40")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load(args)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"idrl: bad config: {exc}", file=sys.stderr)
        return 2
    COMMANDS[args.command](cfg, args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
