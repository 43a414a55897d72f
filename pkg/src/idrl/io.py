"""CSV dataset interchange.

Header: ``t,y_f[,y_cf][,mu0][,mu1][,e],x1..xd``. Columns are matched by name;
every column whose name starts with ``x`` becomes a covariate, in header
order. An optional JSON sidecar ``<file>.json`` may carry ``column_roles``.
"""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

import numpy as np

from .data import Dataset
from .errors import ParseError, SchemaError

log = logging.getLogger(__name__)

REQUIRED = ("t", "y_f")
OPTIONAL = {"y_cf": "y_cf", "mu0": "mu0", "mu1": "mu1", "e": "e_flag"}


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def load_csv(path, schema_hint: dict[str, str] | None = None) -> Dataset:
    """Read a dataset CSV.

    ``schema_hint`` renames source columns to canonical ones, e.g.
    ``{"treatment": "t", "y_factual": "y_f"}``.
    """
    path = Path(path)
    rename = schema_hint or {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row missing") from None
        header = [rename.get(h.strip(), h.strip()) for h in header]
        for col in REQUIRED:
            if col not in header:
                raise SchemaError(f"{path}: missing required column {col!r}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}: row {lineno} has {len(row)} cells, header has {len(header)}")
            values = []
            for col, cell in zip(header, row):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise ParseError(
                        f"{path}: row {lineno}, column {col!r}: cannot parse {cell!r} as a number"
                    ) from None
            rows.append(values)

    data = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    col = {name: i for i, name in enumerate(header)}
    x_cols = [i for i, name in enumerate(header) if name.startswith("x")]
    ignored = [h for h in header if h not in col or (h not in REQUIRED and h not in OPTIONAL
                                                      and not h.startswith("x"))]
    if ignored:
        log.warning("%s: ignoring columns %s", path, ignored)
    kw = {field: data[:, col[name]] for name, field in OPTIONAL.items() if name in col}
    roles = None
    side = sidecar_path(path)
    if side.exists():
        meta = json.loads(side.read_text(encoding="utf-8"))
        roles = meta.get("column_roles")
        if roles is not None and len(roles) != len(x_cols):
            log.warning("%s: sidecar lists %d roles for %d covariates; ignoring roles",
                        side, len(roles), len(x_cols))
            roles = None
    return Dataset(
        X=data[:, x_cols],
        t=data[:, col["t"]],
        y_f=data[:, col["y_f"]],
        roles=tuple(roles) if roles else None,
        **kw,
    )


def write_csv(ds: Dataset, path, metadata: dict | None = None) -> None:
    """Write ``ds`` in the CSV schema; ``metadata`` (plus roles) goes to the sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = ["t", "y_f"]
    cols = [ds.t.astype(np.float64), ds.y_f]
    for name, field in OPTIONAL.items():
        value = getattr(ds, field)
        if value is not None:
            names.append(name)
            cols.append(value)
    names += [f"x{j + 1}" for j in range(ds.d)]
    table = np.column_stack(cols + [ds.X]) if ds.n else np.zeros((0, len(names)))
    int_cols = {"t", "e"}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        for row in table:
            # repr() of a float round-trips exactly
            writer.writerow([str(int(v)) if n in int_cols else repr(float(v))
                             for n, v in zip(names, row)])
    if metadata is not None or ds.roles is not None:
        meta = dict(metadata or {})
        if ds.roles is not None:
            meta.setdefault("column_roles", list(ds.roles))
        sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")
