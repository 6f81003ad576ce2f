"""CSV, plot-data and metadata output."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Sequence

import numpy as np


class OutputError(OSError):
    pass


def format_value(v) -> str:
    """Decimal text with 17 significant digits for floats; ints and bools as integers."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    x = float(v)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def emit_csv(columns: Sequence[str], rows: Sequence[Sequence], path) -> Path:
    """UTF-8 CSV with a header row; rows are written in the given order."""
    p = Path(path)
    try:
        if p.parent and not p.parent.exists():
            p.parent.mkdir(parents=True, exist_ok=True)
        with p.open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for r in rows:
                if len(r) != len(columns):
                    raise ValueError(f"row has {len(r)} values for {len(columns)} columns")
                w.writerow([format_value(v) for v in r])
    except OSError as exc:
        raise OutputError(f"cannot write {p}: {exc}") from exc
    return p


def read_csv(path) -> tuple[list[str], list[list[float]]]:
    """Read back a file written by :func:`emit_csv`; values parsed as floats."""
    p = Path(path)
    try:
        with p.open(encoding="utf-8", newline="") as fh:
            r = csv.reader(fh)
            header = next(r, [])
            rows = [[float(x) for x in row] for row in r]
    except OSError as exc:
        raise OutputError(f"cannot read {p}: {exc}") from exc
    return header, rows


def emit_plot_data(curves: dict[str, tuple[Sequence[float], Sequence[float]]], path) -> Path:
    """Long-format ``curve,x,y`` table for external plotting tools."""
    rows = [[name, x, y] for name, (xs, ys) in curves.items() for x, y in zip(xs, ys)]
    return emit_csv(["curve", "x", "y"], rows, path)


def emit_metadata(meta: dict, path) -> Path:
    p = Path(path)
    try:
        p.write_text(json.dumps(meta, indent=2, sort_keys=True, default=_json_default) + "\n",
                     encoding="utf-8")
    except OSError as exc:
        raise OutputError(f"cannot write {p}: {exc}") from exc
    return p


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not serializable: {type(o).__name__}")


def sidecar(path, suffix: str) -> Path:
    """``out.csv`` -> ``out.<suffix>``, e.g. ``out.plot.csv`` or ``out.meta.json``."""
    p = Path(path)
    return p.with_name(p.stem + "." + suffix)
