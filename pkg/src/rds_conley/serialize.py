"""Byte-stable JSON and CSV output with 17 significant digits for floats."""

from __future__ import annotations

import csv
import json
import math
from fractions import Fraction
from pathlib import Path

import numpy as np


def fmt_float(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return "%.17g" % x


def _json_float(x):
    # JSON has no infinities; keep them readable as strings
    if math.isfinite(x):
        return "%.17g" % x
    return json.dumps(fmt_float(x))


def to_json(obj, indent=1, _level=0) -> str:
    """Serialize ``obj`` deterministically; dict keys keep insertion order."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _json_float(float(obj))
    if isinstance(obj, Fraction):
        return json.dumps(f"{obj.numerator}/{obj.denominator}")
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {to_json(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float, str, bool, np.integer, np.floating)) or v is None for v in obj):
            return "[" + ", ".join(to_json(v) for v in obj) + "]"
        items = [pad + to_json(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json(obj, path):
    Path(path).write_text(to_json(obj) + "\n", encoding="utf-8")


def write_csv(path, header, rows):
    """Rows are sequences of ints, floats or strings; floats get 17 digits."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt_float(v) if isinstance(v, (float, np.floating)) else v for v in row])


def write_float_table(path, header, int_cols, float_cols, chunk=65536, prefix="", mode="w"):
    """Fast CSV for large numeric tables: integer columns then float columns.

    ``prefix`` is prepended verbatim to every row; ``header=None`` skips the header.
    """
    int_cols = np.asarray(int_cols, dtype=np.int64).reshape(len(int_cols), -1) if len(int_cols) else None
    float_cols = np.asarray(float_cols, dtype=float)
    n = float_cols.shape[1]
    fmt = ",".join(["%d"] * (0 if int_cols is None else int_cols.shape[0]) + ["%.17g"] * float_cols.shape[0])
    fmt = prefix.replace("%", "%%") + fmt
    with open(path, mode, encoding="utf-8") as fh:
        if header is not None:
            fh.write(",".join(header) + "\n")
        for a in range(0, n, chunk):
            b = min(n, a + chunk)
            parts = [] if int_cols is None else [int_cols[:, a:b].T.astype(object)]
            parts.append(float_cols[:, a:b].T.astype(object))
            block = np.concatenate(parts, axis=1)
            fh.write("\n".join(fmt % tuple(r) for r in block))
            fh.write("\n")
