"""CSV tables with JSON metadata lines, written byte-for-byte reproducibly.

Format: UTF-8, ``,`` delimiter, ``.`` decimal point, ``\\n`` line ends.
Leading lines starting with ``# `` hold one JSON object each (metadata),
then one header row, then data rows. Floats use ``repr`` (shortest
round-trip form), so a value read back is bit-identical.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .errors import InputError
from .geometry import Dataset

__all__ = ["format_value", "write_table", "read_table", "write_json", "read_points",
           "write_points"]


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if v is None:
        return ""
    return str(v)


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not serialisable: {type(o).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, default=_json_default, allow_nan=True)


def write_table(path, header, rows, meta=None):
    lines = []
    if meta is not None:
        lines.append("# " + dumps(meta))
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(format_value(v) for v in row))
    text = "\n".join(lines) + "\n"
    try:
        Path(path).write_text(text, encoding="utf-8", newline="\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


def write_json(path, obj):
    try:
        Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2,
                                         default=_json_default) + "\n",
                              encoding="utf-8", newline="\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


def _numeric(fields):
    try:
        [float(f) for f in fields]
    except ValueError:
        return False
    return True


def read_table(path):
    """Returns (meta list, header, float array of shape (rows, columns))."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc
    meta, header, rows = [], None, []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if header is None and body.startswith("{"):
                try:
                    meta.append(json.loads(body))
                except json.JSONDecodeError as exc:
                    raise InputError(f"{path}:{lineno}: bad metadata JSON ({exc.msg})") from exc
            continue
        fields = [f.strip() for f in line.split(",")]
        if header is None:
            if _numeric(fields):
                # no header row: plain coordinate columns
                header = [f"x_{k + 1}" for k in range(len(fields))]
            else:
                header = fields
                continue
        if len(fields) != len(header):
            raise InputError(f"{path}:{lineno}: expected {len(header)} fields, got {len(fields)}")
        try:
            rows.append([float(f) if f else math.nan for f in fields])
        except ValueError as exc:
            raise InputError(f"{path}:{lineno}: non-numeric field") from exc
    if header is None:
        raise InputError(f"{path}: no header row")
    arr = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    return meta, header, arr


def read_points(path, weight_column: bool = False):
    """Dataset (+ internal distortions, + labels or None) from a points CSV.

    Coordinates are the ``x_1 .. x_d`` columns; ``weight``,
    ``internal_distortion`` and ``label`` are optional. Without a header
    row every column is a coordinate, except the last one when
    ``weight_column`` is set.
    """
    meta, header, arr = read_table(path)
    if weight_column and "weight" not in header:
        if len(header) < 2:
            raise InputError(f"{path}: a weight column needs at least two columns")
        header = list(header)
        header[-1] = "weight"
    xcols = [i for i, h in enumerate(header) if h.startswith("x_")]
    if not xcols:
        raise InputError(f"{path}: no x_1 .. x_d columns")
    if arr.shape[0] == 0:
        raise InputError(f"{path}: no data rows")
    col = {h: i for i, h in enumerate(header)}
    w = arr[:, col["weight"]] if "weight" in col else None
    delta = arr[:, col["internal_distortion"]] if "internal_distortion" in col else None
    labels = arr[:, col["label"]].astype(np.int64) if "label" in col else None
    return Dataset(arr[:, xcols], w), delta, labels, meta


def write_points(path, points, labels=None, weights=None, internal_distortion=None,
                 meta=None):
    pts = np.asarray(points)
    header = [f"x_{k + 1}" for k in range(pts.shape[1])]
    cols = [pts[:, k] for k in range(pts.shape[1])]
    for name, extra in (("weight", weights), ("internal_distortion", internal_distortion),
                        ("label", labels)):
        if extra is not None:
            header.append(name)
            cols.append(np.asarray(extra))
    rows = zip(*[c.tolist() for c in cols])
    write_table(path, header, rows, meta)
