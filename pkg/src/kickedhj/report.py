"""CSV output: 17 significant digits, LF endings, atomic replace."""
from __future__ import annotations

import math
import os
import tempfile
from pathlib import Path

import numpy as np

__all__ = ["format_value", "write_csv", "write_gnuplot"]


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
        return f"{v:.17g}"
    s = str(v)
    if "," in s or "\n" in s:
        raise ValueError(f"unsafe CSV cell {s!r}")
    return s


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, header, rows) -> Path:
    """Write ``rows`` under ``header`` (names with units in brackets)."""
    path = Path(path)
    lines = [",".join(header)]
    for r in rows:
        if len(r) != len(header):
            raise ValueError("row length does not match header")
        lines.append(",".join(format_value(v) for v in r))
    _atomic_write(path, "\n".join(lines) + "\n")
    return path


def write_gnuplot(path, csv_name: str, x_col: int, y_cols, title: str = "", logy: bool = False) -> Path:
    """Minimal gnuplot script plotting columns of a CSV written by :func:`write_csv`."""
    path = Path(path)
    plots = ", ".join(f"'{csv_name}' using {x_col}:{c} with linespoints title columnhead({c})" for c in y_cols)
    lines = [
        "set datafile separator ','",
        "set key autotitle columnhead",
        f"set title '{title}'",
    ]
    if logy:
        lines.append("set logscale y")
    lines.append(f"plot {plots}")
    _atomic_write(path, "\n".join(lines) + "\n")
    return path
