"""Turning raw behavioural recordings into symbol streams, and symbol-file IO."""

from __future__ import annotations

import csv
import math
import warnings
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np

N_TIMING_BINS = 8


def _number(v) -> Optional[float]:
    try:
        x = float(v)
    except (TypeError, ValueError):
        return None
    return x if math.isfinite(x) else None


def binarize_trajectory(rows: Iterable[Sequence], invert: bool = False) -> np.ndarray:
    """One bit per consecutive pair of ``(x, y)`` points.

    The bit is 1 for a horizontal move (``|dx| >= |dy|``) and 0 otherwise;
    ``invert`` flips the convention.  Rows that do not parse as two numbers
    are skipped with a warning.
    """
    pts = []
    skipped = 0
    for row in rows:
        x = _number(row[0]) if len(row) > 0 else None
        y = _number(row[1]) if len(row) > 1 else None
        if x is None or y is None:
            skipped += 1
            continue
        pts.append((x, y))
    if skipped:
        warnings.warn(f"skipped {skipped} non-numeric rows", RuntimeWarning, stacklevel=2)
    if len(pts) < 2:
        raise ValueError("need at least 2 numeric (x, y) rows")
    arr = np.asarray(pts)
    d = np.abs(np.diff(arr, axis=0))
    bits = (d[:, 0] >= d[:, 1]).astype(np.int64)
    return 1 - bits if invert else bits


def binarize_timings(values: Iterable, binary: bool = False) -> np.ndarray:
    """Min-max normalize and map each value to one of eight equal-width bins.

    Returns bin indices (alphabet of size 8), or three bits per value, most
    significant first, when ``binary`` is set.
    """
    vals = []
    skipped = 0
    for v in values:
        x = _number(v)
        if x is None:
            skipped += 1
        else:
            vals.append(x)
    if skipped:
        warnings.warn(f"skipped {skipped} non-numeric values", RuntimeWarning, stacklevel=2)
    if not vals:
        raise ValueError("need at least 1 numeric value")
    arr = np.asarray(vals)
    lo, hi = arr.min(), arr.max()
    if hi == lo:
        warnings.warn("constant input: every value maps to bin 0", RuntimeWarning, stacklevel=2)
        bins = np.zeros(arr.size, dtype=np.int64)
    else:
        v = (arr - lo) / (hi - lo)
        bins = np.minimum(np.floor(N_TIMING_BINS * v), N_TIMING_BINS - 1).astype(np.int64)
    if binary:
        return ((bins[:, None] >> np.array([2, 1, 0])) & 1).ravel()
    return bins


def read_csv_columns(path, columns: Sequence[str]) -> List[List[str]]:
    """Rows of the named columns from a CSV file with a header."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError(f"{path}: empty file")
        missing = [c for c in columns if c not in reader.fieldnames]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        return [[row[c] for c in columns] for row in reader]


def write_symbol_file(path, symbols) -> None:
    """One integer symbol per line."""
    text = "".join(f"{int(s)}\n" for s in symbols)
    Path(path).write_text(text)


def read_symbol_file(path) -> np.ndarray:
    """Read one symbol per line, or a packed digit string such as ``0110...``."""
    text = Path(path).read_text()
    tokens = text.split()
    if not tokens:
        raise ValueError(f"{path}: no symbols")
    if len(tokens) == 1 and len(tokens[0]) > 1:
        tokens = list(tokens[0])
    try:
        return np.asarray([int(t) for t in tokens], dtype=np.int64)
    except ValueError:
        raise ValueError(f"{path}: symbols must be non-negative integers") from None
