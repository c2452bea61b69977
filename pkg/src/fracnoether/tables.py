"""Column-oriented CSV output with lossless double formatting."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Mapping

import numpy as np

#: 17 significant digits round-trip any IEEE double.
DEFAULT_DIGITS = 17


def write_table(path: str | Path, columns: Mapping[str, np.ndarray], digits: int = DEFAULT_DIGITS) -> Path:
    """Write equal-length 1-D columns with a header row; returns the path written.

    Values are written in scientific notation with ``digits`` significant digits.
    """
    if not 1 <= digits <= DEFAULT_DIGITS:
        raise ValueError(f"digits must lie in [1, {DEFAULT_DIGITS}], got {digits}")
    fmt = f"%.{digits - 1}e"
    if not columns:
        raise ValueError("no columns to write")
    arrays = [np.asarray(c, dtype=float).ravel() for c in columns.values()]
    n = {a.size for a in arrays}
    if len(n) != 1:
        raise ValueError(f"columns have differing lengths {sorted(n)}")
    path = Path(path)
    with path.open("w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(list(columns))
        for row in np.column_stack(arrays):
            out.writerow([fmt % x for x in row])
    return path
