"""Curve CSV files: first row holds the grid abscissae, each later row one subject."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import DataError
from ..hilbert import Dataset, Grid, center, clip_to_unit_ball


@dataclass(frozen=True, eq=False)
class CurveTable:
    """Parsed curve CSV.

    ``abscissae`` are the header values as written (or 0..1 when the file has
    no header); ``header_present`` records which.
    """

    abscissae: np.ndarray
    values: np.ndarray
    path: str
    header_present: bool = True

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def grid(self) -> Grid:
        """Trapezoid grid on the abscissae mapped affinely onto [0, 1]."""
        t = self.abscissae
        return Grid.from_points((t - t[0]) / (t[-1] - t[0]))

    def to_dataset(self, clip: str | None = "per_record", centered: bool = False) -> Dataset:
        d = Dataset(self.grid(), self.values)
        if centered:
            d = center(d)
        if clip is not None:
            d = clip_to_unit_ball(d, mode=clip)
        return d


def _parse_row(cells, lineno, path):
    out = []
    for col, cell in enumerate(cells, start=1):
        text = cell.strip()
        try:
            value = float(text)
        except ValueError:
            raise DataError(f"{path}: row {lineno}, column {col}: non-numeric cell {cell!r}") from None
        if not math.isfinite(value):
            raise DataError(f"{path}: row {lineno}, column {col}: non-finite cell {cell!r}")
        out.append(value)
    return out


def load_curves_csv(path, header: bool = True) -> CurveTable:
    """Read a rectangular numeric curve CSV (rows are subjects)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [(i, r) for i, r in enumerate(csv.reader(fh), start=1) if any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: file is empty")
    width = len(rows[0][1])
    for lineno, r in rows:
        if len(r) != width:
            raise DataError(f"{path}: row {lineno} has {len(r)} cells, expected {width}")
    parsed = [_parse_row(r, lineno, path) for lineno, r in rows]
    if header:
        t = np.array(parsed[0])
        body = parsed[1:]
        if np.any(np.diff(t) <= 0):
            j = int(np.argmax(np.diff(t) <= 0)) + 2
            raise DataError(f"{path}: header grid is not strictly increasing at column {j}")
    else:
        t = np.linspace(0.0, 1.0, width)
        body = parsed
    if not body:
        raise DataError(f"{path}: no data rows")
    if width < 2:
        raise DataError(f"{path}: at least two grid points are required")
    return CurveTable(t, np.array(body), str(path), header)


def write_curves_csv(path, abscissae, values) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([repr(float(t)) for t in abscissae])
        for row in np.atleast_2d(values):
            w.writerow([repr(float(v)) for v in row])
