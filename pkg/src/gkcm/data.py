"""Dataset container, CSV ingestion and column standardization."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .exceptions import ConfigError, DegenerateDataError, DimensionError, ParseError, SelectorError

Selector = Union[str, int, Sequence[Union[str, int]]]


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise DimensionError(f"expected a 1-D or 2-D array, got shape {a.shape}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Row-aligned samples of X (n x p), Y (n x q) and Z (n x d).

    Arrays are copied on construction and made read-only.
    """

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    x_names: tuple = field(default=())
    y_names: tuple = field(default=())
    z_names: tuple = field(default=())

    def __post_init__(self):
        x, y, z = _frozen(self.x), _frozen(self.y), _frozen(self.z)
        n = x.shape[0]
        if y.shape[0] != n or z.shape[0] != n:
            raise DimensionError(
                f"row counts differ: x has {n}, y has {y.shape[0]}, z has {z.shape[0]}"
            )
        if n < 2:
            raise DimensionError(f"a dataset needs at least 2 rows, got {n}")
        for name, a in (("x", x), ("y", y), ("z", z)):
            if not np.all(np.isfinite(a)):
                raise ParseError(f"{name} contains non-finite values")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)
        for attr, prefix, a in (("x_names", "x", x), ("y_names", "y", y), ("z_names", "z", z)):
            names = tuple(getattr(self, attr)) or tuple(f"{prefix}{j + 1}" for j in range(a.shape[1]))
            if len(names) != a.shape[1]:
                raise DimensionError(f"{attr} has {len(names)} labels for {a.shape[1]} columns")
            object.__setattr__(self, attr, names)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def q(self) -> int:
        return self.y.shape[1]

    @property
    def d(self) -> int:
        return self.z.shape[1]


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def parse_selector(selector: Selector, header: Sequence[str] | None, ncols: int) -> list[int]:
    """Resolve a column selector to 0-based column indices.

    A selector is a column name, an integer index, a ``"start:stop"`` range
    (half-open, Python semantics), or a comma-separated string / sequence of
    those. Names take precedence over numeric interpretation.
    """
    if isinstance(selector, (int, np.integer)):
        tokens = [int(selector)]
    elif isinstance(selector, str):
        tokens = [t.strip() for t in selector.split(",") if t.strip()]
    else:
        tokens = list(selector)
    if not tokens:
        raise SelectorError("empty column selector")

    names = list(header) if header is not None else []
    out: list[int] = []
    for tok in tokens:
        if isinstance(tok, (int, np.integer)):
            idx = [int(tok)]
        elif tok in names:
            idx = [names.index(tok)]
        elif ":" in tok:
            lo, _, hi = tok.partition(":")
            try:
                start = int(lo) if lo else 0
                stop = int(hi) if hi else ncols
            except ValueError:
                raise SelectorError(f"unknown column {tok!r}") from None
            idx = list(range(start, stop))
            if not idx:
                raise SelectorError(f"range {tok!r} selects no columns")
        else:
            try:
                idx = [int(tok)]
            except ValueError:
                raise SelectorError(f"unknown column {tok!r}") from None
        for i in idx:
            if not 0 <= i < ncols:
                raise SelectorError(f"column index {i} out of range for {ncols} columns")
        out.extend(idx)
    if len(set(out)) != len(out):
        raise SelectorError(f"selector {selector!r} repeats a column")
    return out


def load_csv(path, x_cols: Selector, y_cols: Selector, z_cols: Selector) -> Dataset:
    """Read a comma-separated file into a :class:`Dataset`.

    The first row is treated as a header when any of its cells is not a
    number. Rows keep file order. Row numbers in error messages are 1-based
    file lines.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ParseError(f"{path}: empty file")

    header = None
    first_line = 1
    if not all(_is_number(c) for c in rows[0]):
        header = [c.strip() for c in rows[0]]
        rows = rows[1:]
        first_line = 2
    ncols = len(header) if header is not None else len(rows[0]) if rows else 0

    xi = parse_selector(x_cols, header, ncols)
    yi = parse_selector(y_cols, header, ncols)
    zi = parse_selector(z_cols, header, ncols)
    overlap = (set(xi) & set(yi)) | (set(xi) & set(zi)) | (set(yi) & set(zi))
    if overlap:
        raise ConfigError(f"column selectors overlap on columns {sorted(overlap)}")

    label = (lambda j: header[j]) if header is not None else str
    wanted = xi + yi + zi
    values = np.empty((len(rows), len(wanted)))
    for r, row in enumerate(rows):
        line = first_line + r
        if len(row) != ncols:
            raise ParseError(f"{path}: row {line} has {len(row)} cells, expected {ncols}", row=line)
        for c, j in enumerate(wanted):
            cell = row[j].strip()
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(
                    f"{path}: row {line}, column {label(j)!r}: cannot parse {cell!r} as a number",
                    row=line, column=label(j),
                ) from None
            if not math.isfinite(v):
                raise ParseError(
                    f"{path}: row {line}, column {label(j)!r}: non-finite value {cell!r}",
                    row=line, column=label(j),
                )
            values[r, c] = v

    p, q = len(xi), len(yi)
    names = [label(j) for j in wanted]
    return Dataset(
        x=values[:, :p], y=values[:, p:p + q], z=values[:, p + q:],
        x_names=tuple(names[:p]), y_names=tuple(names[p:p + q]), z_names=tuple(names[p + q:]),
    )


def save_csv(data: Dataset, path) -> None:
    """Write a dataset with a header row; floats use shortest round-trip repr."""
    header = list(data.x_names) + list(data.y_names) + list(data.z_names)
    block = np.hstack([data.x, data.y, data.z])
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in block:
            w.writerow([repr(float(v)) for v in row])


def standardize(m) -> np.ndarray:
    """Center each column and scale it to unit sample standard deviation (ddof=1)."""
    a = np.asarray(m, dtype=np.float64)
    squeeze = a.ndim == 1
    a = a.reshape(a.shape[0], -1)
    if a.shape[0] < 2:
        raise DegenerateDataError("standardize needs at least 2 rows")
    mu = a.mean(axis=0)
    sd = a.std(axis=0, ddof=1)
    for j, s in enumerate(sd):
        if not s > 0:
            raise DegenerateDataError(f"column {j} has zero variance")
    out = (a - mu) / sd
    return out.ravel() if squeeze else out
