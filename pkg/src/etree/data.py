"""Coordinate-format datasets, transforms and deterministic splits.

Random streams use numpy's ``Generator`` over PCG64 (O'Neill, 2014), which
is portable across platforms for a fixed seed.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, DataError

FORMATS = ("matrix-market", "csv-triplet", "movielens")


def rng_for(seed, *stream) -> np.random.Generator:
    """Seeded PCG64 generator; ``stream`` spawns independent sub-streams."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=tuple(stream))))


@dataclass(frozen=True, eq=False)
class ObservedMatrix:
    """Partially observed matrix stored as row-major sorted coordinate triplets.

    Entries are kept sorted by ``(row, col)``, so two matrices holding the same
    observations have identical arrays. CSR (per-row) and CSC (per-column)
    views are built once at construction.
    """

    n_rows: int
    n_cols: int
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    row_ptr: np.ndarray = field(init=False, repr=False)
    col_ptr: np.ndarray = field(init=False, repr=False)
    csc_rows: np.ndarray = field(init=False, repr=False)
    csc_vals: np.ndarray = field(init=False, repr=False)
    csc_perm: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        rows = np.ascontiguousarray(self.rows, dtype=np.int64)
        cols = np.ascontiguousarray(self.cols, dtype=np.int64)
        vals = np.ascontiguousarray(self.vals, dtype=np.float64)
        if not (rows.shape == cols.shape == vals.shape and rows.ndim == 1):
            raise ContractError("rows, cols and vals must be 1-D arrays of equal length")
        if self.n_rows < 0 or self.n_cols < 0:
            raise ContractError("matrix dimensions must be nonnegative")
        if rows.size:
            bad = (rows < 0) | (rows >= self.n_rows) | (cols < 0) | (cols >= self.n_cols)
            if bad.any():
                e = int(np.flatnonzero(bad)[0])
                raise DataError(f"index ({rows[e]}, {cols[e]}) outside {self.n_rows}x{self.n_cols}")
        if not np.all(np.isfinite(vals)):
            raise DataError("non-finite observed value")
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if rows.size > 1:
            dup = (rows[1:] == rows[:-1]) & (cols[1:] == cols[:-1])
            if dup.any():
                e = int(np.flatnonzero(dup)[0])
                raise DataError(f"duplicate entry ({rows[e]}, {cols[e]})")
        perm = np.lexsort((rows, cols))
        for name, arr in (
            ("rows", rows),
            ("cols", cols),
            ("vals", vals),
            ("row_ptr", _ptr(rows, self.n_rows)),
            ("col_ptr", _ptr(cols[perm], self.n_cols)),
            ("csc_rows", np.ascontiguousarray(rows[perm])),
            ("csc_vals", np.ascontiguousarray(vals[perm])),
            ("csc_perm", perm),
        ):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def nnz(self) -> int:
        return int(self.vals.size)

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    def row_index(self, i) -> np.ndarray:
        """Observed columns of row ``i``."""
        return self.cols[self.row_ptr[i]:self.row_ptr[i + 1]]

    def col_index(self, j) -> np.ndarray:
        """Observed rows of column ``j``."""
        return self.csc_rows[self.col_ptr[j]:self.col_ptr[j + 1]]

    def subset(self, mask) -> "ObservedMatrix":
        """Keep the entries selected by a boolean mask or index array, same shape."""
        return ObservedMatrix(self.n_rows, self.n_cols, self.rows[mask], self.cols[mask], self.vals[mask])

    def with_values(self, vals) -> "ObservedMatrix":
        return ObservedMatrix(self.n_rows, self.n_cols, self.rows, self.cols, vals)

    def to_dense(self, fill=np.nan) -> np.ndarray:
        out = np.full(self.shape, fill, dtype=float)
        out[self.rows, self.cols] = self.vals
        return out

    @classmethod
    def from_dense(cls, X, mask=None) -> "ObservedMatrix":
        X = np.asarray(X, dtype=float)
        if mask is None:
            mask = np.isfinite(X)
        r, c = np.nonzero(mask)
        return cls(X.shape[0], X.shape[1], r, c, X[r, c])

    def __eq__(self, other):
        if not isinstance(other, ObservedMatrix):
            return NotImplemented
        return (
            self.shape == other.shape
            and np.array_equal(self.rows, other.rows)
            and np.array_equal(self.cols, other.cols)
            and np.array_equal(self.vals, other.vals)
        )

    __hash__ = None


def _ptr(sorted_idx, n):
    return np.concatenate(([0], np.cumsum(np.bincount(sorted_idx, minlength=n)))).astype(np.int64)


# --------------------------------------------------------------------------
# loading / saving


def load_coordinate(path, format="matrix-market", min_col_count=None) -> ObservedMatrix:
    """Load a coordinate-format file.

    Parameters
    ----------
    path : str or Path
    format : {"matrix-market", "csv-triplet", "movielens"}
        ``matrix-market`` is the 1-based ``coordinate real general`` layout,
        ``csv-triplet`` is a ``i,j,value`` file with 0-based indices, and
        ``movielens`` is the tab-separated ``user item rating timestamp`` dump
        with ids remapped densely in sorted order.
    min_col_count : int, optional
        Drop columns with fewer observations than this (applied after loading).
    """
    path = Path(path)
    if format not in FORMATS:
        raise ContractError(f"unknown format {format!r}; expected one of {FORMATS}")
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    loader = {"matrix-market": _load_mm, "csv-triplet": _load_csv, "movielens": _load_movielens}[format]
    X = loader(path)
    if min_col_count:
        X = filter_columns(X, min_col_count)
    return X


def _load_mm(path):
    rows, cols, vals = [], [], []
    shape = None
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        parts = header.lower().split()
        if len(parts) < 5 or parts[0] != "%%matrixmarket":
            raise DataError("missing %%MatrixMarket header", line=1)
        if parts[1:4] != ["matrix", "coordinate", "real"] or parts[4] != "general":
            raise DataError(f"unsupported MatrixMarket type: {' '.join(parts[1:])}", line=1)
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line or line.startswith("%"):
                continue
            fields = line.split()
            try:
                if shape is None:
                    if len(fields) != 3:
                        raise ValueError
                    shape = tuple(int(f) for f in fields)
                    continue
                if len(fields) != 3:
                    raise ValueError
                i, j, v = int(fields[0]), int(fields[1]), float(fields[2])
            except ValueError:
                raise DataError(f"cannot parse {line!r}", line=lineno) from None
            if not (1 <= i <= shape[0] and 1 <= j <= shape[1]):
                raise DataError(f"index ({i}, {j}) outside {shape[0]}x{shape[1]}", line=lineno)
            rows.append(i - 1)
            cols.append(j - 1)
            vals.append(v)
    if shape is None:
        raise DataError("missing size line")
    if len(vals) != shape[2]:
        raise DataError(f"size line declares {shape[2]} entries but file has {len(vals)}")
    return ObservedMatrix(shape[0], shape[1], rows, cols, vals)


def _load_csv(path):
    rows, cols, vals = [], [], []
    n_rows = n_cols = None
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != ["i", "j", "value"]:
            raise DataError("expected header 'i,j,value'", line=1)
        # optional trailing header fields give the shape: i,j,value,n_rows,n_cols
        for lineno, rec in enumerate(reader, start=2):
            if not rec or not "".join(rec).strip():
                continue
            try:
                i, j, v = int(rec[0]), int(rec[1]), float(rec[2])
            except (ValueError, IndexError):
                raise DataError(f"cannot parse {','.join(rec)!r}", line=lineno) from None
            if i < 0 or j < 0:
                raise DataError(f"negative index ({i}, {j})", line=lineno)
            rows.append(i)
            cols.append(j)
            vals.append(v)
        if len(header) >= 5:
            n_rows, n_cols = int(header[3]), int(header[4])
    if n_rows is None:
        n_rows = max(rows, default=-1) + 1
        n_cols = max(cols, default=-1) + 1
    return ObservedMatrix(n_rows, n_cols, rows, cols, vals)


def _load_movielens(path):
    raw = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) < 3:
                raise DataError(f"expected user\\titem\\trating[\\ttimestamp], got {line.strip()!r}", line=lineno)
            try:
                raw.append((int(fields[0]), int(fields[1]), float(fields[2])))
            except ValueError:
                raise DataError(f"cannot parse {line.strip()!r}", line=lineno) from None
    users = np.array([r[0] for r in raw], dtype=np.int64)
    items = np.array([r[1] for r in raw], dtype=np.int64)
    ratings = np.array([r[2] for r in raw])
    uids, rows = np.unique(users, return_inverse=True)
    iids, cols = np.unique(items, return_inverse=True)
    return ObservedMatrix(uids.size, iids.size, rows, cols, ratings)


def filter_columns(X: ObservedMatrix, min_count: int) -> ObservedMatrix:
    """Drop columns with fewer than ``min_count`` observations and reindex densely."""
    counts = np.bincount(X.cols, minlength=X.n_cols)
    keep = counts >= min_count
    newid = np.cumsum(keep) - 1
    sel = keep[X.cols]
    return ObservedMatrix(X.n_rows, int(keep.sum()), X.rows[sel], newid[X.cols[sel]], X.vals[sel])


def save_coordinate(X: ObservedMatrix, path, format="matrix-market"):
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if format == "matrix-market":
            fh.write("%%MatrixMarket matrix coordinate real general\n")
            fh.write(f"{X.n_rows} {X.n_cols} {X.nnz}\n")
            for i, j, v in zip(X.rows, X.cols, X.vals):
                fh.write(f"{i + 1} {j + 1} {float(v)!r}\n")
        elif format == "csv-triplet":
            fh.write(f"i,j,value,{X.n_rows},{X.n_cols}\n")
            for i, j, v in zip(X.rows, X.cols, X.vals):
                fh.write(f"{i},{j},{float(v)!r}\n")
        else:
            raise ContractError(f"cannot write format {format!r}")


# --------------------------------------------------------------------------
# transforms and splits


def log_transform(X: ObservedMatrix) -> ObservedMatrix:
    """Map every observed value ``v`` to ``ln(v + 1)``."""
    if X.nnz and X.vals.min() < 0:
        raise DataError(f"log transform needs nonnegative values, found {X.vals.min()!r}")
    return X.with_values(np.log1p(X.vals))


@dataclass(frozen=True)
class FoldSplit:
    k: int
    assignments: np.ndarray
    seed: int

    def train_test(self, X: ObservedMatrix, fold: int):
        test = self.assignments == fold
        return X.subset(~test), X.subset(test)

    def sizes(self):
        return np.bincount(self.assignments, minlength=self.k)


def split_folds(X: ObservedMatrix, k: int, seed: int) -> FoldSplit:
    """Assign every observed entry to one of ``k`` folds of near-equal size."""
    if k < 2:
        raise ContractError(f"need k >= 2 folds, got {k}")
    if X.nnz < k:
        raise ContractError(f"cannot split {X.nnz} entries into {k} folds")
    perm = rng_for(seed, 0).permutation(X.nnz)
    assign = np.empty(X.nnz, dtype=np.int64)
    assign[perm] = np.arange(X.nnz) % k
    assign.setflags(write=False)
    return FoldSplit(k, assign, seed)


def holdout_validation(train: ObservedMatrix, fraction: float, seed: int):
    """Split off ``ceil(fraction * nnz)`` entries as a validation set.

    Returns ``(fit_part, validation_part)``.
    """
    if not 0 < fraction < 1:
        raise ContractError(f"validation fraction must be in (0, 1), got {fraction}")
    n_val = math.ceil(round(fraction * train.nnz, 9))
    if n_val < 1 or n_val >= train.nnz:
        raise ContractError(f"fraction {fraction} leaves an empty side for {train.nnz} entries")
    perm = rng_for(seed, 1).permutation(train.nnz)
    val = np.zeros(train.nnz, dtype=bool)
    val[perm[:n_val]] = True
    return train.subset(~val), train.subset(val)
