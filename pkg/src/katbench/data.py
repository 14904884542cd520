"""Sparse labeled datasets and the LIBSVM text format.

Rows are stored in compressed sparse row layout (``indptr``, ``indices``,
``values``) with 0-based feature indices. LIBSVM's 1-based indices are
converted at the parse boundary and restored by :func:`dump_libsvm`.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Iterable, Optional, TextIO, Union

import numpy as np
import scipy.sparse as sp

from katbench.errors import ParseError


@dataclass(frozen=True)
class SparseRow:
    """One feature vector: strictly increasing 0-based indices, nonzero values."""

    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        val = np.asarray(self.values, dtype=np.float64)
        if idx.shape != val.shape or idx.ndim != 1:
            raise ValueError("indices and values must be 1-D and of equal length")
        if idx.size and (idx[0] < 0 or np.any(np.diff(idx) <= 0)):
            raise ValueError("indices must be non-negative and strictly increasing")
        if np.any(val == 0.0):
            raise ValueError("stored values must be nonzero")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)

    def __len__(self):
        return self.indices.size

    def __eq__(self, other):
        if not isinstance(other, SparseRow):
            return NotImplemented
        return np.array_equal(self.indices, other.indices) and np.array_equal(
            self.values, other.values
        )

    def __hash__(self):
        return hash((self.indices.tobytes(), self.values.tobytes()))

    def norm_sq(self) -> float:
        return float(self.values @ self.values)


def dot(row: SparseRow, x: np.ndarray) -> float:
    """Return ``row . x``.

    Raises
    ------
    IndexError
        If a stored index does not fit in ``x``.
    """
    x = np.asarray(x)
    if row.indices.size and row.indices[-1] >= x.shape[0]:
        raise IndexError(
            f"row index {row.indices[-1]} out of range for vector of length {x.shape[0]}"
        )
    return float(row.values @ x[row.indices])


class Dataset:
    """An immutable collection of ``n`` sparse rows with real labels.

    Parameters
    ----------
    indptr, indices, values : array_like
        CSR arrays. Row ``i`` occupies ``indices[indptr[i]:indptr[i+1]]``.
    labels : array_like
        One label per row.
    dim : int
        Feature dimension; every stored index must be below it.
    """

    def __init__(self, indptr, indices, values, labels, dim: int):
        indptr = np.array(indptr, dtype=np.int64)
        indices = np.array(indices, dtype=np.int64)
        values = np.array(values, dtype=np.float64)
        labels = np.array(labels, dtype=np.float64)
        n = indptr.size - 1
        if n < 1:
            raise ValueError("a dataset needs at least one row")
        if dim < 1:
            raise ValueError("dimension must be at least 1")
        if labels.shape != (n,):
            raise ValueError("need exactly one label per row")
        if indptr[0] != 0 or indptr[-1] != indices.size or np.any(np.diff(indptr) < 0):
            raise ValueError("inconsistent indptr")
        if indices.shape != values.shape:
            raise ValueError("indices and values differ in length")
        if indices.size:
            if indices.min() < 0 or indices.max() >= dim:
                raise ValueError("feature index outside [0, dim)")
            row_ids = np.repeat(np.arange(n), np.diff(indptr))
            same_row = row_ids[1:] == row_ids[:-1]
            if np.any((np.diff(indices) <= 0) & same_row):
                raise ValueError("indices within a row must be strictly increasing")
            if np.any(values == 0.0):
                raise ValueError("stored values must be nonzero")
        for arr in (indptr, indices, values, labels):
            arr.setflags(write=False)
        self.indptr = indptr
        self.indices = indices
        self.values = values
        self.labels = labels
        self.dim = int(dim)
        self._csr = None

    @classmethod
    def from_rows(cls, rows: Iterable[SparseRow], labels, dim: int) -> "Dataset":
        rows = list(rows)
        indptr = np.zeros(len(rows) + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(r) for r in rows])
        indices = np.concatenate([r.indices for r in rows]) if rows else []
        values = np.concatenate([r.values for r in rows]) if rows else []
        return cls(indptr, indices, values, labels, dim)

    @classmethod
    def from_dense(cls, A, labels) -> "Dataset":
        csr = sp.csr_matrix(np.asarray(A, dtype=np.float64))
        csr.eliminate_zeros()
        csr.sort_indices()
        return cls(csr.indptr, csr.indices, csr.data, labels, csr.shape[1])

    @property
    def n(self) -> int:
        return self.indptr.size - 1

    def __len__(self):
        return self.n

    def row(self, i: int) -> SparseRow:
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return SparseRow(self.indices[lo:hi], self.values[lo:hi])

    @property
    def rows(self) -> list:
        return [self.row(i) for i in range(self.n)]

    def csr(self) -> sp.csr_matrix:
        """The design matrix as a read-only scipy CSR matrix (cached)."""
        if self._csr is None:
            self._csr = sp.csr_matrix(
                (self.values, self.indices, self.indptr), shape=(self.n, self.dim)
            )
        return self._csr

    def dense(self) -> np.ndarray:
        return self.csr().toarray()

    def row_norms_sq(self) -> np.ndarray:
        row_ids = np.repeat(np.arange(self.n), np.diff(self.indptr))
        return np.bincount(row_ids, weights=np.square(self.values), minlength=self.n)

    def is_binary(self) -> bool:
        return bool(np.all(np.isin(self.labels, (-1.0, 1.0))))

    def permuted(self, order) -> "Dataset":
        order = np.asarray(order)
        return Dataset.from_rows([self.row(i) for i in order], self.labels[order], self.dim)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.dim == other.dim
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.values, other.values)
            and np.array_equal(self.labels, other.labels)
        )

    def __repr__(self):
        return f"Dataset(n={self.n}, dim={self.dim}, nnz={self.indices.size})"


def max_row_norm_sq(ds: Dataset) -> float:
    """Largest squared Euclidean row norm; 0 when every row is empty."""
    if ds.values.size == 0:
        return 0.0
    return float(ds.row_norms_sq().max())


def _parse_label(token, lineno):
    try:
        return float(token)
    except ValueError:
        raise ParseError(f"bad label {token!r}", lineno) from None


def parse_libsvm(
    source: Union[TextIO, Iterable[str], str], dim: Optional[int] = None
) -> Dataset:
    """Parse LIBSVM text (``<label> <idx>:<val> ...`` with 1-based indices).

    ``source`` may be an open text stream, any iterable of lines, or a string
    holding the whole file. Blank lines and ``#`` comments are skipped. Without
    ``dim`` the dimension is the largest index seen (at least 1).

    Raises
    ------
    ParseError
        On a malformed token, a non-increasing or duplicate index, a feature
        index beyond ``dim``, or input with no data lines.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    indptr = [0]
    indices, values, labels = [], [], []
    for lineno, line in enumerate(source, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        labels.append(_parse_label(tokens[0], lineno))
        prev = 0
        for tok in tokens[1:]:
            key, sep, val = tok.partition(":")
            if not sep:
                raise ParseError(f"expected <index>:<value>, got {tok!r}", lineno)
            try:
                idx = int(key)
                v = float(val)
            except ValueError:
                raise ParseError(f"non-numeric token {tok!r}", lineno) from None
            if idx < 1:
                raise ParseError(f"indices are 1-based, got {idx}", lineno)
            if idx == prev:
                raise ParseError(f"duplicate feature index {idx}", lineno)
            if idx < prev:
                raise ParseError(f"index {idx} follows {prev}; indices must increase", lineno)
            if dim is not None and idx > dim:
                raise ParseError(f"index {idx} exceeds dimension {dim}", lineno)
            prev = idx
            if v != 0.0:
                indices.append(idx - 1)
                values.append(v)
        indptr.append(len(indices))
    if not labels:
        raise ParseError("no data lines in input")
    if dim is None:
        dim = max(max(indices) + 1 if indices else 0, 1)
    return Dataset(indptr, indices, values, labels, dim)


def load_libsvm(path, dim: Optional[int] = None) -> Dataset:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_libsvm(fh, dim=dim)


def _format_number(v: float) -> str:
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def dump_libsvm(ds: Dataset, out: Optional[TextIO] = None) -> Optional[str]:
    """Write ``ds`` as LIBSVM text; returns the text when ``out`` is None.

    Values use ``repr`` so that re-parsing reproduces them bit for bit.
    """
    buf = io.StringIO() if out is None else out
    for i in range(ds.n):
        lo, hi = ds.indptr[i], ds.indptr[i + 1]
        parts = [_format_number(ds.labels[i])]
        parts.extend(
            f"{j + 1}:{float(v)!r}" for j, v in zip(ds.indices[lo:hi], ds.values[lo:hi])
        )
        buf.write(" ".join(parts) + "\n")
    if out is None:
        return buf.getvalue()
    return None
