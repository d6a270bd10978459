"""Complex compressed sparse-row matrices, structural metrics and permutations.

Everything downstream (operators, Liouvillians, incomplete factors) is held in
:class:`ComplexSparseMatrix`.  Matrices are canonical on construction: column
indices are strictly increasing within each row and no exact zeros are stored.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

INDEX = np.int64
VALUE = np.complex128

__all__ = [
    "ComplexSparseMatrix",
    "StructureMetrics",
    "Permutation",
    "identity",
    "kron",
    "add",
    "scale",
    "transpose",
    "matmul",
    "matvec",
    "dense_from_sparse",
    "structure_metrics",
    "permute_symmetric",
    "symmetrized_pattern",
    "matrix_market_write",
    "matrix_market_read",
]


class SparseError(ValueError):
    """Raised on dimension or structure errors in sparse operations."""


@dataclass(frozen=True, eq=False)
class ComplexSparseMatrix:
    """Canonical CSR matrix with complex double values and 64-bit indices.

    Use :meth:`from_coo` or :meth:`from_dense` to build one; the raw
    constructor trusts its arguments (use ``check()`` to validate).
    """

    nrows: int
    ncols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        for arr in (self.row_offsets, self.col_indices, self.values):
            arr.setflags(write=False)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nrows, self.ncols)

    @property
    def nnz(self) -> int:
        return int(self.row_offsets[-1])

    @classmethod
    def from_coo(cls, rows, cols, vals, shape) -> "ComplexSparseMatrix":
        """Build a canonical matrix from triplets, summing duplicates."""
        nrows, ncols = int(shape[0]), int(shape[1])
        rows = np.asarray(rows, dtype=INDEX).ravel()
        cols = np.asarray(cols, dtype=INDEX).ravel()
        vals = np.asarray(vals, dtype=VALUE).ravel()
        if not (rows.size == cols.size == vals.size):
            raise SparseError("triplet arrays differ in length")
        if nrows < 0 or ncols < 0:
            raise SparseError("negative dimension")
        if nrows and ncols and nrows > np.iinfo(INDEX).max // ncols:
            raise SparseError("dimension overflow of index type")
        if rows.size:
            if rows.min() < 0 or rows.max() >= nrows or cols.min() < 0 or cols.max() >= ncols:
                raise SparseError("triplet index out of range")
        key = rows * ncols + cols
        order = np.argsort(key, kind="stable")
        key = key[order]
        vals = vals[order]
        if key.size:
            starts = np.flatnonzero(np.r_[True, key[1:] != key[:-1]])
            vals = np.add.reduceat(vals, starts)
            key = key[starts]
        keep = vals != 0
        key, vals = key[keep], vals[keep]
        r = key // ncols if ncols else key
        c = key - r * ncols
        offsets = np.zeros(nrows + 1, dtype=INDEX)
        np.cumsum(np.bincount(r, minlength=nrows), out=offsets[1:])
        return cls(nrows, ncols, offsets, c.astype(INDEX), vals.astype(VALUE))

    @classmethod
    def from_dense(cls, dense) -> "ComplexSparseMatrix":
        dense = np.asarray(dense, dtype=VALUE)
        if dense.ndim != 2:
            raise SparseError("expected a 2-D array")
        r, c = np.nonzero(dense)
        return cls.from_coo(r, c, dense[r, c], dense.shape)

    def rows(self) -> np.ndarray:
        """Row index of every stored entry."""
        return np.repeat(np.arange(self.nrows, dtype=INDEX), np.diff(self.row_offsets))

    def to_coo(self):
        return self.rows(), self.col_indices.copy(), self.values.copy()

    def diagonal(self) -> np.ndarray:
        n = min(self.nrows, self.ncols)
        out = np.zeros(n, dtype=VALUE)
        r = self.rows()
        on = r == self.col_indices
        out[r[on]] = self.values[on]
        return out

    def canonicalize(self) -> "ComplexSparseMatrix":
        return ComplexSparseMatrix.from_coo(*self.to_coo(), self.shape)

    def check(self) -> None:
        """Raise :class:`SparseError` if any CSR invariant is violated."""
        ro = self.row_offsets
        if ro.shape != (self.nrows + 1,) or ro[0] != 0:
            raise SparseError("bad row_offsets length or origin")
        if np.any(np.diff(ro) < 0):
            raise SparseError("row_offsets must be non-decreasing")
        if ro[-1] != self.col_indices.size or ro[-1] != self.values.size:
            raise SparseError("row_offsets does not match stored entries")
        if self.col_indices.size:
            if self.col_indices.min() < 0 or self.col_indices.max() >= self.ncols:
                raise SparseError("column index out of range")
            step = np.diff(self.col_indices)
            same_row = np.diff(self.rows()) == 0
            if np.any(step[same_row] <= 0):
                raise SparseError("column indices not strictly increasing within a row")
        if np.any(self.values == 0):
            raise SparseError("explicit zero stored")

    def pattern_keys(self) -> np.ndarray:
        """Flat ``row * ncols + col`` keys of the stored pattern, ascending."""
        return self.rows() * self.ncols + self.col_indices

    def conj(self) -> "ComplexSparseMatrix":
        return ComplexSparseMatrix(
            self.nrows, self.ncols, self.row_offsets, self.col_indices, self.values.conj()
        )

    @property
    def T(self) -> "ComplexSparseMatrix":
        return transpose(self)

    def adjoint(self) -> "ComplexSparseMatrix":
        return transpose(self).conj()

    def todense(self) -> np.ndarray:
        return dense_from_sparse(self)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, other, beta=-1.0)

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, alpha):
        if isinstance(alpha, ComplexSparseMatrix):
            return NotImplemented
        return scale(self, alpha)

    __rmul__ = __mul__

    def __matmul__(self, other):
        if isinstance(other, ComplexSparseMatrix):
            return matmul(self, other)
        return matvec(self, np.asarray(other, dtype=VALUE))

    def __repr__(self):
        return f"ComplexSparseMatrix(shape={self.shape}, nnz={self.nnz})"


@dataclass(frozen=True)
class StructureMetrics:
    upper_bandwidth: int
    lower_bandwidth: int
    total_bandwidth: int
    upper_profile: int
    lower_profile: int
    total_profile: int
    nnz: int


@dataclass(frozen=True, eq=False)
class Permutation:
    """Bijection on ``range(size)``; ``forward[old] = new``."""

    forward: np.ndarray

    def __post_init__(self):
        fwd = np.asarray(self.forward, dtype=INDEX)
        if fwd.ndim != 1 or not np.array_equal(np.sort(fwd), np.arange(fwd.size)):
            raise SparseError("permutation is not a bijection")
        fwd.setflags(write=False)
        object.__setattr__(self, "forward", fwd)

    @property
    def size(self) -> int:
        return int(self.forward.size)

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(np.arange(n, dtype=INDEX))

    @classmethod
    def from_order(cls, order) -> "Permutation":
        """From a list giving, for each new position, the old index placed there."""
        order = np.asarray(order, dtype=INDEX)
        fwd = np.empty_like(order)
        fwd[order] = np.arange(order.size, dtype=INDEX)
        return cls(fwd)

    @property
    def order(self) -> np.ndarray:
        """``order[new] = old``."""
        out = np.empty_like(self.forward)
        out[self.forward] = np.arange(self.size, dtype=INDEX)
        return out

    def inverse(self) -> "Permutation":
        return Permutation(self.order)

    def compose(self, other: "Permutation") -> "Permutation":
        """Apply ``self`` first, then ``other``."""
        if other.size != self.size:
            raise SparseError("permutation sizes differ")
        return Permutation(other.forward[self.forward])

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Move entry ``v[old]`` to position ``forward[old]``."""
        v = np.asarray(v)
        if v.shape[0] != self.size:
            raise SparseError("vector length does not match permutation")
        out = np.empty_like(v)
        out[self.forward] = v
        return out

    def unapply(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v)
        if v.shape[0] != self.size:
            raise SparseError("vector length does not match permutation")
        return v[self.forward]

    def __eq__(self, other):
        return isinstance(other, Permutation) and np.array_equal(self.forward, other.forward)


def identity(n: int) -> ComplexSparseMatrix:
    idx = np.arange(n, dtype=INDEX)
    return ComplexSparseMatrix(n, n, np.arange(n + 1, dtype=INDEX), idx, np.ones(n, dtype=VALUE))


def kron(a: ComplexSparseMatrix, b: ComplexSparseMatrix) -> ComplexSparseMatrix:
    """Kronecker product ``a (x) b``."""
    nr, nc = a.nrows * b.nrows, a.ncols * b.ncols
    limit = np.iinfo(INDEX).max
    if a.nrows and b.nrows and (a.nrows > limit // max(b.nrows, 1) or a.ncols > limit // max(b.ncols, 1)):
        raise SparseError("dimension overflow of index type")
    ar, ac, av = a.to_coo()
    br, bc, bv = b.to_coo()
    rows = (ar[:, None] * b.nrows + br[None, :]).ravel()
    cols = (ac[:, None] * b.ncols + bc[None, :]).ravel()
    vals = (av[:, None] * bv[None, :]).ravel()
    return ComplexSparseMatrix.from_coo(rows, cols, vals, (nr, nc))


def add(a: ComplexSparseMatrix, b: ComplexSparseMatrix, alpha=1.0, beta=1.0) -> ComplexSparseMatrix:
    """``alpha*a + beta*b``; exact cancellations are pruned."""
    if a.shape != b.shape:
        raise SparseError(f"shape mismatch {a.shape} vs {b.shape}")
    ar, ac, av = a.to_coo()
    br, bc, bv = b.to_coo()
    return ComplexSparseMatrix.from_coo(
        np.r_[ar, br], np.r_[ac, bc], np.r_[alpha * av, beta * bv], a.shape
    )


def scale(a: ComplexSparseMatrix, alpha) -> ComplexSparseMatrix:
    if alpha == 0:
        return ComplexSparseMatrix.from_coo([], [], [], a.shape)
    return ComplexSparseMatrix(
        a.nrows, a.ncols, a.row_offsets, a.col_indices, (a.values * alpha).astype(VALUE)
    )


def transpose(a: ComplexSparseMatrix) -> ComplexSparseMatrix:
    r, c, v = a.to_coo()
    return ComplexSparseMatrix.from_coo(c, r, v, (a.ncols, a.nrows))


def matmul(a: ComplexSparseMatrix, b: ComplexSparseMatrix) -> ComplexSparseMatrix:
    """Sparse product ``a @ b``."""
    if a.ncols != b.nrows:
        raise SparseError(f"shape mismatch {a.shape} @ {b.shape}")
    blen = np.diff(b.row_offsets)
    counts = blen[a.col_indices]
    total = int(counts.sum())
    rows = np.repeat(a.rows(), counts)
    avals = np.repeat(a.values, counts)
    # position of each expanded term inside the matching row of b
    starts = np.repeat(b.row_offsets[a.col_indices], counts)
    within = np.arange(total, dtype=INDEX) - np.repeat(np.cumsum(counts) - counts, counts)
    pos = starts + within
    return ComplexSparseMatrix.from_coo(
        rows, b.col_indices[pos], avals * b.values[pos], (a.nrows, b.ncols)
    )


@njit(cache=True)
def _csr_matvec(offsets, cols, vals, x, out):
    for i in range(offsets.size - 1):
        acc = 0j
        for k in range(offsets[i], offsets[i + 1]):
            acc += vals[k] * x[cols[k]]
        out[i] = acc


def matvec(a: ComplexSparseMatrix, x: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    """``y = a @ x``.  Pass ``out`` to reuse a buffer across calls."""
    x = np.ascontiguousarray(x, dtype=VALUE)
    if x.shape != (a.ncols,):
        raise SparseError(f"vector of length {x.shape} does not match {a.shape}")
    if out is None:
        out = np.empty(a.nrows, dtype=VALUE)
    elif out.shape != (a.nrows,) or out.dtype != VALUE:
        raise SparseError("output buffer has wrong shape or dtype")
    _csr_matvec(a.row_offsets, a.col_indices, a.values, x, out)
    return out


def dense_from_sparse(a: ComplexSparseMatrix) -> np.ndarray:
    out = np.zeros(a.shape, dtype=VALUE)
    out[a.rows(), a.col_indices] = a.values
    return out


def structure_metrics(a: ComplexSparseMatrix) -> StructureMetrics:
    """Bandwidths and profiles of the stored pattern.

    Per-row (per-column) maxima of the distance to the diagonal are clamped at
    zero so rows with no super-diagonal entry contribute nothing to the profile.
    """
    if a.nnz == 0:
        raise SparseError("bandwidth undefined for a matrix with no stored entries")
    r = a.rows()
    c = a.col_indices
    d = c - r
    ub = max(int(d.max()), 0)
    lb = max(int((-d).max()), 0)
    row_reach = np.zeros(a.nrows, dtype=INDEX)
    np.maximum.at(row_reach, r, d)
    col_reach = np.zeros(a.ncols, dtype=INDEX)
    np.maximum.at(col_reach, c, -d)
    up, lp = int(row_reach.sum()), int(col_reach.sum())
    return StructureMetrics(ub, lb, ub + lb + 1, up, lp, up + lp, a.nnz)


def permute_symmetric(a: ComplexSparseMatrix, p: Permutation) -> ComplexSparseMatrix:
    """``P A P^T``: entry ``(i, j)`` moves to ``(forward[i], forward[j])``."""
    if a.nrows != a.ncols:
        raise SparseError("symmetric permutation needs a square matrix")
    if p.size != a.nrows:
        raise SparseError(f"permutation of size {p.size} for matrix of size {a.nrows}")
    r, c, v = a.to_coo()
    f = p.forward
    return ComplexSparseMatrix.from_coo(f[r], f[c], v, a.shape)


def symmetrized_pattern(a: ComplexSparseMatrix) -> ComplexSparseMatrix:
    """Structural union of ``a`` and ``a.T`` with every stored value set to 1."""
    if a.nrows != a.ncols:
        raise SparseError("symmetrized pattern needs a square matrix")
    r, c = a.rows(), a.col_indices
    keys = np.unique(np.r_[r * a.ncols + c, c * a.ncols + r])
    rows = keys // a.ncols
    offsets = np.zeros(a.nrows + 1, dtype=INDEX)
    np.cumsum(np.bincount(rows, minlength=a.nrows), out=offsets[1:])
    return ComplexSparseMatrix(
        a.nrows, a.ncols, offsets, (keys - rows * a.ncols).astype(INDEX), np.ones(keys.size, dtype=VALUE)
    )


MM_HEADER = "%%MatrixMarket matrix coordinate complex general"


def matrix_market_write(path, a: ComplexSparseMatrix, comment: str | None = None) -> None:
    """Write ``a`` in coordinate complex general form (1-based indices)."""
    r, c, v = a.to_coo()
    with open(path, "w") as fh:
        fh.write(MM_HEADER + "\n")
        if comment:
            for line in comment.splitlines():
                fh.write(f"% {line}\n")
        fh.write(f"{a.nrows} {a.ncols} {a.nnz}\n")
        for i, j, z in zip(r.tolist(), c.tolist(), v.tolist()):
            fh.write(f"{i + 1} {j + 1} {z.real!r} {z.imag!r}\n")


def matrix_market_read(path) -> ComplexSparseMatrix:
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != MM_HEADER:
        raise SparseError(f"{path}: expected header {MM_HEADER!r}")
    body = [ln for ln in text[1:] if ln.strip() and not ln.startswith("%")]
    nr, nc, nnz = (int(t) for t in body[0].split())
    if len(body) - 1 != nnz:
        raise SparseError(f"{path}: header announces {nnz} entries, found {len(body) - 1}")
    if nnz == 0:
        return ComplexSparseMatrix.from_coo([], [], [], (nr, nc))
    data = np.array([ln.split() for ln in body[1:]], dtype=object)
    rows = data[:, 0].astype(INDEX) - 1
    cols = data[:, 1].astype(INDEX) - 1
    vals = data[:, 2].astype(float) + 1j * data[:, 3].astype(float)
    return ComplexSparseMatrix.from_coo(rows, cols, vals, (nr, nc))
