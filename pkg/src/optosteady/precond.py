"""Dual-threshold incomplete LU with pivoting (ILUTP).

Rows are eliminated one at a time (IKJ order).  Pivoting exchanges columns
within the not-yet-eliminated block, so the factors satisfy
``A[:, order] = L @ U`` where ``order = col_perm.order``.  With a zero drop
tolerance and an unbounded fill cap the factorization is a complete LU.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numba import njit

from .sparse import ComplexSparseMatrix, Permutation, SparseError

__all__ = [
    "IluConfig",
    "IluFactors",
    "IluWorkspace",
    "FactorizationBreakdown",
    "NumericError",
    "ilutp",
    "complete_lu",
    "condest",
    "apply_preconditioner",
]


class FactorizationBreakdown(ArithmeticError):
    def __init__(self, row: int, reason: str = "zero pivot"):
        super().__init__(f"factorization breakdown at row {row}: {reason}")
        self.row = row


class NumericError(ArithmeticError):
    """Non-finite values appeared during factorization or solve."""


@dataclass(frozen=True)
class IluConfig:
    drop_tol: float = 1e-4
    fill_factor: float = 100.0
    pivot_threshold: float = 1.0

    def __post_init__(self):
        if not self.drop_tol >= 0:
            raise ValueError(f"drop_tol must be >= 0, got {self.drop_tol}")
        if not self.fill_factor > 0:
            raise ValueError(f"fill_factor must be > 0, got {self.fill_factor}")
        if not 0 <= self.pivot_threshold <= 1:
            raise ValueError(f"pivot_threshold must lie in [0, 1], got {self.pivot_threshold}")

    @classmethod
    def complete(cls, pivot_threshold: float = 1.0) -> "IluConfig":
        return cls(drop_tol=0.0, fill_factor=math.inf, pivot_threshold=pivot_threshold)


# ---------------------------------------------------------------- kernels


@njit(cache=True, inline="always")
def _heap_push(heap, size, key):
    pos = size
    heap[pos] = key
    while pos > 0:
        parent = (pos - 1) >> 1
        if heap[parent] <= key:
            break
        heap[pos] = heap[parent]
        pos = parent
    heap[pos] = key
    return size + 1


@njit(cache=True, inline="always")
def _heap_pop(heap, size):
    top = heap[0]
    size -= 1
    last = heap[size]
    pos = 0
    while True:
        child = 2 * pos + 1
        if child >= size:
            break
        if child + 1 < size and heap[child + 1] < heap[child]:
            child += 1
        if heap[child] >= last:
            break
        heap[pos] = heap[child]
        pos = child
    if size > 0:
        heap[pos] = last
    return top, size


@njit(cache=True)
def _grow_int(arr, need):
    cap = arr.size
    while cap < need:
        cap *= 2
    out = np.empty(cap, dtype=arr.dtype)
    out[: arr.size] = arr
    return out


@njit(cache=True)
def _grow_cplx(arr, need):
    cap = arr.size
    while cap < need:
        cap *= 2
    out = np.empty(cap, dtype=arr.dtype)
    out[: arr.size] = arr
    return out


@njit(cache=True)
def _ilutp_kernel(n, a_ptr, a_col, a_val, droptol, fill, pivtol, cap):
    """Returns ``(status, l_ptr, l_col, l_val, u_ptr, u_col, u_val, udiag, perm)``.

    ``status`` is -1 on success, the failing row on a zero pivot, or
    ``-2 - row`` on a non-finite value.  U columns are returned as final
    positions, rows sorted; U holds only off-diagonal entries.
    """
    l_ptr = np.zeros(n + 1, dtype=np.int64)
    u_ptr = np.zeros(n + 1, dtype=np.int64)
    l_col = np.empty(cap, dtype=np.int64)
    l_val = np.empty(cap, dtype=np.complex128)
    u_col = np.empty(cap, dtype=np.int64)
    u_val = np.empty(cap, dtype=np.complex128)
    udiag = np.zeros(n, dtype=np.complex128)
    perm = np.arange(n)
    iperm = np.arange(n)

    w = np.zeros(n, dtype=np.complex128)
    marker = np.full(n, -1, dtype=np.int64)
    heap = np.empty(n, dtype=np.int64)
    ucols = np.empty(n, dtype=np.int64)
    lk = np.empty(n, dtype=np.int64)
    lv = np.empty(n, dtype=np.complex128)
    mags = np.empty(n, dtype=np.float64)
    unbounded = not (fill < np.inf)

    for i in range(n):
        rownorm = 0.0
        hs = 0
        nu = 0
        for t in range(a_ptr[i], a_ptr[i + 1]):
            c = a_col[t]
            v = a_val[t]
            w[c] = v
            marker[c] = i
            av = abs(v)
            if av > rownorm:
                rownorm = av
            pos = iperm[c]
            if pos < i:
                hs = _heap_push(heap, hs, pos)
            else:
                ucols[nu] = c
                nu += 1
        if rownorm == 0.0:
            return i, l_ptr, l_col, l_val, u_ptr, u_col, u_val, udiag, perm
        tol = droptol * rownorm

        nl = 0
        while hs > 0:
            k, hs = _heap_pop(heap, hs)
            c = perm[k]
            lik = w[c] / udiag[k]
            w[c] = 0.0
            mag = abs(lik)
            if mag == 0.0 or mag < tol:
                continue
            if not np.isfinite(mag):
                return -2 - i, l_ptr, l_col, l_val, u_ptr, u_col, u_val, udiag, perm
            lk[nl] = k
            lv[nl] = lik
            nl += 1
            for t in range(u_ptr[k], u_ptr[k + 1]):
                c2 = u_col[t]
                if marker[c2] != i:
                    marker[c2] = i
                    w[c2] = -lik * u_val[t]
                    pos = iperm[c2]
                    if pos < i:
                        hs = _heap_push(heap, hs, pos)
                    else:
                        ucols[nu] = c2
                        nu += 1
                else:
                    w[c2] -= lik * u_val[t]

        # pivot: largest candidate in the remaining block
        dc = perm[i]
        cmax = -1
        vmax = 0.0
        for t in range(nu):
            c = ucols[t]
            av = abs(w[c])
            if av > vmax:
                vmax = av
                cmax = c
        if not np.isfinite(vmax):
            return -2 - i, l_ptr, l_col, l_val, u_ptr, u_col, u_val, udiag, perm
        if cmax < 0:
            for t in range(nu):
                w[ucols[t]] = 0.0
            return i, l_ptr, l_col, l_val, u_ptr, u_col, u_val, udiag, perm
        if cmax != dc and abs(w[dc]) < pivtol * vmax:
            j = iperm[cmax]
            perm[i] = cmax
            perm[j] = dc
            iperm[cmax] = i
            iperm[dc] = j
            dc = cmax
        udiag[i] = w[dc]
        w[dc] = 0.0

        # drop small U entries; the pivot is kept separately
        nk = 0
        for t in range(nu):
            c = ucols[t]
            if c == dc:
                continue
            av = abs(w[c])
            if av == 0.0 or av < tol:
                w[c] = 0.0
                continue
            ucols[nk] = c
            nk += 1

        budget = nl + nk
        if not unbounded:
            budget = min(budget, int(math.floor(fill * (a_ptr[i + 1] - a_ptr[i]))))
        if budget < nl + nk:
            # keep the largest magnitudes across the L and U parts
            for t in range(nl):
                mags[t] = abs(lv[t])
            for t in range(nk):
                mags[nl + t] = abs(w[ucols[t]])
            if budget > 0:
                cut = np.sort(mags[: nl + nk])[nl + nk - budget]
            else:
                cut = np.inf
            # entries equal to the cut are admitted in order until the budget is used
            n_above = 0
            for t in range(nl + nk):
                if mags[t] > cut:
                    n_above += 1
            ties = budget - n_above
            m = 0
            for t in range(nl):
                if mags[t] > cut or (mags[t] == cut and ties > 0):
                    if mags[t] == cut:
                        ties -= 1
                    lk[m] = lk[t]
                    lv[m] = lv[t]
                    m += 1
            nl = m
            m = 0
            for t in range(nk):
                c = ucols[t]
                av = abs(w[c])
                if av > cut or (av == cut and ties > 0):
                    if av == cut:
                        ties -= 1
                    ucols[m] = c
                    m += 1
                else:
                    w[c] = 0.0
            nk = m

        if l_ptr[i] + nl > l_col.size:
            l_col = _grow_int(l_col, l_ptr[i] + nl)
            l_val = _grow_cplx(l_val, l_ptr[i] + nl)
        base = l_ptr[i]
        for t in range(nl):
            l_col[base + t] = lk[t]
            l_val[base + t] = lv[t]
        l_ptr[i + 1] = base + nl

        if u_ptr[i] + nk > u_col.size:
            u_col = _grow_int(u_col, u_ptr[i] + nk)
            u_val = _grow_cplx(u_val, u_ptr[i] + nk)
        base = u_ptr[i]
        for t in range(nk):
            c = ucols[t]
            u_col[base + t] = c
            u_val[base + t] = w[c]
            w[c] = 0.0
        u_ptr[i + 1] = base + nk

        if udiag[i] == 0:
            return i, l_ptr, l_col, l_val, u_ptr, u_col, u_val, udiag, perm

    # relabel U columns to final positions and sort each row
    for i in range(n):
        lo, hi = u_ptr[i], u_ptr[i + 1]
        if hi == lo:
            continue
        for t in range(lo, hi):
            u_col[t] = iperm[u_col[t]]
        idx = np.argsort(u_col[lo:hi])
        cols = u_col[lo:hi][idx]
        vals = u_val[lo:hi][idx]
        u_col[lo:hi] = cols
        u_val[lo:hi] = vals
    nl_tot = l_ptr[n]
    nu_tot = u_ptr[n]
    return -1, l_ptr, l_col[:nl_tot].copy(), l_val[:nl_tot].copy(), u_ptr, u_col[:nu_tot].copy(), u_val[:nu_tot].copy(), udiag, perm


@njit(cache=True)
def _lu_solve(l_ptr, l_col, l_val, u_ptr, u_col, u_val, udiag, perm, b, y, x):
    """``x = Q (LU)^-1 b`` using ``y`` as scratch; ``b`` and ``x`` may alias."""
    n = udiag.size
    for i in range(n):
        s = b[i]
        for t in range(l_ptr[i], l_ptr[i + 1]):
            s -= l_val[t] * y[l_col[t]]
        y[i] = s
    for i in range(n - 1, -1, -1):
        s = y[i]
        for t in range(u_ptr[i], u_ptr[i + 1]):
            s -= u_val[t] * y[u_col[t]]
        y[i] = s / udiag[i]
    for i in range(n):
        x[perm[i]] = y[i]


# ---------------------------------------------------------------- public API


@dataclass(frozen=True, eq=False)
class IluFactors:
    """Incomplete factors with ``A[:, col_perm.order] ~= L @ U``.

    ``L`` is unit lower triangular with the unit diagonal implicit; ``U``
    stores its diagonal in ``udiag`` and off-diagonal entries in CSR arrays.
    ``fill_factor_achieved`` counts strictly-lower entries of L plus all of U.
    """

    n: int
    l_ptr: np.ndarray
    l_col: np.ndarray
    l_val: np.ndarray
    u_ptr: np.ndarray
    u_col: np.ndarray
    u_val: np.ndarray
    udiag: np.ndarray
    col_perm: Permutation
    input_nnz: int
    config: IluConfig
    condest: float = field(default=math.nan)
    fill_in_count: int = 0

    @property
    def nnz_lower(self) -> int:
        return int(self.l_ptr[-1])

    @property
    def nnz_upper(self) -> int:
        return int(self.u_ptr[-1]) + self.n

    @property
    def fill_factor_achieved(self) -> float:
        return (self.nnz_lower + self.nnz_upper) / self.input_nnz

    @cached_property
    def lower(self) -> ComplexSparseMatrix:
        """L with its unit diagonal stored explicitly."""
        rows = np.repeat(np.arange(self.n), np.diff(self.l_ptr))
        d = np.arange(self.n)
        return ComplexSparseMatrix.from_coo(
            np.r_[rows, d], np.r_[self.l_col, d], np.r_[self.l_val, np.ones(self.n)], (self.n, self.n)
        )

    @cached_property
    def upper(self) -> ComplexSparseMatrix:
        rows = np.repeat(np.arange(self.n), np.diff(self.u_ptr))
        d = np.arange(self.n)
        return ComplexSparseMatrix.from_coo(
            np.r_[rows, d], np.r_[self.u_col, d], np.r_[self.u_val, self.udiag], (self.n, self.n)
        )

    def solve(self, b: np.ndarray) -> np.ndarray:
        return apply_preconditioner(self, b)


class IluWorkspace:
    """Scratch buffers for repeated preconditioner applications by one caller."""

    def __init__(self, factors: IluFactors):
        self.factors = factors
        self.scratch = np.empty(factors.n, dtype=np.complex128)


def _factor_entries_outside(a: ComplexSparseMatrix, f: IluFactors) -> int:
    """Number of stored factor entries absent from the pattern of ``A[:, order]``."""
    n = a.nrows
    inv = f.col_perm.forward
    ak = np.unique(a.rows() * n + inv[a.col_indices])
    lk = np.repeat(np.arange(n), np.diff(f.l_ptr)) * n + f.l_col
    uk = np.r_[np.repeat(np.arange(n), np.diff(f.u_ptr)) * n + f.u_col, np.arange(n) * (n + 1)]
    keys = np.r_[lk, uk]
    return int(keys.size - np.isin(keys, ak, assume_unique=False).sum())


def ilutp(a: ComplexSparseMatrix, cfg: IluConfig = IluConfig()) -> IluFactors:
    """Incomplete LU of ``a`` with threshold dropping, per-row fill budget and pivoting.

    Within row ``i``, multipliers and updated entries smaller than
    ``cfg.drop_tol * max|a_i|`` are discarded (the pivot never is).  The
    surviving off-diagonal entries of the row are then capped at
    ``floor(cfg.fill_factor * nnz(a_i))``, keeping the largest, so the factors
    hold at most ``fill_factor * nnz(a)`` off-diagonal entries in total.  A
    column exchange brings the largest remaining candidate onto the diagonal
    when the current one is below ``cfg.pivot_threshold`` times it.
    """
    if a.nrows != a.ncols:
        raise SparseError("ILUTP needs a square matrix")
    n = a.nrows
    if n == 0:
        raise SparseError("ILUTP needs a nonempty matrix")
    if not np.all(np.isfinite(a.values)):
        raise NumericError("input matrix contains non-finite values")
    if math.isinf(cfg.fill_factor):
        cap = max(4 * a.nnz, 16)
    else:
        cap = max(int(min(cfg.fill_factor, 8.0) * a.nnz), 16)
    status, l_ptr, l_col, l_val, u_ptr, u_col, u_val, udiag, order = _ilutp_kernel(
        n, a.row_offsets, a.col_indices, a.values,
        float(cfg.drop_tol), float(cfg.fill_factor), float(cfg.pivot_threshold), cap,
    )
    if status >= 0:
        raise FactorizationBreakdown(int(status))
    if status < -1:
        raise NumericError(f"non-finite value while eliminating row {-2 - status}")
    f = IluFactors(
        n, l_ptr, l_col, l_val, u_ptr, u_col, u_val, udiag,
        Permutation.from_order(order), a.nnz, cfg,
    )
    off_diag = int(l_ptr[-1] + u_ptr[-1])
    if off_diag > cfg.fill_factor * a.nnz:
        raise RuntimeError(f"fill cap violated: {off_diag} > {cfg.fill_factor} * {a.nnz}")
    object.__setattr__(f, "fill_in_count", _factor_entries_outside(a, f))
    object.__setattr__(f, "condest", condest(f))
    return f


def complete_lu(a: ComplexSparseMatrix, pivot_threshold: float = 1.0) -> IluFactors:
    return ilutp(a, IluConfig.complete(pivot_threshold))


def apply_preconditioner(
    f: IluFactors,
    v: np.ndarray,
    work: IluWorkspace | None = None,
    out: np.ndarray | None = None,
) -> np.ndarray:
    """``M^-1 v`` through the factors; reuse ``work``/``out`` to avoid allocation."""
    v = np.ascontiguousarray(v, dtype=np.complex128)
    if v.shape != (f.n,):
        raise SparseError(f"vector of length {v.shape[0]} for factors of size {f.n}")
    if work is None:
        work = IluWorkspace(f)
    if out is None:
        out = np.empty(f.n, dtype=np.complex128)
    _lu_solve(
        f.l_ptr, f.l_col, f.l_val, f.u_ptr, f.u_col, f.u_val, f.udiag,
        f.col_perm.order, v, work.scratch, out,
    )
    return out


def condest(f: IluFactors) -> float:
    """``||(LU)^-1 e||_inf`` with ``e`` all ones: a lower bound on ``||M^-1||_inf``."""
    x = apply_preconditioner(f, np.ones(f.n, dtype=np.complex128))
    val = float(np.abs(x).max())
    if not math.isfinite(val):
        raise NumericError("condition estimate is not finite")
    return val
