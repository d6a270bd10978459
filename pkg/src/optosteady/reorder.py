"""Reverse Cuthill-McKee ordering of the symmetrized Liouvillian structure."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from numba import njit

from .liouvillian import ConstrainedLiouvillian
from .sparse import (
    ComplexSparseMatrix,
    Permutation,
    SparseError,
    permute_symmetric,
    symmetrized_pattern,
)


@dataclass(frozen=True, eq=False)
class AdjacencyView:
    """Undirected graph of a structurally symmetric pattern, self-loops removed."""

    n: int
    offsets: np.ndarray
    neighbors: np.ndarray

    @property
    def degree(self) -> np.ndarray:
        return np.diff(self.offsets)

    @classmethod
    def from_pattern(cls, pattern: ComplexSparseMatrix) -> "AdjacencyView":
        if pattern.nrows != pattern.ncols:
            raise SparseError("adjacency needs a square pattern")
        rows = pattern.rows()
        off = rows != pattern.col_indices
        offsets = np.zeros(pattern.nrows + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows[off], minlength=pattern.nrows), out=offsets[1:])
        return cls(pattern.nrows, offsets, pattern.col_indices[off].copy())

    def is_symmetric(self) -> bool:
        rows = np.repeat(np.arange(self.n), self.degree)
        fwd = np.sort(rows * self.n + self.neighbors)
        bwd = np.sort(self.neighbors * self.n + rows)
        return bool(np.array_equal(fwd, bwd))


@njit(cache=True)
def _level_structure(root, offsets, nbrs, mark, stamp, queue, level_start):
    """BFS from ``root``; fills ``queue`` level by level.

    Returns ``(n_visited, n_levels)``; level ``k`` occupies
    ``queue[level_start[k]:level_start[k + 1]]``.
    """
    queue[0] = root
    mark[root] = stamp
    head, tail = 0, 1
    nlev = 0
    while head < tail:
        level_start[nlev] = head
        nlev += 1
        end = tail
        while head < end:
            v = queue[head]
            head += 1
            for k in range(offsets[v], offsets[v + 1]):
                u = nbrs[k]
                if mark[u] != stamp:
                    mark[u] = stamp
                    queue[tail] = u
                    tail += 1
    level_start[nlev] = tail
    return tail, nlev


@njit(cache=True)
def _pseudo_peripheral(start, offsets, nbrs, deg, mark, stamp, queue, level_start):
    root = start
    _, nlev = _level_structure(root, offsets, nbrs, mark, stamp, queue, level_start)
    stamp += 1
    while True:
        # lowest-degree node of the deepest level, ties to the lowest index
        best = -1
        for k in range(level_start[nlev - 1], level_start[nlev]):
            v = queue[k]
            if best < 0 or deg[v] < deg[best] or (deg[v] == deg[best] and v < best):
                best = v
        _, nlev_x = _level_structure(best, offsets, nbrs, mark, stamp, queue, level_start)
        stamp += 1
        if nlev_x > nlev:
            root = best
            nlev = nlev_x
        else:
            return best, stamp


@njit(cache=True)
def _cuthill_mckee(offsets, nbrs, deg, by_degree):
    n = offsets.size - 1
    order = np.empty(n, dtype=np.int64)
    visited = np.zeros(n, dtype=np.bool_)
    mark = np.zeros(n, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    level_start = np.empty(n + 1, dtype=np.int64)
    buf = np.empty(n, dtype=np.int64)
    keys = np.empty(n, dtype=np.int64)
    stamp = 1
    filled = 0
    cursor = 0
    while filled < n:
        while visited[by_degree[cursor]]:
            cursor += 1
        # level structures must stay inside this component: visited nodes
        # belong to earlier components and are unreachable from here anyway
        root, stamp = _pseudo_peripheral(
            by_degree[cursor], offsets, nbrs, deg, mark, stamp, queue, level_start
        )
        order[filled] = root
        visited[root] = True
        head = filled
        filled += 1
        while head < filled:
            v = order[head]
            head += 1
            m = 0
            for k in range(offsets[v], offsets[v + 1]):
                u = nbrs[k]
                if not visited[u]:
                    visited[u] = True
                    buf[m] = u
                    keys[m] = deg[u] * n + u
                    m += 1
            idx = np.argsort(keys[:m])
            for t in range(m):
                order[filled] = buf[idx[t]]
                filled += 1
    return order


def cuthill_mckee_order(pattern: ComplexSparseMatrix) -> np.ndarray:
    """Cuthill-McKee visiting order (``order[new] = old``), not reversed."""
    adj = AdjacencyView.from_pattern(pattern)
    deg = adj.degree.astype(np.int64)
    by_degree = np.lexsort((np.arange(adj.n), deg)).astype(np.int64)
    return _cuthill_mckee(adj.offsets, adj.neighbors, deg, by_degree)


def rcm(pattern: ComplexSparseMatrix) -> Permutation:
    """Reverse Cuthill-McKee permutation of a structurally symmetric pattern.

    Each connected component is started from a George-Liu pseudo-peripheral
    node; neighbours join the queue by ascending degree, then index.
    """
    if pattern.nrows != pattern.ncols:
        raise SparseError("RCM needs a square pattern")
    if pattern.nrows == 0:
        return Permutation.identity(0)
    return Permutation.from_order(cuthill_mckee_order(pattern)[::-1].copy())


def reorder_system(c: ConstrainedLiouvillian) -> tuple[ConstrainedLiouvillian, Permutation]:
    """Apply RCM of ``pattern(L~ + L~^T)`` symmetrically to the whole system."""
    if c.permutation is not None:
        raise ValueError("system is already reordered")
    perm = rcm(symmetrized_pattern(c.constrained))
    return apply_ordering(c, perm), perm


def apply_ordering(c: ConstrainedLiouvillian, perm: Permutation) -> ConstrainedLiouvillian:
    """Permute a natural-order system with an arbitrary (e.g. external) ordering."""
    if c.permutation is not None:
        raise ValueError("system is already reordered")
    return replace(
        c,
        liouvillian=permute_symmetric(c.liouvillian, perm),
        trace_matrix=permute_symmetric(c.trace_matrix, perm),
        constrained=permute_symmetric(c.constrained, perm),
        rhs=perm.apply(c.rhs),
        permutation=perm,
    )
