"""Truncated Fock-basis operators for the cavity and mechanical modes.

The joint space is ordered cavity (x) mechanics, so the joint basis index of
``|n_c, n_m>`` is ``n_c * n_mech + n_m``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sparse import ComplexSparseMatrix, identity, kron


@dataclass(frozen=True)
class TruncationConfig:
    n_cavity: int
    n_mech: int

    def __post_init__(self):
        if self.n_cavity < 2 or self.n_mech < 2:
            raise ValueError(
                f"both truncations must be >= 2, got n_cavity={self.n_cavity}, n_mech={self.n_mech}"
            )

    @property
    def hilbert_dim(self) -> int:
        return self.n_cavity * self.n_mech

    @property
    def liouvillian_dim(self) -> int:
        return self.hilbert_dim**2


def destroy(n: int) -> ComplexSparseMatrix:
    """Annihilation operator on ``n`` Fock levels: ``sqrt(k)`` at ``(k-1, k)``."""
    if n < 2:
        raise ValueError(f"destroy needs at least 2 levels, got {n}")
    k = np.arange(1, n)
    return ComplexSparseMatrix.from_coo(k - 1, k, np.sqrt(k), (n, n))


def create(n: int) -> ComplexSparseMatrix:
    return destroy(n).adjoint()


def number(n: int) -> ComplexSparseMatrix:
    """``diag(0, 1, ..., n-1)`` built exactly (``sqrt(k)**2`` can miss ``k`` by an ulp)."""
    if n < 2:
        raise ValueError(f"number operator needs at least 2 levels, got {n}")
    k = np.arange(n)
    return ComplexSparseMatrix.from_coo(k, k, k.astype(float), (n, n))


def embed_cavity(op: ComplexSparseMatrix, trunc: TruncationConfig) -> ComplexSparseMatrix:
    if op.shape != (trunc.n_cavity, trunc.n_cavity):
        raise ValueError(f"cavity operator has shape {op.shape}, expected {trunc.n_cavity} levels")
    return kron(op, identity(trunc.n_mech))


def embed_mech(op: ComplexSparseMatrix, trunc: TruncationConfig) -> ComplexSparseMatrix:
    if op.shape != (trunc.n_mech, trunc.n_mech):
        raise ValueError(f"mechanical operator has shape {op.shape}, expected {trunc.n_mech} levels")
    return kron(identity(trunc.n_cavity), op)


def mode_operators(trunc: TruncationConfig) -> tuple[ComplexSparseMatrix, ComplexSparseMatrix]:
    """Joint-space annihilation operators ``(a, b)`` for cavity and mechanics."""
    return (
        embed_cavity(destroy(trunc.n_cavity), trunc),
        embed_mech(destroy(trunc.n_mech), trunc),
    )
