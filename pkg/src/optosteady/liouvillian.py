"""Optomechanical Hamiltonian, Lindblad superoperator and the trace-constrained system.

Superoperators act on column-stacked density matrices, so ``vec(A rho B) =
(B^T (x) A) vec(rho)`` and the vector index of ``rho[r, c]`` is ``r + c * dim``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .fock import TruncationConfig, embed_cavity, embed_mech, mode_operators, number
from .sparse import (
    ComplexSparseMatrix,
    Permutation,
    identity,
    kron,
    matmul,
    transpose,
)


@dataclass(frozen=True)
class ModelParams:
    """Physical parameters in units of the mechanical frequency."""

    delta: float
    g0: float
    drive: float
    kappa: float
    q_mech: float
    n_th: float
    trunc: TruncationConfig
    omega_m: float = 1.0

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if not self.q_mech > 0:
            raise ValueError(f"q_mech must be positive, got {self.q_mech}")
        if not self.n_th >= 0:
            raise ValueError(f"n_th must be non-negative, got {self.n_th}")

    @property
    def gamma_m(self) -> float:
        return self.omega_m / self.q_mech

    def with_(self, **changes) -> "ModelParams":
        """Copy with fields replaced; ``n_cavity``/``n_mech`` edit the truncation."""
        nc = changes.pop("n_cavity", self.trunc.n_cavity)
        nm = changes.pop("n_mech", self.trunc.n_mech)
        if "trunc" not in changes:
            changes["trunc"] = TruncationConfig(int(nc), int(nm))
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class ConstrainedLiouvillian:
    """``L~ = L + w T`` together with its parts and right-hand side.

    ``permutation`` is ``None`` in the natural (Fock) ordering.  After
    reordering, every matrix and ``rhs`` live in the permuted frame and
    ``permutation.unapply`` maps a permuted solution back.
    """

    liouvillian: ComplexSparseMatrix
    trace_matrix: ComplexSparseMatrix
    weight: complex
    constrained: ComplexSparseMatrix
    rhs: np.ndarray
    hilbert_dim: int
    weight_fallback: bool = False
    permutation: Permutation | None = field(default=None)

    @property
    def dim(self) -> int:
        return self.constrained.nrows


def build_hamiltonian(p: ModelParams) -> ComplexSparseMatrix:
    """``-Delta a^+a + w_m b^+b + g0 (b + b^+) a^+a + E (a + a^+)``."""
    a, b = mode_operators(p.trunc)
    ad, bd = a.adjoint(), b.adjoint()
    na = embed_cavity(number(p.trunc.n_cavity), p.trunc)
    nb = embed_mech(number(p.trunc.n_mech), p.trunc)
    return (
        (-p.delta) * na
        + p.omega_m * nb
        + p.g0 * matmul(b + bd, na)
        + p.drive * (a + ad)
    )


def collapse_channels(p: ModelParams) -> list[tuple[ComplexSparseMatrix, float]]:
    a, b = mode_operators(p.trunc)
    return [
        (a, p.kappa),
        (b, p.gamma_m * (1.0 + p.n_th)),
        (b.adjoint(), p.gamma_m * p.n_th),
    ]


def lindblad_superoperator(h: ComplexSparseMatrix, channels) -> ComplexSparseMatrix:
    """Matrix of ``-i[H, .] + sum_k r_k D[C_k, .]`` under column stacking.

    Channels with rate exactly zero contribute no structure.
    """
    n = h.nrows
    eye = identity(n)
    terms = [(-1j) * kron(eye, h), 1j * kron(transpose(h), eye)]
    for c, rate in channels:
        if rate == 0:
            continue
        cdc = matmul(c.adjoint(), c)
        terms.append(rate * kron(c.conj(), c))
        terms.append((-0.5 * rate) * kron(eye, cdc))
        terms.append((-0.5 * rate) * kron(transpose(cdc), eye))
    rows, cols, vals = zip(*(t.to_coo() for t in terms))
    return ComplexSparseMatrix.from_coo(
        np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), (n * n, n * n)
    )


def build_liouvillian(p: ModelParams) -> ComplexSparseMatrix:
    return lindblad_superoperator(build_hamiltonian(p), collapse_channels(p))


def trace_matrix(hilbert_dim: int) -> ComplexSparseMatrix:
    """Ones in row 0 at the vector positions of the diagonal of rho."""
    n = hilbert_dim
    k = np.arange(n)
    return ComplexSparseMatrix.from_coo(np.zeros(n, dtype=np.int64), k * (n + 1), np.ones(n), (n * n, n * n))


def trace_row(hilbert_dim: int) -> np.ndarray:
    """Dense vector ``e`` with ``e . vec(rho) = Tr rho``."""
    e = np.zeros(hilbert_dim**2)
    e[np.arange(hilbert_dim) * (hilbert_dim + 1)] = 1.0
    return e


def constrain(l: ComplexSparseMatrix, hilbert_dim: int) -> ConstrainedLiouvillian:
    """Add the unit-trace condition with weight equal to the mean diagonal of ``l``.

    If that mean is negligible relative to the diagonal magnitudes the weight
    falls back to ``mean(|L_kk|)`` and ``weight_fallback`` is set.
    """
    n2 = hilbert_dim**2
    if l.shape != (n2, n2):
        raise ValueError(f"Liouvillian has shape {l.shape}, expected ({n2}, {n2})")
    diag = l.diagonal()
    w = complex(diag.sum() / n2)
    mag = float(np.abs(diag).mean())
    fallback = False
    if abs(w) < 1e3 * np.finfo(float).eps * mag or w == 0:
        w = complex(mag) if mag > 0 else 1.0 + 0j
        fallback = True
    t = trace_matrix(hilbert_dim)
    rhs = np.zeros(n2, dtype=np.complex128)
    rhs[0] = w
    return ConstrainedLiouvillian(
        liouvillian=l,
        trace_matrix=t,
        weight=w,
        constrained=l + w * t,
        rhs=rhs,
        hilbert_dim=hilbert_dim,
        weight_fallback=fallback,
    )


def build_system(p: ModelParams) -> ConstrainedLiouvillian:
    return constrain(build_liouvillian(p), p.trunc.hilbert_dim)


def vectorize(rho: np.ndarray) -> np.ndarray:
    return np.asarray(rho).reshape(-1, order="F")


def unvectorize(v: np.ndarray, hilbert_dim: int) -> np.ndarray:
    return np.asarray(v).reshape((hilbert_dim, hilbert_dim), order="F")
