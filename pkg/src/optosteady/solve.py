"""Linear solvers for the trace-constrained steady-state system and the driver."""

from __future__ import annotations

import enum
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .liouvillian import ConstrainedLiouvillian, ModelParams, build_system, unvectorize
from .precond import (
    IluConfig,
    IluFactors,
    IluWorkspace,
    NumericError,
    apply_preconditioner,
    complete_lu,
    ilutp,
)
from .reorder import apply_ordering, rcm
from .sparse import (
    ComplexSparseMatrix,
    Permutation,
    SparseError,
    dense_from_sparse,
    identity,
    matvec,
    permute_symmetric,
    symmetrized_pattern,
)

log = logging.getLogger(__name__)

EPS = np.finfo(float).eps


class Method(str, enum.Enum):
    GMRES_ILU_RCM = "gmres_ilu_rcm"
    GMRES_ILU_NATURAL = "gmres_ilu_natural"
    DIRECT_LU = "direct_lu"
    DENSE_ORACLE = "dense_oracle"
    INVERSE_POWER = "inverse_power"


class SolverError(RuntimeError):
    """A solver stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class SolverConfig:
    method: Method = Method.GMRES_ILU_RCM
    restart: int = 10
    max_iterations: int = 1000
    tolerance: float = 1e-15
    ilu: IluConfig = field(default_factory=IluConfig)
    # ordering used by direct_lu and inverse_power: "rcm" or "natural"
    ordering: str = "rcm"
    shift: complex = 1e-15
    dense_max_dim: int = 4096

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if self.restart < 1:
            raise ValueError("restart must be >= 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")
        if self.ordering not in ("rcm", "natural"):
            raise ValueError(f"unknown ordering {self.ordering!r}")


@dataclass
class GmresResult:
    x: np.ndarray
    iterations: int
    residual: float
    converged: bool
    history: list[float]
    breakdown: bool = False


def effective_tolerance(tol: float, cond: float) -> float:
    """Requested relative residual, floored at ``50 eps`` times the condition estimate."""
    if not math.isfinite(cond):
        return tol
    return max(tol, 50.0 * EPS * cond)


def gmres(
    a: ComplexSparseMatrix,
    b: np.ndarray,
    m: IluFactors | None,
    cfg: SolverConfig = SolverConfig(),
    x0: np.ndarray | None = None,
    tol: float | None = None,
) -> GmresResult:
    """Left-preconditioned restarted GMRES on ``M^-1 A x = M^-1 b``.

    Arnoldi uses modified Gram-Schmidt and the small least-squares problem is
    reduced with complex Givens rotations.  Convergence is declared on the
    true relative residual ``||b - A x|| / ||b||``; ``tol`` defaults to
    ``cfg.tolerance``.  On non-convergence the best iterate seen is returned.
    """
    n = a.nrows
    b = np.ascontiguousarray(b, dtype=np.complex128)
    if a.ncols != n or b.shape != (n,):
        raise SparseError("gmres: inconsistent dimensions")
    if m is not None and m.n != n:
        raise SparseError("gmres: preconditioner size mismatch")
    tol = cfg.tolerance if tol is None else tol
    restart = cfg.restart
    work = IluWorkspace(m) if m is not None else None

    def precondition(v, out):
        if m is None:
            out[:] = v
            return out
        return apply_preconditioner(m, v, work, out)

    bnorm = np.linalg.norm(b)
    x = np.zeros(n, dtype=np.complex128) if x0 is None else np.array(x0, dtype=np.complex128)
    if bnorm == 0:
        return GmresResult(np.zeros(n, dtype=np.complex128), 0, 0.0, True, [0.0])

    V = np.empty((restart + 1, n), dtype=np.complex128)
    H = np.zeros((restart + 1, restart), dtype=np.complex128)
    cs = np.zeros(restart, dtype=np.float64)
    sn = np.zeros(restart, dtype=np.complex128)
    g = np.zeros(restart + 1, dtype=np.complex128)
    av = np.empty(n, dtype=np.complex128)
    r = np.empty(n, dtype=np.complex128)
    z = np.empty(n, dtype=np.complex128)

    mb_norm = np.linalg.norm(precondition(b, z))
    history: list[float] = []
    best_x, best_res = x.copy(), math.inf
    iters = 0
    prev_beta = math.inf
    breakdown = False

    while True:
        matvec(a, x, av)
        np.subtract(b, av, out=r)
        res = np.linalg.norm(r) / bnorm
        if not math.isfinite(res):
            raise NumericError("gmres: residual is not finite")
        history.append(float(res))
        if res < best_res:
            best_res, best_x = res, x.copy()
        if res <= tol or iters >= cfg.max_iterations or breakdown:
            break
        precondition(r, z)
        beta = np.linalg.norm(z)
        if beta == 0:
            break
        if beta > 1.5 * prev_beta and beta > math.sqrt(EPS) * mb_norm:
            raise NumericError(
                f"gmres: preconditioned residual grew across restart ({prev_beta:.3e} -> {beta:.3e})"
            )
        prev_beta = beta
        # the Givens estimate tracks ||M^-1 r||; rescale it to the true residual
        ratio = res * bnorm / beta
        V[0] = z / beta
        g[:] = 0
        g[0] = beta
        H[:] = 0
        k = 0
        for j in range(restart):
            matvec(a, V[j], av)
            w = precondition(av, V[j + 1])
            for i in range(j + 1):
                h = np.vdot(V[i], w)
                H[i, j] = h
                w -= h * V[i]
            hn = np.linalg.norm(w)
            H[j + 1, j] = hn
            iters += 1
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -np.conj(sn[i]) * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            cs[j], sn[j], H[j, j] = _givens(H[j, j], H[j + 1, j])
            H[j + 1, j] = 0
            g[j + 1] = -np.conj(sn[j]) * g[j]
            g[j] = cs[j] * g[j]
            k = j + 1
            if hn == 0:
                breakdown = True
                break
            w /= hn
            if abs(g[j + 1]) * ratio <= 0.5 * tol * bnorm or iters >= cfg.max_iterations:
                break
        y = _upper_solve(H[:k, :k], g[:k])
        x += y @ V[:k]
        if not np.all(np.isfinite(x)):
            raise NumericError("gmres: iterate is not finite")

    return GmresResult(best_x, iters, float(best_res), best_res <= tol, history, breakdown)


def _givens(f, g):
    """Rotation ``(c, s, r)`` with ``[c s; -conj(s) c] [f; g] = [r; 0]``, c real."""
    if g == 0:
        return 1.0, 0j, f
    if f == 0:
        return 0.0, np.conj(g) / abs(g), abs(g)
    af = abs(f)
    nrm = math.hypot(af, abs(g))
    c = af / nrm
    s = (f / af) * np.conj(g) / nrm
    return c, s, (f / af) * nrm


def _upper_solve(R, g):
    k = R.shape[0]
    y = np.zeros(k, dtype=np.complex128)
    for i in range(k - 1, -1, -1):
        y[i] = (g[i] - R[i, i + 1 :] @ y[i + 1 :]) / R[i, i]
    return y


def direct_lu_solve(
    a: ComplexSparseMatrix,
    b: np.ndarray,
    ordering: Permutation | None = None,
    pivot_threshold: float = 1.0,
) -> tuple[np.ndarray, float, IluFactors]:
    """Complete sparse LU of ``a`` (optionally symmetrically permuted first).

    Returns the solution in the caller's frame, the fill factor and the factors.
    """
    if ordering is not None:
        pa = permute_symmetric(a, ordering)
        f = complete_lu(pa, pivot_threshold)
        x = ordering.unapply(apply_preconditioner(f, ordering.apply(b)))
    else:
        f = complete_lu(a, pivot_threshold)
        x = apply_preconditioner(f, b)
    return x, f.fill_factor_achieved, f


def dense_solve(a: ComplexSparseMatrix, b: np.ndarray, max_dim: int = 4096) -> tuple[np.ndarray, float]:
    """Dense LAPACK solve; also returns ``||A^-1 e||_inf``."""
    if a.nrows > max_dim:
        raise SparseError(f"dense oracle limited to dimension {max_dim}, got {a.nrows}")
    d = dense_from_sparse(a)
    sol = np.linalg.solve(d, np.column_stack([b, np.ones(a.nrows)]))
    return sol[:, 0], float(np.abs(sol[:, 1]).max())


@dataclass
class EigenResult:
    vector: np.ndarray
    eigenvalue: complex
    iterations: int
    converged: bool


def inverse_power(
    l: ComplexSparseMatrix,
    shift: complex = 1e-15,
    cfg: SolverConfig = SolverConfig(),
    x0: np.ndarray | None = None,
    ordering: Permutation | None = None,
) -> EigenResult:
    """Shifted inverse iteration ``x <- normalize((L - shift I)^-1 x)``.

    The shifted matrix is factorized once (complete LU, in ``ordering`` if
    given).  Stops when the eigen-residual ``||Lx - lambda x|| / ||L||_inf`` or
    the Rayleigh-quotient change drops below ``max(tolerance, 64 eps)``.
    """
    n = l.nrows
    if l.ncols != n:
        raise SparseError("inverse_power needs a square matrix")
    shifted = l - shift * identity(n)
    if ordering is not None:
        f = complete_lu(permute_symmetric(shifted, ordering), cfg.ilu.pivot_threshold)

        def inner(v):
            return ordering.unapply(apply_preconditioner(f, ordering.apply(v)))
    else:
        f = complete_lu(shifted, cfg.ilu.pivot_threshold)

        def inner(v):
            return apply_preconditioner(f, v)

    lnorm = float(np.abs(l.values).max()) if l.nnz else 1.0
    lnorm = max(_inf_norm(l), lnorm)
    tol = max(cfg.tolerance, 64 * EPS)
    x = np.ones(n, dtype=np.complex128) if x0 is None else np.array(x0, dtype=np.complex128)
    x /= np.linalg.norm(x)
    lam = np.vdot(x, matvec(l, x))
    for it in range(1, cfg.max_iterations + 1):
        y = inner(x)
        if not np.all(np.isfinite(y)):
            raise NumericError("inverse_power: inner solve produced non-finite values")
        x = y / np.linalg.norm(y)
        lx = matvec(l, x)
        new = np.vdot(x, lx)
        eres = np.linalg.norm(lx - new * x) / lnorm
        if eres <= tol or abs(new - lam) <= tol * lnorm:
            return EigenResult(x, complex(new), it, True)
        lam = new
    return EigenResult(x, complex(lam), cfg.max_iterations, False)


def _inf_norm(a: ComplexSparseMatrix) -> float:
    if a.nnz == 0:
        return 0.0
    return float(np.add.reduceat(np.abs(a.values), a.row_offsets[:-1][np.diff(a.row_offsets) > 0]).max())


@dataclass
class SteadyStateResult:
    rho: np.ndarray
    residual_norm: float
    iterations: int
    wall_time: float
    fill_factor: float
    condest: float
    method: Method
    converged: bool
    tolerance: float
    ordering_time: float = 0.0
    factor_time: float = 0.0
    solve_time: float = 0.0
    permutation: Permutation | None = None
    raw_solution: np.ndarray | None = None
    history: list[float] = field(default_factory=list)


def solve_system(
    system: ConstrainedLiouvillian,
    cfg: SolverConfig = SolverConfig(),
    permutation: Permutation | None = None,
) -> SteadyStateResult:
    """Solve a natural-order constrained system with the configured method.

    ``permutation`` replaces the method's own ordering (e.g. an externally
    computed one).  Timing covers ordering, factorization and solve.
    """
    if system.permutation is not None:
        raise ValueError("solve_system expects the natural-order system")
    method = cfg.method
    a0, b0 = system.constrained, system.rhs
    n = a0.nrows
    fill, cond, iters, history = math.nan, math.nan, 1, []

    t0 = time.perf_counter()
    stage = "ordering"
    try:
        perm = permutation
        if perm is None:
            wants_rcm = method is Method.GMRES_ILU_RCM or (
                method in (Method.DIRECT_LU, Method.INVERSE_POWER) and cfg.ordering == "rcm"
            )
            if wants_rcm:
                perm = rcm(symmetrized_pattern(a0))
        if perm is not None and perm.size != n:
            raise SparseError(f"permutation of size {perm.size} for system of size {n}")
        t1 = time.perf_counter()

        if method in (Method.GMRES_ILU_RCM, Method.GMRES_ILU_NATURAL):
            sys_ = apply_ordering(system, perm) if perm is not None else system
            stage = "factorization"
            f = ilutp(sys_.constrained, cfg.ilu)
            fill, cond = f.fill_factor_achieved, f.condest
            t2 = time.perf_counter()
            stage = "solve"
            tol = effective_tolerance(cfg.tolerance, cond)
            gr = gmres(sys_.constrained, sys_.rhs, f, cfg, tol=tol)
            x = perm.unapply(gr.x) if perm is not None else gr.x
            iters, history = gr.iterations, gr.history
        elif method is Method.DIRECT_LU:
            stage = "factorization"
            a = permute_symmetric(a0, perm) if perm is not None else a0
            f = complete_lu(a, cfg.ilu.pivot_threshold)
            fill, cond = f.fill_factor_achieved, f.condest
            t2 = time.perf_counter()
            stage = "solve"
            b = perm.apply(b0) if perm is not None else b0
            y = apply_preconditioner(f, b)
            x = perm.unapply(y) if perm is not None else y
        elif method is Method.DENSE_ORACLE:
            t2 = t1
            stage = "solve"
            x, cond = dense_solve(a0, b0, cfg.dense_max_dim)
            fill = n * n / a0.nnz
        elif method is Method.INVERSE_POWER:
            t2 = t1
            stage = "solve"
            er = inverse_power(system.liouvillian, cfg.shift, cfg, x0=_mixed_guess(system.hilbert_dim), ordering=perm)
            iters = er.iterations
            x = er.vector / _trace_of(er.vector, system.hilbert_dim)
        else:  # pragma: no cover
            raise ValueError(method)
    except (ArithmeticError, SparseError, np.linalg.LinAlgError) as exc:
        raise SolverError(stage, exc) from exc
    t3 = time.perf_counter()

    r = matvec(a0, x) - b0
    residual = float(np.linalg.norm(r) / np.linalg.norm(b0))
    if method is Method.INVERSE_POWER:
        # no condition estimate of L~ here: use a backward-error scale instead
        tol = max(cfg.tolerance, 64 * EPS * _inf_norm(a0) * float(np.linalg.norm(x) / np.linalg.norm(b0)))
    else:
        tol = effective_tolerance(cfg.tolerance, cond)
    rho = finalize_density_matrix(unvectorize(x, system.hilbert_dim))
    return SteadyStateResult(
        rho=rho,
        residual_norm=residual,
        iterations=iters,
        wall_time=t3 - t0,
        fill_factor=fill,
        condest=cond,
        method=method,
        converged=bool(residual <= tol),
        tolerance=tol,
        ordering_time=t1 - t0,
        factor_time=t2 - t1,
        solve_time=t3 - t2,
        permutation=perm,
        raw_solution=x,
        history=history,
    )


def _mixed_guess(dim: int) -> np.ndarray:
    v = np.zeros(dim * dim, dtype=np.complex128)
    v[np.arange(dim) * (dim + 1)] = 1.0 / dim
    return v


def _trace_of(v: np.ndarray, dim: int) -> complex:
    return complex(v[np.arange(dim) * (dim + 1)].sum())


def finalize_density_matrix(rho: np.ndarray) -> np.ndarray:
    """Hermitize and renormalize to unit trace."""
    rho = 0.5 * (rho + rho.conj().T)
    return rho / np.trace(rho).real


def steadystate(
    p: ModelParams,
    cfg: SolverConfig = SolverConfig(),
    permutation: Permutation | None = None,
) -> SteadyStateResult:
    """Build ``L~`` for ``p`` and solve it; assembly time is not included in ``wall_time``."""
    try:
        system = build_system(p)
    except (ValueError, SparseError) as exc:
        raise SolverError("assembly", exc) from exc
    return solve_system(system, cfg, permutation)
