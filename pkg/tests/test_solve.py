import math

import numpy as np
import pytest

from optosteady.fock import TruncationConfig
from optosteady.liouvillian import ModelParams, build_system, constrain, unvectorize, vectorize
from optosteady.precond import NumericError, complete_lu
from optosteady.solve import (
    EPS,
    Method,
    SolverConfig,
    SolverError,
    dense_solve,
    direct_lu_solve,
    effective_tolerance,
    gmres,
    inverse_power,
    solve_system,
    steadystate,
)
from optosteady.sparse import ComplexSparseMatrix, Permutation, identity, matvec, symmetrized_pattern
from optosteady.reorder import rcm

from conftest import fill_study_params, random_sparse
from test_liouvillian import qubit_decay


def small_params(nc=2, nm=4, **kw):
    base = dict(delta=-0.4, g0=0.3, drive=0.2, kappa=0.3, q_mech=20.0, n_th=0.7)
    base.update(kw)
    return ModelParams(trunc=TruncationConfig(nc, nm), **base)


# --------------------------------------------------------------------- config


def test_config_defaults_and_validation():
    c = SolverConfig()
    assert (c.restart, c.max_iterations, c.tolerance, c.method) == (10, 1000, 1e-15, Method.GMRES_ILU_RCM)
    for kw in (dict(restart=0), dict(tolerance=0.0), dict(max_iterations=0), dict(ordering="colamd")):
        with pytest.raises(ValueError):
            SolverConfig(**kw)
    assert SolverConfig(method="direct_lu").method is Method.DIRECT_LU


def test_effective_tolerance_floor():
    assert effective_tolerance(1e-15, 1.0) == 50 * EPS
    assert effective_tolerance(1e-6, 10.0) == 1e-6
    assert effective_tolerance(1e-15, math.nan) == 1e-15


# ---------------------------------------------------------------------- gmres


def test_gmres_identity():
    b = np.arange(1, 6) + 1j
    r = gmres(identity(5), b, None, SolverConfig(tolerance=1e-14))
    assert r.iterations == 1 and r.converged
    np.testing.assert_allclose(r.x, b)


def test_gmres_exact_preconditioner(rng):
    a = random_sparse(rng, 20, 0.3)
    b = rng.normal(size=20) + 1j * rng.normal(size=20)
    r = gmres(a, b, complete_lu(a), SolverConfig(tolerance=1e-14))
    assert r.converged and r.iterations == 1
    assert np.linalg.norm(a @ r.x - b) / np.linalg.norm(b) <= 1e-14


def test_gmres_unpreconditioned_restarts(rng):
    a = random_sparse(rng, 40, 0.1)
    b = rng.normal(size=40) + 0j
    r = gmres(a, b, None, SolverConfig(restart=5, tolerance=1e-12))
    assert r.converged and r.iterations > 5
    np.testing.assert_allclose(r.x, np.linalg.solve(a.todense(), b), atol=1e-10)
    assert all(h2 <= h1 * (1 + 1e-12) for h1, h2 in zip(r.history, r.history[1:]))


def test_gmres_iteration_cap_returns_best(rng):
    a = random_sparse(rng, 60, 0.2, diag=False) + identity(60)
    b = rng.normal(size=60) + 0j
    r = gmres(a, b, None, SolverConfig(restart=3, max_iterations=6, tolerance=1e-15))
    assert not r.converged and r.iterations == 6
    assert r.residual == min(r.history)


def test_gmres_happy_breakdown_flagged():
    a = ComplexSparseMatrix.from_dense(np.diag([1.0, 2.0, 1.0, 2.0]))
    r = gmres(a, np.ones(4, dtype=complex), None, SolverConfig(tolerance=1e-300))
    assert r.breakdown and r.iterations == 2
    np.testing.assert_allclose(r.x, [1, 0.5, 1, 0.5])


def test_gmres_zero_rhs():
    r = gmres(identity(3), np.zeros(3), None)
    assert r.converged and np.all(r.x == 0)


def test_gmres_nan_raises():
    a = ComplexSparseMatrix.from_dense([[1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(NumericError):
        gmres(a, np.array([np.nan, 1.0]), None)


# -------------------------------------------------------------- direct / dense


def test_direct_qubit_toy_exact():
    c = constrain(qubit_decay(), 2)
    x, fill, _ = direct_lu_solve(c.constrained, c.rhs)
    np.testing.assert_array_equal(unvectorize(x, 2), [[1, 0], [0, 0]])


def test_direct_tridiagonal_no_fill():
    n = 30
    i = np.arange(n)
    a = ComplexSparseMatrix.from_coo(
        np.r_[i, i[:-1], i[1:]], np.r_[i, i[1:], i[:-1]], np.r_[np.full(n, 4.0), np.ones(2 * n - 2)], (n, n)
    )
    x, fill, f = direct_lu_solve(a, np.ones(n))
    assert fill == pytest.approx(1.0) and f.fill_in_count == 0
    np.testing.assert_allclose(a @ x, np.ones(n), atol=1e-14)


def test_direct_natural_fill_grows_faster_than_rcm():
    nat, rc = [], []
    for nm in (4, 6, 8):
        a = build_system(fill_study_params(4, nm)).constrained
        nat.append(direct_lu_solve(a, np.ones(a.nrows))[1])
        rc.append(direct_lu_solve(a, np.ones(a.nrows), rcm(symmetrized_pattern(a)))[1])
    assert all(n > r for n, r in zip(nat, rc))
    assert np.all(np.diff(nat) > np.diff(rc))


def test_dense_solve_limit():
    with pytest.raises(ValueError):
        dense_solve(identity(10), np.ones(10), max_dim=5)


# ---------------------------------------------------------------- inverse power


def test_inverse_power_qubit():
    l = qubit_decay()
    r = inverse_power(l, 1e-15, SolverConfig(tolerance=1e-14))
    assert r.converged and abs(r.eigenvalue) < 1e-10
    v = r.vector / r.vector[0]
    np.testing.assert_allclose(v, [1, 0, 0, 0], atol=1e-13)


def test_inverse_power_diagonal_toy():
    r = inverse_power(ComplexSparseMatrix.from_dense(np.diag([0.0, -1.0])), 1e-15)
    assert r.iterations == 1
    np.testing.assert_allclose(np.abs(r.vector), [1, 0], atol=1e-14)


def test_inverse_power_matches_constrained_solution():
    c = build_system(small_params(2, 4))
    ip = solve_system(c, SolverConfig(method=Method.INVERSE_POWER))
    d = solve_system(c, SolverConfig(method=Method.DENSE_ORACLE))
    assert np.abs(ip.rho - d.rho).max() <= 1e-10


# ------------------------------------------------------------------ driver


ALL_METHODS = list(Method)


@pytest.mark.parametrize("method", ALL_METHODS)
def test_methods_converge_and_are_physical(method):
    res = steadystate(small_params(2, 5), SolverConfig(method=method))
    assert res.converged
    assert res.residual_norm <= res.tolerance
    assert abs(np.trace(res.rho) - 1) <= 1e-10
    assert np.abs(res.rho - res.rho.conj().T).max() <= 1e-10
    assert np.linalg.eigvalsh(res.rho).min() >= -1e-8
    assert res.method is method
    assert res.wall_time >= res.ordering_time >= 0


def test_methods_agree_pairwise():
    p = small_params(3, 4)
    sols = {m: steadystate(p, SolverConfig(method=m)).rho for m in Method}
    for m1 in Method:
        for m2 in Method:
            assert np.abs(sols[m1] - sols[m2]).max() <= 1e-10, (m1, m2)


def test_residual_invariant_in_original_frame():
    p = small_params(3, 5)
    c = build_system(p)
    res = solve_system(c)
    lv = matvec(c.liouvillian, vectorize(res.rho))
    linf = np.abs(c.liouvillian.todense()).sum(axis=1).max()
    assert np.abs(lv).max() <= 10 * res.tolerance * linf


def test_driven_cavity_occupation():
    p = ModelParams(delta=-0.3, g0=0.0, drive=0.1, kappa=0.5, q_mech=100.0, n_th=0.0, trunc=TruncationConfig(12, 2))
    res = steadystate(p)
    a = np.diag(np.sqrt(np.arange(1, 12)), 1)
    n_op = np.kron(a.T @ a, np.eye(2))
    n = np.trace(n_op @ res.rho).real
    assert n == pytest.approx(0.1**2 / (0.3**2 + 0.5**2 / 4), rel=1e-6)


def test_nth_placeholder_matches_zero():
    p = small_params(3, 10, n_th=0.0)
    r0 = steadystate(p, SolverConfig(method=Method.DIRECT_LU))
    r1 = steadystate(p.with_(n_th=1e-15), SolverConfig(method=Method.DIRECT_LU))
    assert np.abs(r0.rho - r1.rho).max() <= 1e-10


def test_external_permutation_used(rng):
    c = build_system(small_params(2, 3))
    perm = Permutation(rng.permutation(c.dim))
    res = solve_system(c, SolverConfig(), permutation=perm)
    assert res.permutation == perm and res.converged
    with pytest.raises(SolverError):
        solve_system(c, SolverConfig(), permutation=Permutation.identity(5))


def test_stage_labels_on_failure():
    c = constrain(ComplexSparseMatrix.from_dense(np.zeros((4, 4)) + np.diag([1, 0, 0, 1.0])), 2)
    with pytest.raises(SolverError) as exc:
        solve_system(c, SolverConfig(method=Method.DIRECT_LU))
    assert exc.value.stage == "factorization"
    with pytest.raises(SolverError) as exc:
        steadystate(small_params(2, 2), SolverConfig(method=Method.DENSE_ORACLE, dense_max_dim=3))
    assert exc.value.stage == "solve"


def test_rejects_reordered_system():
    from optosteady.reorder import reorder_system

    c, _ = reorder_system(build_system(small_params()))
    with pytest.raises(ValueError):
        solve_system(c)


def test_deterministic():
    p = small_params(2, 6)
    a = steadystate(p)
    b = steadystate(p)
    assert a.iterations == b.iterations
    np.testing.assert_array_equal(a.rho, b.rho)
