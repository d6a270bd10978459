import itertools

import numpy as np
import pytest
import scipy.sparse as sps
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse.csgraph import reverse_cuthill_mckee

from optosteady.liouvillian import build_system, constrain, unvectorize
from optosteady.reorder import AdjacencyView, apply_ordering, cuthill_mckee_order, rcm, reorder_system
from optosteady.sparse import (
    ComplexSparseMatrix,
    Permutation,
    SparseError,
    identity,
    permute_symmetric,
    structure_metrics,
    symmetrized_pattern,
)

from conftest import fill_study_params, random_sparse
from test_liouvillian import qubit_decay


def graph(n, edges):
    r = [i for i, j in edges] + [j for i, j in edges] + list(range(n))
    c = [j for i, j in edges] + [i for i, j in edges] + list(range(n))
    return ComplexSparseMatrix.from_coo(r, c, np.ones(len(r)), (n, n))


def bandwidth(a, perm=None):
    if perm is not None:
        a = permute_symmetric(a, perm)
    return structure_metrics(a).total_bandwidth


def test_path_graph_stays_optimal():
    a = graph(4, [(0, 1), (1, 2), (2, 3)])
    p = rcm(a)
    assert sorted(p.forward.tolist()) == [0, 1, 2, 3]
    m = structure_metrics(permute_symmetric(a, p))
    assert m.upper_bandwidth == 1 and m.lower_bandwidth == 1


def test_star_graph_against_exhaustive_minimum():
    a = graph(5, [(0, k) for k in range(1, 5)])
    d = a.todense() != 0
    best = min(
        max(abs(o.index(i) - o.index(j)) for i in range(5) for j in range(5) if d[i, j])
        for o in map(list, itertools.permutations(range(5)))
    )
    p = rcm(a)
    assert bandwidth(a, p) <= bandwidth(a)
    assert 0 < p.forward[0] < 4  # centre placed in the interior
    # RCM is a heuristic: it sits between the exhaustive optimum and natural order
    assert best == 2
    assert best <= structure_metrics(permute_symmetric(a, p)).upper_bandwidth <= 4


def test_disconnected_components_all_ordered():
    a = graph(7, [(0, 3), (3, 5), (1, 6), (2, 4)])
    p = rcm(a)
    assert sorted(p.forward.tolist()) == list(range(7))
    assert structure_metrics(permute_symmetric(a, p)).upper_bandwidth == 1


def test_pseudo_peripheral_start_and_tie_breaks():
    # cycle 0-1-2-3-4-5-0 with a tail 5-6.  The search starts at the
    # lowest-degree node 6 (5 levels), jumps to the deepest node 2, finds no
    # deeper structure and keeps 2 as the peripheral root.
    a = graph(7, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (5, 6)])
    order = cuthill_mckee_order(a)
    # equal-degree neighbours in ascending index
    assert order.tolist() == [2, 1, 3, 0, 4, 5, 6]


def test_adjacency_view_symmetric_no_loops(rng):
    a = symmetrized_pattern(random_sparse(rng, 30, 0.1))
    adj = AdjacencyView.from_pattern(a)
    assert adj.is_symmetric()
    rows = np.repeat(np.arange(adj.n), adj.degree)
    assert np.all(rows != adj.neighbors)


def test_non_square_raises():
    with pytest.raises(SparseError):
        rcm(ComplexSparseMatrix.from_coo([0], [1], [1.0], (2, 3)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 40), st.floats(0.02, 0.4))
def test_rcm_is_bijection_and_preserves_nnz(seed, n, density):
    rng = np.random.default_rng(seed)
    a = symmetrized_pattern(random_sparse(rng, n, density))
    p = rcm(a)
    assert np.array_equal(np.sort(p.forward), np.arange(n))
    b = permute_symmetric(a, p)
    assert b.nnz == a.nnz
    np.testing.assert_array_equal(np.sort_complex(b.diagonal()), np.sort_complex(a.diagonal()))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.integers(10, 60), st.integers(1, 4))
def test_rcm_recovers_scrambled_band(seed, n, half_band):
    # symmetric banded corpus: scrambled banded matrices, RCM never worse than natural
    rng = np.random.default_rng(seed)
    i, j = np.nonzero(np.abs(np.subtract.outer(np.arange(n), np.arange(n))) <= half_band)
    band = ComplexSparseMatrix.from_coo(i, j, np.ones(i.size), (n, n))
    assert bandwidth(band, rcm(band)) <= bandwidth(band)
    scrambled = permute_symmetric(band, Permutation(rng.permutation(n)))
    assert bandwidth(scrambled, rcm(scrambled)) <= 2 * (2 * half_band) + 1


def test_fig1_metrics_frozen():
    # values cross-checked against scipy's RCM on the same pattern
    a = build_system(fill_study_params()).constrained
    s = symmetrized_pattern(a)
    p = rcm(s)
    nat, new = structure_metrics(a), structure_metrics(permute_symmetric(a, p))
    assert (nat.total_bandwidth, nat.total_profile) == (1280, 413709)
    assert (new.total_bandwidth, new.total_profile) == (231, 163176)
    r, c, _ = s.to_coo()
    ref = reverse_cuthill_mckee(sps.csr_matrix((np.ones(r.size), (r, c)), shape=s.shape), symmetric_mode=True)
    ref_m = structure_metrics(permute_symmetric(a, Permutation.from_order(ref)))
    assert abs(ref_m.total_bandwidth - new.total_bandwidth) / new.total_bandwidth < 0.25


def test_reduction_trend_over_truncations():
    ratios = {}
    for nc in (2, 4):
        for nm in (8, 16, 32):
            a = build_system(fill_study_params(nc, nm)).constrained
            p = rcm(symmetrized_pattern(a))
            ratios[nc, nm] = bandwidth(a) / bandwidth(a, p)
    assert all(r > 1.5 for r in ratios.values())
    for nc in (2, 4):
        assert ratios[nc, 8] < ratios[nc, 16] < ratios[nc, 32]


def test_reorder_system_diagonal_toy():
    c = constrain(-1.0 * identity(4), 2)
    cp, perm = reorder_system(c)
    x = np.linalg.solve(cp.constrained.todense(), cp.rhs)
    y = np.linalg.solve(c.constrained.todense(), c.rhs)
    np.testing.assert_allclose(perm.unapply(x), y, atol=1e-15)


def test_reorder_qubit_toy_round_trip():
    c = constrain(qubit_decay(), 2)
    cp, perm = reorder_system(c)
    assert cp.permutation == perm
    x = perm.unapply(np.linalg.solve(cp.constrained.todense(), cp.rhs))
    y = np.linalg.solve(c.constrained.todense(), c.rhs)
    np.testing.assert_allclose(x, y, atol=1e-13)
    np.testing.assert_allclose(unvectorize(x, 2), [[1, 0], [0, 0]], atol=1e-13)
    with pytest.raises(ValueError):
        reorder_system(cp)


def test_permuted_small_systems_solve_identically(rng):
    for nc, nm in [(2, 2), (2, 3), (3, 3)]:
        c = build_system(fill_study_params(nc, nm))
        perm = Permutation(rng.permutation(c.dim))
        cp = apply_ordering(c, perm)
        x = perm.unapply(np.linalg.solve(cp.constrained.todense(), cp.rhs))
        y = np.linalg.solve(c.constrained.todense(), c.rhs)
        assert np.abs(x - y).max() <= 1e-12 * np.abs(y).max()
