import math

import numpy as np
import pytest

from optosteady.fock import TruncationConfig, create, destroy, embed_cavity, embed_mech, mode_operators, number
from optosteady.sparse import identity, matmul


def test_truncation_dims():
    t = TruncationConfig(3, 5)
    assert t.hilbert_dim == 15 and t.liouvillian_dim == 225


@pytest.mark.parametrize("nc,nm", [(1, 4), (4, 1), (0, 0)])
def test_truncation_rejects_small(nc, nm):
    with pytest.raises(ValueError):
        TruncationConfig(nc, nm)


def test_destroy_2():
    r, c, v = destroy(2).to_coo()
    assert list(zip(r, c, v)) == [(0, 1, 1.0)]


def test_destroy_3():
    d = destroy(3).todense()
    expect = np.zeros((3, 3))
    expect[0, 1], expect[1, 2] = 1.0, math.sqrt(2)
    np.testing.assert_array_equal(d, expect)


def test_number_from_product():
    a = destroy(4)
    np.testing.assert_allclose(matmul(a.adjoint(), a).todense(), np.diag([0, 1, 2, 3]), atol=1e-15)


@pytest.mark.parametrize("n", range(2, 12))
def test_destroy_nnz_and_number_exact(n):
    assert destroy(n).nnz == n - 1
    np.testing.assert_array_equal(number(n).todense(), np.diag(np.arange(n)))
    np.testing.assert_array_equal(create(n).todense(), destroy(n).todense().T)


def test_destroy_rejects_small():
    with pytest.raises(ValueError):
        destroy(1)


def test_embed_identity():
    t = TruncationConfig(3, 4)
    np.testing.assert_array_equal(embed_cavity(identity(3), t).todense(), np.eye(12))


def test_embed_cavity_destroy():
    t = TruncationConfig(2, 2)
    r, c, v = embed_cavity(destroy(2), t).to_coo()
    assert list(zip(r.tolist(), c.tolist())) == [(0, 2), (1, 3)]
    np.testing.assert_array_equal(v, [1.0, 1.0])


def test_embedded_modes_commute():
    t = TruncationConfig(3, 3)
    a, b = mode_operators(t)
    for x, y in [(a, b), (a, b.adjoint()), (a.adjoint(), b)]:
        comm = matmul(x, y) - matmul(y, x)
        assert comm.nnz == 0
        np.testing.assert_array_equal(x.todense() @ y.todense(), y.todense() @ x.todense())


def test_embed_dimension_mismatch():
    t = TruncationConfig(3, 4)
    with pytest.raises(ValueError):
        embed_cavity(destroy(4), t)
    with pytest.raises(ValueError):
        embed_mech(destroy(3), t)
