import numpy as np
import pytest

from optosteady.fock import TruncationConfig
from optosteady.liouvillian import ModelParams
from optosteady.sparse import ComplexSparseMatrix


def pytest_addoption(parser):
    parser.addoption("--extended", action="store_true", default=False, help="run the long-running tier")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--extended"):
        return
    skip = pytest.mark.skip(reason="extended tier: pass --extended to run")
    for item in items:
        if "extended" in item.keywords:
            item.add_marker(skip)


def random_sparse(rng, n, density=0.2, diag=True, m=None):
    """Random complex sparse matrix; with ``diag`` the diagonal is made dominant."""
    m = n if m is None else m
    mask = rng.random((n, m)) < density
    vals = (rng.normal(size=(n, m)) + 1j * rng.normal(size=(n, m))) * mask
    if diag and n == m:
        vals[np.arange(n), np.arange(n)] += n
    return ComplexSparseMatrix.from_dense(vals)


def fill_study_params(nc=4, nm=8, n_th=31.0):
    k = 0.05
    return ModelParams(delta=-k, g0=3 * k, drive=0.25, kappa=k, q_mech=1e4, n_th=n_th, trunc=TruncationConfig(nc, nm))


def sweep_study_params(nc=4, nm=40, delta=-1.0, n_th=3.0):
    k = 0.2
    return ModelParams(delta=delta, g0=2.5 * k, drive=0.1, kappa=k, q_mech=1e4, n_th=n_th, trunc=TruncationConfig(nc, nm))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# criterion number -> (passed, detail), filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
