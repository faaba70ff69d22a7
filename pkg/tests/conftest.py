import numpy as np
import pytest

from pbitnqs.rbm import RbmParams


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_rbm(rng, nv, nh, scale=0.3):
    return RbmParams(rng.normal(0, scale, nv), rng.normal(0, scale, nh),
                     rng.normal(0, scale, (nv, nh)))


def total_variation(p, q):
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, (ok, detail) in RESULTS.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
