import numpy as np
import pytest

from afflab.systems import finite_system


def random_matrix(rng, d, lo=-3.0, hi=0.0):
    """Random orthogonal × log-uniform singular values × random orthogonal."""
    U, _ = np.linalg.qr(rng.standard_normal((d, d)))
    V, _ = np.linalg.qr(rng.standard_normal((d, d)))
    sv = np.sort(np.exp(rng.uniform(lo, hi, d)))[::-1]
    return U @ np.diag(sv) @ V.T


def random_contraction(rng, d, lo=-2.5, hi=-0.1):
    return random_matrix(rng, d, lo, hi)


def random_system(rng, d, count, lo=-2.5, hi=-0.2):
    mats = [random_contraction(rng, d, lo, hi) for _ in range(count)]
    return finite_system(mats, rng.uniform(-1, 1, (count, d)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_block_tuple(rng, dims, count=3, cond_range=(0.0, 1.0)):
    """count maps X⁻¹ diag(B_1,…,B_k) X with generic blocks; returns (mats, X)."""
    d = sum(dims)
    X = random_matrix(rng, d, -cond_range[1], cond_range[0])
    Xi = np.linalg.inv(X)
    mats = []
    for _ in range(count):
        D = np.zeros((d, d))
        o = 0
        for m in dims:
            D[o:o + m, o:o + m] = rng.standard_normal((m, m))
            o += m
        mats.append(Xi @ D @ X)
    mats = np.stack(mats)
    mats *= 0.6 / np.max(np.linalg.norm(mats, 2, axis=(1, 2)))
    return mats, X


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.RESULTS:
        terminalreporter.write_line(line)
