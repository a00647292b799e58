import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from afflab.errors import InputError
from afflab.linalg import (
    Subspace, abs_eigenvalues, exterior_power, log_phi_from_logsv, log_singular_values_batch,
    phi_s, phi_via_exterior, restricted_norm, svd,
)

from conftest import random_matrix

FIXED_4x4 = np.array([[0.9, -0.3, 0.2, 0.1],
                      [0.4, 0.7, -0.5, 0.3],
                      [-0.2, 0.6, 0.8, -0.4],
                      [0.1, -0.1, 0.3, 1.1]])
# square roots of eigvalsh(MᵀM), frozen
FIXED_4x4_SV = [1.3419382710693004, 0.9986955476901862, 0.9482616903961337, 0.873274668240413]


def test_svd_identity_and_diagonal():
    assert svd(np.eye(3)).values.tolist() == pytest.approx([1, 1, 1], abs=1e-15)
    assert svd(np.diag([3.0, -2.0])).values.tolist() == pytest.approx([3, 2], rel=1e-15)


def test_svd_matches_frozen_eigen_oracle():
    assert svd(FIXED_4x4).values == pytest.approx(FIXED_4x4_SV, rel=1e-13)


def test_svd_matches_eigvalsh_on_random(rng):
    for _ in range(50):
        M = rng.standard_normal((4, 4))
        oracle = np.sqrt(np.linalg.eigvalsh(M.T @ M))[::-1]
        assert svd(M).values == pytest.approx(oracle, rel=1e-9)


def test_svd_rejects_bad_input():
    with pytest.raises(InputError):
        svd(np.array([[1.0, np.nan], [0.0, 1.0]]))
    with pytest.raises(InputError):
        svd(np.zeros((2, 2)))
    with pytest.raises(InputError):
        svd(np.ones((2, 3)))


def test_svd_reconstruction_and_norm(rng):
    for d in (1, 2, 3, 5, 8):
        M = random_matrix(rng, d, -4, 1)
        sd = svd(M)
        assert np.prod(sd.values) == pytest.approx(abs(np.linalg.det(M)), rel=1e-10)
        assert sd.norm == pytest.approx(np.linalg.norm(M, 2), rel=1e-12)
        assert np.all(np.diff(sd.values) <= 0)


def test_svd_handles_huge_scale_spread():
    # squared entries would overflow without the pre-scaling
    assert svd(np.diag([1e200, 3e199])).values.tolist() == pytest.approx([1e200, 3e199], rel=1e-14)
    assert svd(np.diag([1e-60, 1e60])).values.tolist() == pytest.approx([1e60, 1e-60], rel=1e-14)


def test_svd_smallest_value_below_squared_underflow():
    sv = svd(np.array([[1.0, 1.0], [0.0, 1e-200]])).values
    assert sv[0] == pytest.approx(math.sqrt(2), rel=1e-14)
    assert sv[1] == pytest.approx(1e-200 / math.sqrt(2), rel=1e-12)


def test_phi_s_examples():
    D = np.diag([0.5, 1 / 3])
    assert phi_s(D, 0) == 1.0
    assert phi_s(D, 1.5) == pytest.approx(0.5 * (1 / 3) ** 0.5, rel=1e-14)
    assert phi_s(D, 1.5) == pytest.approx(0.288675, abs=1e-6)
    assert phi_s(D, 3) == pytest.approx((1 / 6) ** 1.5, rel=1e-14)
    assert phi_s(D, 3) == pytest.approx(0.0680414, abs=1e-7)
    with pytest.raises(InputError):
        phi_s(D, -0.1)


def test_phi_s_continuous_at_integers(rng):
    M = random_matrix(rng, 3)
    for k in (1, 2, 3):
        left = phi_s(M, k - 1e-9)
        right = phi_s(M, k + 1e-9)
        assert left == pytest.approx(right, rel=1e-7)


def test_exterior_power_extremes(rng):
    M = random_matrix(rng, 4)
    assert exterior_power(M, 4)[0, 0] == pytest.approx(np.linalg.det(M), rel=1e-12)
    assert np.array_equal(exterior_power(M, 1), M)
    with pytest.raises(InputError):
        exterior_power(M, 5)
    with pytest.raises(InputError):
        exterior_power(M, 0)


def test_exterior_power_minor_order():
    M = np.arange(1.0, 10.0).reshape(3, 3) + np.eye(3)
    E = exterior_power(M, 2)
    # row pair (0, 2), column pair (1, 2)
    expected = M[0, 1] * M[2, 2] - M[0, 2] * M[2, 1]
    assert E[1, 2] == pytest.approx(expected)


def test_exterior_power_multiplicative(rng):
    for _ in range(20):
        A, B = random_matrix(rng, 4), random_matrix(rng, 4)
        for k in (1, 2, 3):
            lhs = exterior_power(A @ B, k)
            rhs = exterior_power(A, k) @ exterior_power(B, k)
            assert np.allclose(lhs, rhs, rtol=1e-10, atol=1e-13)


def test_exterior_norm_is_product_of_singular_values(rng):
    for _ in range(20):
        M = rng.standard_normal((4, 4))
        sv = svd(M).values
        assert np.linalg.norm(exterior_power(M, 2), 2) == pytest.approx(sv[0] * sv[1], rel=1e-10)


def test_phi_via_exterior_examples(rng):
    D = np.diag([0.5, 1 / 3])
    assert phi_via_exterior(D, 1.5) == pytest.approx(phi_s(D, 1.5), rel=1e-12)
    M = random_matrix(rng, 3)
    assert phi_via_exterior(M, 2.0) == pytest.approx(np.linalg.norm(exterior_power(M, 2), 2), rel=1e-12)
    with pytest.raises(InputError):
        phi_via_exterior(M, 3.0)


def test_phi_via_exterior_sweep(rng):
    grid = np.arange(0.25, 3.0, 0.25)
    worst = 0.0
    for _ in range(100):
        M = random_matrix(rng, 3, -3, 1)
        for s in grid:
            a, b = phi_via_exterior(M, s), phi_s(M, s)
            worst = max(worst, abs(a - b) / b)
    assert worst < 1e-10


def test_restricted_norm_examples(rng):
    M = random_matrix(rng, 3)
    assert restricted_norm(M, Subspace.full(3)) == pytest.approx(np.linalg.norm(M, 2), rel=1e-12)
    D = np.diag([0.7, -2.0])
    assert restricted_norm(D, Subspace.span([1.0, 0.0])) == pytest.approx(0.7)
    with pytest.raises(InputError):
        restricted_norm(M, Subspace.full(2))


def test_restricted_norm_sampled_oracle(rng):
    M = rng.standard_normal((4, 4))
    W = Subspace.span(rng.standard_normal((4, 2)))
    coef = rng.standard_normal((2, 10**4))
    w = W.basis @ coef
    w /= np.linalg.norm(w, axis=0)
    sampled = np.max(np.linalg.norm(M @ w, axis=0))
    val = restricted_norm(M, W)
    assert sampled <= val * (1 + 1e-12)
    assert val - sampled < 1e-6 * val
    # refine the sampled maximiser by power iteration on the compressed operator
    C = M @ W.basis
    v = coef[:, np.argmax(np.linalg.norm(M @ w, axis=0))]
    for _ in range(200):
        v = C.T @ (C @ v)
        v /= np.linalg.norm(v)
    assert np.linalg.norm(C @ v) == pytest.approx(val, abs=1e-6)


def test_subspace_span_and_distance():
    W = Subspace.span([[1.0, 1.0], [0.0, 0.0], [0.0, 1e-14]])
    assert W.rank == 1
    assert W.contains([3.0, 0.0, 0.0])
    assert not W.contains([0.0, 1.0, 0.0])
    V = Subspace.span([[1.0], [0.0], [0.0]])
    assert W.distance(V) < 1e-12
    with pytest.raises(InputError):
        Subspace.span(np.zeros((3, 1)))


def test_batched_log_singular_values_agree(rng):
    for d in (1, 2, 3, 4):
        mats = np.stack([random_matrix(rng, d, -6, 0) for _ in range(30)])
        logsv = log_singular_values_batch(mats)
        for M, row in zip(mats, logsv):
            assert np.exp(row) == pytest.approx(svd(M).values, rel=1e-8)
        for s in (0.0, 0.4, 1.0, 1.7, d + 0.5):
            got = np.exp(log_phi_from_logsv(logsv, s))
            ref = [phi_s(M, s) for M in mats]
            assert got == pytest.approx(ref, rel=1e-8)


def test_batched_small_singular_value_keeps_relative_accuracy():
    M = np.array([[1.0, 1.0], [0.0, 1e-12]])
    logsv = log_singular_values_batch(M[None])[0]
    assert math.exp(logsv[1]) == pytest.approx(1e-12 / math.sqrt(2), rel=1e-10)


# -- properties ---------------------------------------------------------------

def _mat(d):
    return st.integers(0, 2**32 - 1).map(lambda seed: random_matrix(np.random.default_rng(seed), d, -3, 1))


@settings(max_examples=60, deadline=None)
@given(d=st.integers(1, 4), data=st.data(), s=st.floats(0, 5))
def test_property_submultiplicative(d, data, s):
    A, B = data.draw(_mat(d)), data.draw(_mat(d))
    assert phi_s(A @ B, s) <= phi_s(A, s) * phi_s(B, s) * (1 + 1e-12)


@settings(max_examples=60, deadline=None)
@given(d=st.integers(1, 4), data=st.data(), s=st.floats(0, 4))
def test_property_sigma_d_companion(d, data, s):
    A, B = data.draw(_mat(d)), data.draw(_mat(d))
    sd = svd(B).values[-1]
    assert phi_s(A, s) * sd ** s <= phi_s(A @ B, s) * (1 + 1e-12)


@settings(max_examples=60, deadline=None)
@given(d=st.integers(1, 4), data=st.data())
def test_property_weyl(d, data):
    A = data.draw(_mat(d))
    lam = np.cumprod(abs_eigenvalues(A))
    sig = np.cumprod(svd(A).values)
    assert np.all(lam <= sig * (1 + 1e-12))


@settings(max_examples=60, deadline=None)
@given(d=st.integers(2, 4), data=st.data(), s=st.floats(0, 4))
def test_property_block_inequality(d, data, s):
    M2 = data.draw(_mat(d))
    k = data.draw(st.integers(1, d - 1))
    M2[k:, :k] = 0.0
    M1 = M2.copy()
    M1[:k, k:] = 0.0
    assert phi_s(M1, s) <= phi_s(M2, s) * (1 + 1e-12)


@settings(max_examples=60, deadline=None)
@given(d=st.integers(2, 4), data=st.data(), s=st.floats(0, 4))
def test_property_interpolation(d, data, s):
    A = data.draw(_mat(d))
    s = min(s, d - 1e-9)
    lo, delta = math.floor(s), s - math.floor(s)
    rhs = phi_s(A, lo) ** (1 - delta) * phi_s(A, lo + 1) ** delta
    assert phi_s(A, s) == pytest.approx(rhs, rel=1e-12)
