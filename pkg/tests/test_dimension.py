import math

import numpy as np
import pytest

from afflab.dimension import (
    affinity_dimension, box_counting, chaos_game_sample, dimension_report, ldim_curve,
)
from afflab.errors import InputError
from afflab.pressure import pressure_bracket
from afflab.systems import (
    diagonal_family, finite_system, pathology_family, similarity_family,
)

from conftest import random_block_tuple, random_system

CANTOR_DIM = math.log(2) / math.log(3)
GOLDEN_DIM = math.log2((1 + math.sqrt(5)) / 2)  # root of Σ_{k≥1} 2^{-s(k+1)} = 1


def test_similarity_dimension():
    r = affinity_dimension(similarity_family([1 / 3, 1 / 3]), tol=1e-9)
    assert r.converged
    assert r.lower - 1e-9 <= CANTOR_DIM <= r.upper + 1e-9
    assert r.width <= 2e-9


def test_aligned_diagonal_dimension():
    r = affinity_dimension(diagonal_family([[0.5, 0.25]] * 3), tol=1e-6)
    target = 1 + math.log(1.5) / math.log(4)
    assert r.converged and r.contains(target) and r.width <= 1e-6


def test_single_map_dimension_zero():
    r = affinity_dimension(similarity_family([0.5]))
    assert r.lower == r.upper == 0.0


def test_interval_is_sound_on_random_systems():
    rng = np.random.default_rng(3)
    for _ in range(5):
        sysm = random_system(rng, 2, 3)
        r = affinity_dimension(sysm, tol=1e-3, n_max=8)
        # every returned end carries a certified sign
        if r.lower > 0:
            assert pressure_bracket(sysm, r.lower * (1 - 1e-9), n_max=r.n_used).upper >= 0
        assert pressure_bracket(sysm, r.upper + 1e-9, n_max=12).lower_certified <= 0 or \
            pressure_bracket(sysm, r.upper + 1e-9, n_max=12).upper < 0


def test_block_comparison_matches_direct():
    rng = np.random.default_rng(8)
    mats, _ = random_block_tuple(rng, [2, 1], count=3)
    sysm = finite_system(mats)
    a = affinity_dimension(sysm, tol=1e-3, use_blocks=True)
    b = affinity_dimension(sysm, tol=1e-3, use_blocks=False)
    assert a.lower <= b.upper + 1e-9 and b.lower <= a.upper + 1e-9
    assert any("block-diagonal" in n for n in a.notes)


def test_budget_limited_result_is_an_interval():
    rng = np.random.default_rng(4)
    sysm = random_system(rng, 2, 3)
    r = affinity_dimension(sysm, tol=1e-9, n_max=3, auto_certificate=False)
    assert not r.converged and r.lower < r.upper
    assert any("level cap" in n for n in r.notes) and not r.budget_limited
    tight = affinity_dimension(sysm, tol=1e-9, budget=100, auto_certificate=False)
    assert tight.budget_limited and tight.n_used <= 4
    assert tight.lower <= r.upper and r.lower <= tight.upper


def test_bad_tolerance():
    with pytest.raises(InputError):
        affinity_dimension(similarity_family([0.5, 0.5]), tol=0)


def test_ldim_curve_similarity_family():
    fam = similarity_family(base=0.5)
    curve = ldim_curve(fam, [2, 5, 10, 40], tol=1e-8)
    vals = [v for _, v in curve]
    assert all(a <= b for a, b in zip(vals, vals[1:]))
    assert vals[-1] <= GOLDEN_DIM + 1e-8
    assert vals[-1] == pytest.approx(GOLDEN_DIM, abs=1e-6)
    # J_2 = {1/4, 1/8}: root of 4^{-s} + 8^{-s} = 1
    x = 0.5 ** vals[0]
    assert x ** 2 + x ** 3 == pytest.approx(1.0, abs=1e-7)


def test_ldim_curve_finite_and_bad_schedule():
    fam = similarity_family([1 / 3, 1 / 3])
    ((tag, v),) = ldim_curve(fam, [1])
    assert tag == "all" and v == pytest.approx(CANTOR_DIM, abs=1e-6)
    with pytest.raises(InputError):
        ldim_curve(similarity_family(base=0.5), [10, 5])


def test_pathology_ldim_curve_bounded_by_beta():
    curve = ldim_curve(pathology_family(), [10, 100, 1000], tol=1e-4)
    vals = [v for _, v in curve]
    assert all(a <= b for a, b in zip(vals, vals[1:]))
    assert max(vals) <= 0.5 + 1e-3
    assert vals[-1] > 0.49


def test_dimension_report_finite_flags():
    rep = dimension_report(similarity_family([1 / 3, 1 / 3]), tol=1e-6)
    assert "dim_aff exists: finite system" in rep.flags
    assert rep.dim_aff[0] <= CANTOR_DIM <= rep.dim_aff[1]
    assert rep.to_json()["theta_interval"] == [0.0, 0.0]


def test_dimension_report_countable_theta_below():
    rep = dimension_report(similarity_family(base=0.5), tol=1e-4, N_schedule=[10, 40], N=40)
    assert any("theta < udim" in f for f in rep.flags)
    assert rep.dim_aff is not None
    assert rep.dim_aff[0] - 1e-4 <= GOLDEN_DIM <= rep.dim_aff[1] + 1e-4


def test_chaos_game_single_map_fixed_point():
    fam = finite_system([[[0.5, 0.1], [0.0, 0.25]]], [[1.0, 2.0]])
    pts = chaos_game_sample(fam, 50, seed=1)
    fp = fam.maps()[0].fixed_point()
    assert np.allclose(pts, fp, atol=1e-11)


def test_chaos_game_cantor_digits():
    fam = similarity_family([1 / 3, 1 / 3], translations=[[0.0], [2 / 3]])
    pts = chaos_game_sample(fam, 20000, seed=7)[:, 0]
    assert pts.min() >= 0 and pts.max() <= 1
    for k in range(1, 21):
        frac = np.mod(pts * 3.0 ** (k - 1), 1.0)
        # the k-th ternary digit is 1 exactly when frac lies in (1/3, 2/3)
        assert not np.any((frac > 1 / 3 + 1e-6) & (frac < 2 / 3 - 1e-6))


def test_chaos_game_ball_bound_and_reproducibility():
    rng = np.random.default_rng(9)
    sysm = random_system(rng, 3, 4)
    pts = chaos_game_sample(sysm, 40000, seed=3)
    c = np.max(np.linalg.norm(sysm.linear_parts(), 2, axis=(1, 2)))
    R = np.max(np.linalg.norm(sysm.translations(), axis=1)) / (1 - c)
    assert np.max(np.linalg.norm(pts, axis=1)) <= R * (1 + 1e-12)
    again = chaos_game_sample(sysm, 40000, seed=3)
    assert np.array_equal(pts, again)
    assert not np.array_equal(pts, chaos_game_sample(sysm, 40000, seed=4))


def test_chaos_game_countable_default_weights():
    pts = chaos_game_sample(similarity_family(base=0.5), 2000, seed=2, N=30)
    assert pts.shape == (2000, 1)
    assert np.all((pts >= -1e-12) & (pts <= 1 + 1e-12))


def test_chaos_game_rejects_bad_distribution():
    with pytest.raises(InputError):
        chaos_game_sample(similarity_family([0.5, 0.5]), 10, index_distribution=[1.0])
    with pytest.raises(InputError):
        chaos_game_sample(similarity_family([0.5, 0.5]), 0)


def test_box_counting_cantor():
    fam = similarity_family([1 / 3, 1 / 3], translations=[[0.0], [2 / 3]])
    bc = box_counting(chaos_game_sample(fam, 10**5, seed=1))
    assert bc.estimate == pytest.approx(CANTOR_DIM, abs=0.05)
    assert len(bc.scales) >= 4 and bc.scales[0] / bc.scales[-1] >= 10


def test_box_counting_uniform_square():
    pts = np.random.default_rng(0).random((10**5, 2))
    bc = box_counting(pts)
    assert bc.estimate == pytest.approx(2.0, abs=0.05)


def test_box_counting_errors():
    with pytest.raises(InputError):
        box_counting(np.zeros((10**4, 2)))
    with pytest.raises(InputError):
        box_counting(np.random.default_rng(0).random((100, 2)))
    with pytest.raises(InputError):
        box_counting(np.random.default_rng(0).random((10**4, 2)), scale_schedule=[0.5, 0.25, 0.1])


def test_box_count_below_udim_on_bundled_examples():
    cases = [similarity_family([1 / 3, 1 / 3], translations=[[0.0], [2 / 3]]),
             diagonal_family([[0.5, 0.25]] * 3, translations=[[0, 0], [0.5, 0], [0, 0.75]])]
    for fam in cases:
        rep = dimension_report(fam, tol=1e-4, boxcount_points=10**5, seed=5)
        assert rep.boxcount[0] <= rep.udim_bracket.upper + 0.15
        assert not any("exceeds" in f for f in rep.flags)
