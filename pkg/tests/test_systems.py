import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from afflab.errors import InputError
from afflab.linalg import phi_s
from afflab.systems import (
    FAMILIES, Word, diagonal_family, entropy_divergence_witness, finite_system, load_system,
    no_equilibrium_constant, no_equilibrium_family, pathology_family, pathology_parameters,
    power_log_tail_upper, power_log_witness, power_tail_upper, similarity_family, system_from_json,
    validate,
)

# 1/Σ 1/(n log²(n+1)): exact sum to 10⁴ plus Euler-Maclaurin tail with mpmath quadrature, frozen
NO_EQ_C_ORACLE = 0.295182428075725


def brute_Z(mats, s, n):
    """Z_n by explicit product enumeration (no shared code with the word engine)."""
    import itertools
    total = 0.0
    for word in itertools.product(range(len(mats)), repeat=n):
        M = np.eye(mats[0].shape[0])
        for i in word:
            M = M @ mats[i]
        total += phi_s(M, s)
    return total


def test_validate_similarity_margin():
    rep = validate(similarity_family([1 / 3, 1 / 3]))
    assert rep.ok
    assert rep.margin == pytest.approx(2 / 3)


def test_validate_flags_singular_map():
    sysm = finite_system([np.diag([0.5, 0.5]), np.array([[0.5, 0.5], [0.5, 0.5]])])
    with pytest.raises(InputError, match="map 1"):
        validate(sysm)
    rep = validate(sysm, raise_on_error=False)
    assert not rep.ok and "map 1" in rep.problems[0]


def test_validate_flags_expanding_map():
    rep = validate(finite_system([np.diag([0.5, 1.2])]), raise_on_error=False)
    assert not rep.ok and "not < 1" in rep.problems[0]


def test_pathology_first_thousand_norms():
    fam = pathology_family(0.5, 0.5, 0.75)
    rep = validate(fam, sample_count=1000)
    assert rep.ok
    norms = np.linalg.norm(fam.linear_parts(1000), 2, axis=(1, 2))
    assert norms.max() < 0.5
    assert norms.max() <= fam.contraction_bound * (1 + 1e-12)


def test_pathology_t_and_geometric_identity():
    par = pathology_parameters(0.5, 0.5, 0.75, "infinite_pressure")
    t = par["t"]
    assert t == pytest.approx(2 * math.log(1 + 2 ** -0.5), rel=1e-15)
    # geometric closed form of Σ_k (α e^{-tk})^β
    total = 0.5 ** 0.5 * math.exp(-0.5 * t) / (1 - math.exp(-0.5 * t))
    assert total == pytest.approx(1.0, abs=1e-12)
    assert abs(t - 1.069590) < 2e-5


def test_pathology_norm_bound_up_to_a_million():
    fam = pathology_family(0.5, 0.5, 0.75)
    par = fam.params
    L = fam.linear_parts(10**6)
    k = np.arange(1, 10**6 + 1, dtype=float)
    row_sum = 0.5 * np.exp(-par["t"] * k) + par["eps"] * k ** (-1 / 0.75)
    a, b = L[:, 0, 0], L[:, 0, 1]
    # closed-form norm of [[a, b], [0, a]]
    norms = 0.5 * (np.sqrt(b ** 2 + 4 * a ** 2) + np.abs(b))
    assert np.all(norms <= row_sum * (1 + 1e-12))
    assert row_sum.max() < 0.5
    assert par["contraction_bound"] < 0.5


def test_pathology_convergence_threshold():
    fam = pathology_family(0.5, 0.5, 0.75)
    assert math.isfinite(fam.tail_phi_upper(0.76, 1000))
    assert fam.tail_phi_upper(0.74, 1000) == math.inf
    assert fam.divergence_witness(0.74, 1e6) is not None
    assert fam.divergence_witness(0.76, 1e6) is None


def test_pathology_rejects_bad_parameters():
    for args in [(1.2, 0.5, 0.75), (0.5, 0.5, 0.4), (0.5, 0.0, 0.75)]:
        with pytest.raises(InputError):
            pathology_family(*args)
    with pytest.raises(InputError):
        pathology_family(mode="bogus")


def test_pathology_negative_mode_offdiagonal():
    fam = pathology_family(0.5, 0.5, 0.75, "negative_pressure")
    L = fam.linear_parts(5)
    k = np.arange(1, 6, dtype=float)
    a = k ** (-4 / 3) * np.log(k + 1) ** (-8 / 3)
    assert L[:, 0, 1] / L[0, 0, 1] == pytest.approx(a / a[0], rel=1e-12)


def test_pathology_tail_bracket_consistency():
    fam = pathology_family(0.5, 0.5, 0.75)
    for s in (0.8, 0.9, 1.2, 1.8):
        prev = math.inf
        L = fam.linear_parts(fam.representable_limit(300))
        vals = np.array([phi_s(M, s) for M in L])
        for N in (10, 30, 100, 300):
            N = min(N, len(L))
            total = vals[:N].sum() + fam.tail_phi_upper(s, N)
            assert total <= prev * (1 + 1e-12)
            prev = total


def test_no_equilibrium_constant_matches_oracle():
    C, half_width, partial = no_equilibrium_constant()
    assert C == pytest.approx(NO_EQ_C_ORACLE, rel=1e-9)
    assert half_width < 1e-8
    M = 2 * 10**6
    lo, hi = C * (partial + 1 / math.log(M + 2)), C * (partial + 1 / math.log(M))
    assert lo <= 1.0 <= hi
    assert hi - lo < 2e-8


def test_no_equilibrium_entropy_witness_direct():
    C, _, _ = no_equilibrium_constant()
    out = entropy_divergence_witness(1.5)
    assert out["direct"]
    N = round(math.exp(out["log_N"]))
    n = np.arange(1, N + 1, dtype=float)
    a = C / (n * np.log1p(n) ** 2)
    assert math.fsum(-a * np.log(a)) > 1.5
    assert math.fsum((-a * np.log(a))[:-1]) <= 1.5


def test_no_equilibrium_entropy_witness_beyond_direct_range():
    import mpmath as mp
    C, _, _ = no_equilibrium_constant()
    out = entropy_divergence_witness(5.0)
    assert math.isfinite(out["log_N"]) and not out["direct"]
    # independent lower bound: partial sum plus the integral of the decreasing summand
    M = out["M"]
    f = lambda u: -C / mp.log(mp.e ** u + 1) ** 2 * mp.log(C / (mp.e ** u * mp.log(mp.e ** u + 1) ** 2))
    tail = mp.quad(f, [math.log(M + 1), out["log_N"]])
    assert out["partial_at_M"] + float(tail) > 5.0


def test_no_equilibrium_sum_is_one_and_threshold():
    fam = no_equilibrium_family()
    assert fam.tail_phi_upper(0.99, 100) == math.inf
    assert math.isfinite(fam.tail_phi_upper(1.0, 100))
    assert fam.divergence_witness(0.99, 1e6) is not None


def test_similarity_oracle():
    fam = similarity_family([1 / 3, 1 / 3])
    for s in (0.0, 0.5, 1.0):
        assert fam.pressure_oracle(s) == pytest.approx(math.log(2) - s * math.log(3), abs=1e-15)
    single = similarity_family([0.5])
    assert single.pressure_oracle(0.7) == pytest.approx(0.7 * math.log(0.5))


def test_diagonal_oracle_against_brute_force():
    fam = diagonal_family([[0.5, 0.25]] * 3)
    mats = fam.linear_parts()
    for s in (1.0, 1.3, 1.75, 2.0):
        assert fam.pressure_oracle(s) == pytest.approx(
            math.log(3) - math.log(2) - (s - 1) * math.log(4), abs=1e-14)
    for n in (1, 3, 5, 8):
        for s in (0.6, 1.5):
            Z = brute_Z(mats, s, n)
            assert math.log(Z) / n == pytest.approx(fam.pressure_oracle(s), rel=1e-12)


def test_diagonal_rejects_bad_entries():
    with pytest.raises(InputError):
        diagonal_family([[0.5, 1.0]])
    with pytest.raises(InputError):
        similarity_family([0.5, -0.1])


def test_countable_similarity_oracle():
    fam = similarity_family(base=0.5)
    s = 0.8
    direct = math.fsum(0.5 ** (s * (k + 1)) for k in range(1, 2000))
    assert fam.pressure_oracle(s) == pytest.approx(math.log(direct), rel=1e-12)


def test_word_validation():
    with pytest.raises(InputError):
        Word(())
    with pytest.raises(InputError):
        Word((0, -1))
    assert len(Word((0, 1)) + Word((2,))) == 3


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 2), min_size=1, max_size=6), st.lists(st.integers(0, 2), min_size=1, max_size=6),
       st.integers(0, 10**6))
def test_product_associates(w1, w2, seed):
    rng = np.random.default_rng(seed)
    fam = finite_system([rng.uniform(-0.5, 0.5, (2, 2)) + 0.3 * np.eye(2) for _ in range(3)])
    assert np.allclose(fam.product(w1 + w2), fam.product(w1) @ fam.product(w2), rtol=1e-12, atol=1e-15)


def test_affine_map_fixed_point():
    fam = similarity_family([0.5], translations=[[0.25]])
    (m,) = fam.maps()
    assert m.fixed_point() == pytest.approx([0.5])
    assert m(m.fixed_point()) == pytest.approx(m.fixed_point())


def test_truncation_respects_representable_limit():
    fam = pathology_family()
    sub = fam.truncate(10**4)
    assert sub.is_finite
    assert sub.size == fam.representable_limit(10**4)
    assert sub.size < 10**4
    assert sub.extras["truncation_requested"] == 10**4


def test_json_round_trip(tmp_path):
    fam = finite_system([np.diag([0.5, 0.3]), [[0.2, 0.1], [0.0, 0.4]]], [[0, 0], [1, 0]])
    path = tmp_path / "s.json"
    path.write_text(json.dumps(fam.to_json()))
    back = load_system(path)
    assert np.array_equal(back.linear_parts(), fam.linear_parts())
    assert np.array_equal(back.translations(), fam.translations())
    for name in FAMILIES:
        obj = {"dim": 2, "norm": "operator-euclidean", "kind": "family",
               "family": {"name": name, "params": {"entries": [[0.5, 0.25]] * 3} if name == "diagonal"
                          else {"ratios": [0.5, 0.5], "dim": 2} if name == "similarity" else {}}}
        if name == "no_equilibrium":
            obj["dim"] = 1
        spec = system_from_json(obj)
        assert system_from_json(spec.to_json()).to_json() == spec.to_json()


@pytest.mark.parametrize("obj", [
    {"kind": "finite"},
    {"dim": 2, "kind": "finite", "maps": []},
    {"dim": 2, "kind": "finite", "maps": [{"matrix": [[1, 0, 0]]}]},
    {"dim": 2, "kind": "family", "family": {"name": "nope"}},
    {"dim": 1, "kind": "family", "family": {"name": "pathology"}},
    {"dim": 2, "kind": "whatever"},
    {"dim": 2, "kind": "finite", "norm": "max", "maps": [{"matrix": [[0.5, 0], [0, 0.5]]}]},
])
def test_bad_json_rejected(obj):
    with pytest.raises(InputError):
        system_from_json(obj)


def test_load_system_missing_file(tmp_path):
    with pytest.raises(InputError):
        load_system(tmp_path / "missing.json")


def test_integral_tail_helpers():
    for p in (1.2, 2.0, 3.5):
        for N in (10, 100):
            direct = math.fsum(k ** -p for k in range(N + 1, 10**6))
            assert direct <= power_tail_upper(p, N)
    assert power_tail_upper(0.9, 10) == math.inf
    direct = math.fsum(1 / (k * math.log(k + 1) ** 2) for k in range(101, 10**6))
    assert direct <= power_log_tail_upper(1.0, 2.0, 100)
    assert power_log_tail_upper(1.0, 0.5, 100) == math.inf


def test_power_witness_is_sufficient():
    import mpmath as mp
    for p, q in ((0.5, 0.0), (0.8, 1.0), (0.9, 0.5)):
        logN = power_log_witness(p, q, 1.0, 50.0)
        # Σ_{k≤N} f(k) ≥ ∫_1^{N+1} f for decreasing f, evaluated by quadrature
        f = lambda u: mp.e ** ((1 - p) * u) * mp.log(mp.e ** u + 1) ** -q
        assert float(mp.quad(f, [0, logN])) > 50.0
    assert power_log_witness(1.1, 0.0, 1.0, 10.0) is None
