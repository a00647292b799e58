"""Affinity dimension brackets, finite-subsystem exhaustion and attractor sampling.

Root finding never trusts a point estimate. Every pressure bracket [L, U] at s
narrows the root interval through the slope bounds
    P(s + t) ≤ P(s) − κ t,   P(s + t) ≥ P(s) + t log min σ_d(A_i),
with κ = −log max ‖A_i‖; when the sign of P(s) is unknown this still confines
the root to [s + L/κ, s + U/κ].
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import BudgetError, InputError, UnsupportedError
from .linalg import log_phi_from_logsv, log_singular_values_batch
from .pressure import (ThetaInterval, default_budget, engine_for, pressure_bracket, theta_estimate,
                       triangular_diagonal)
from .potentials import certificate_search
from .reducibility import detriangularise
from .systems import SystemSpec

log = logging.getLogger(__name__)

SMALL_LEVEL_WORDS = 1 << 16
ROUNDING_GUARD = 1e-13


@dataclass
class DimensionInterval:
    lower: float
    upper: float
    converged: bool
    evaluations: int = 0
    n_used: int = 0
    N_used: object = None
    notes: list = field(default_factory=list)
    budget_limited: bool = False

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, x: float, slack: float = 0.0) -> bool:
        return self.lower - slack <= x <= self.upper + slack

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lower + self.upper)


def _slopes(system: SystemSpec, N: Optional[int] = None) -> tuple:
    """(κ, λ): pressure decreases at rate ≥ κ and at most λ (λ = inf for countable systems)."""
    if not system.is_finite:
        # the supremum runs over the whole alphabet, so only the declared bound is safe
        if not system.contraction_bound:
            raise UnsupportedError("countable systems need a declared contraction bound")
        return -math.log(system.contraction_bound), math.inf
    logsv = log_singular_values_batch(system.linear_parts())
    return -float(np.max(logsv[:, 0])), -float(np.min(logsv[:, -1]))


def _comparison_system(system: SystemSpec, use_blocks: bool, seed: int, notes: list) -> SystemSpec:
    if not system.is_finite or not use_blocks or system.dim == 1:
        return system
    if triangular_diagonal(system.linear_parts()) is not None:
        return system
    bs = detriangularise(system, seed=seed)
    if len(bs.block_dims) > 1 and not bs.ill_conditioned:
        notes.append(f"working on block-diagonal comparison system, blocks {bs.block_dims}, "
                     f"cond {bs.cond:.3g}")
        return bs.block_diagonal_system()
    return system


def _certificate(system: SystemSpec, s: float):
    # checked words stay below ~300 so a search costs well under a second
    checked = 1
    while checked < 4 and system.size ** (checked + 1) <= 300:
        checked += 1
    return certificate_search(system, s, max_F_len=2 if system.size <= 4 else 1, checked_len=checked)


def _initial_level(count: int, n_max: int) -> int:
    n = 1
    while n < n_max and count ** (n + 1) <= SMALL_LEVEL_WORDS:
        n += 1
    return n


def affinity_dimension(system: SystemSpec, tol: float = 1e-6, budget: Optional[int] = None,
                       n_max: int = 12, N: Optional[int] = None, threads: int = 1,
                       use_blocks: bool = True, seed: int = 0, max_evals: int = 200,
                       auto_certificate: bool = True, escalation_words: int = 1 << 22) -> DimensionInterval:
    """Interval containing inf{s ≥ 0 : P(s) < 0}."""
    if tol <= 0:
        raise InputError("tol must be positive")
    budget = default_budget() if budget is None else int(budget)
    notes = []
    if system.is_finite and system.size == 1:
        # Z_n(0) = 1 and P(s) ≤ s log‖A‖ < 0 for s > 0
        return DimensionInterval(0.0, 0.0, True, notes=["single map: dimension 0"])
    if not system.is_finite:
        N = 1000 if N is None else int(N)
        cap = system.representable_limit(N)
        if cap < N:
            notes.append(f"truncation capped at N={cap} (smallest singular value underflows beyond)")
        N_cur = min(N, 100) if N > 100 else N
    else:
        N_cur = None
    work = _comparison_system(system, use_blocks, seed, notes)
    kappa, lam = _slopes(work, N_cur)
    alphabet = work.size if work.is_finite else work.representable_limit(N_cur)
    n = _initial_level(alphabet, n_max)

    lo, hi = 0.0, math.inf
    evals = 0
    # find a certified upper end
    s = float(work.dim)
    while hi == math.inf:
        br = pressure_bracket(work, s, n_max=n, N=N_cur, threads=threads, budget=budget)
        evals += 1
        if br.upper < 0:
            hi = s
        else:
            s *= 2
            if s > 64 * work.dim:
                raise UnsupportedError("pressure never certified negative; check the contraction bound")
    converged = budget_limited = False
    while evals < max_evals:
        if hi - lo <= tol:
            converged = True
            break
        mid = 0.5 * (lo + hi)
        br = pressure_bracket(work, mid, n_max=n, N=N_cur, threads=threads, budget=budget)
        evals += 1
        if auto_certificate and work.is_finite and not br.infinite and br.upper >= 0 \
                and (br.lower_certified is None or br.lower_certified <= 0):
            cert = _certificate(work, mid)
            if cert is not None:
                br = pressure_bracket(work, mid, n_max=n, threads=threads, budget=budget, certificate=cert)
        U = br.upper
        L = br.lower_certified if br.lower_certified is not None else -math.inf
        if br.infinite:
            lo = max(lo, mid)
            continue
        new_hi = mid + (U / lam if U < 0 else U / kappa) if math.isfinite(U) else hi
        if U < 0 and not math.isfinite(lam):
            new_hi = mid
        if L > 0:
            new_lo = mid + (L / lam if math.isfinite(lam) else 0.0)
        elif math.isfinite(L):
            new_lo = mid + L / kappa
        else:
            new_lo = lo
        lo, hi = max(lo, new_lo), min(hi, new_hi)
        if lo > hi:
            # can only happen through rounding in an exact bracket
            lo, hi = min(lo, hi), max(lo, hi)
        if U >= 0 and L <= 0 and (U - L) / kappa > tol:
            escalated = False
            if not work.is_finite and N_cur < N and alphabet < work.representable_limit(N):
                N_cur = min(N, N_cur * 10)
                alphabet = work.representable_limit(N_cur)
                n = _initial_level(alphabet, n_max)
                escalated = True
            elif n < n_max and alphabet ** (n + 1) <= min(budget, escalation_words):
                n += 1
                escalated = True
            if not escalated:
                if br.n < n or (n < n_max and alphabet ** (n + 1) > budget):
                    budget_limited = True
                    notes.append(f"budget reached at n={br.n}, N={N_cur}; bracket width {U - L:.3g} at s={mid:.6g}")
                else:
                    notes.append(f"level cap reached at n={n}, N={N_cur}; bracket width {U - L:.3g} at s={mid:.6g}")
                break
    if hi - lo <= tol:
        converged = True
    # outward guard for rounding in log-sum-exp and the slope division
    guard = ROUNDING_GUARD * max(1.0, hi)
    lo, hi = max(0.0, lo - guard), hi + guard
    return DimensionInterval(lo, hi, converged, evals, min(n, br.n), "all" if work.is_finite else N_cur, notes,
                             budget_limited)


@dataclass
class DimensionReport:
    udim_bracket: DimensionInterval
    ldim_curve: list
    theta_interval: ThetaInterval
    boxcount: Optional[tuple] = None
    flags: list = field(default_factory=list)
    dim_aff: Optional[tuple] = None
    completely_reducible: Optional[bool] = None

    def to_json(self) -> dict:
        return {"udim_bracket": [self.udim_bracket.lower, self.udim_bracket.upper],
                "udim_converged": self.udim_bracket.converged,
                "ldim_curve": [[N, v] for N, v in self.ldim_curve],
                "theta_interval": [self.theta_interval.lower, self.theta_interval.upper],
                "boxcount": None if self.boxcount is None else list(self.boxcount),
                "flags": list(self.flags),
                "dim_aff": None if self.dim_aff is None else list(self.dim_aff),
                "notes": list(self.udim_bracket.notes)}


def ldim_curve(system: SystemSpec, N_schedule, tol: float = 1e-6, n_max: int = 8,
               budget: Optional[int] = None) -> list:
    """(N, affinity dimension of the truncation J_N) for each N; monotone in N."""
    if system.is_finite:
        r = affinity_dimension(system, tol=tol, n_max=n_max, budget=budget)
        return [("all", r.midpoint)]
    sched = [int(N) for N in N_schedule]
    if any(b <= a for a, b in zip(sched, sched[1:])):
        raise InputError("N schedule must be increasing")
    out = []
    prev = -math.inf
    for N in sched:
        sub = system.truncate(N)
        r = affinity_dimension(sub, tol=tol, n_max=n_max, budget=budget)
        # the finite subsystem's dimension: report the certified lower end so the curve stays a lower bound
        val = max(r.lower, prev)
        out.append((N, val))
        prev = val
    return out


def dimension_report(system: SystemSpec, tol: float = 1e-3, N_schedule=None, N: Optional[int] = None,
                     budget: Optional[int] = None, boxcount_points: int = 0, seed: int = 0,
                     n_max: int = 8) -> DimensionReport:
    udim = affinity_dimension(system, tol=tol, budget=budget, N=N, n_max=n_max)
    flags = []
    comp = None
    if system.is_finite:
        theta = ThetaInterval(0.0, 0.0, exact=True)
        curve = [("all", udim.midpoint)]
        dim_aff = (udim.lower, udim.upper)
        flags.append("dim_aff exists: finite system")
    else:
        try:
            theta = theta_estimate(system, tol=min(tol, 1e-2))
        except UnsupportedError:
            theta = ThetaInterval(0.0, math.inf, notes=["no oracles"])
        sched = N_schedule or [10, 100, 1000, N or 10**4]
        curve = ldim_curve(system, sched, tol=tol, n_max=n_max, budget=budget)
        dim_aff = None
        if udim.lower <= theta.upper + tol:
            flags.append("dim_aff may not exist: upper affinity dimension bracket meets the finiteness "
                         f"threshold interval [{theta.lower:.6g}, {theta.upper:.6g}]")
            flags.append(f"ldim/udim gap: ldim >= {curve[-1][1]:.6g}, udim in "
                         f"[{udim.lower:.6g}, {udim.upper:.6g}]")
        elif theta.upper < udim.lower:
            dim_aff = (udim.lower, udim.upper)
            flags.append("dim_aff exists: theta < udim certified")
    bc = None
    if boxcount_points:
        pts = chaos_game_sample(system, boxcount_points, seed, N=N)
        est = box_counting(pts)
        bc = (est.estimate, est.scales)
        if est.estimate > udim.upper + 0.15:
            flags.append("box-count estimate exceeds the udim bracket by more than 0.15")
    return DimensionReport(udim, curve, theta, bc, flags, dim_aff, comp)


def _sampling_weights(system: SystemSpec, N: int, s_hat: Optional[float]) -> np.ndarray:
    L = system.linear_parts(N)
    if s_hat is None:
        s_hat = affinity_dimension(system.truncate(N) if not system.is_finite else system,
                                   tol=1e-3, n_max=4).midpoint
    logw = log_phi_from_logsv(log_singular_values_batch(L), s_hat)
    w = np.exp(logw - logw.max())
    return w / w.sum()


CHUNK = 1 << 14


def chaos_game_sample(system: SystemSpec, count: int, seed: int = 0, index_distribution=None,
                      N: Optional[int] = None, s_hat: Optional[float] = None,
                      threshold: float = 1e-12) -> np.ndarray:
    """`count` attractor points x = lim T_{i_1}∘⋯∘T_{i_n}(0), reproducible from seed."""
    if count < 1:
        raise InputError("count must be positive")
    if system.is_finite:
        size = system.size
        p = np.full(size, 1.0 / size) if index_distribution is None else np.asarray(index_distribution, float)
    else:
        size = system.representable_limit(1000 if N is None else int(N))
        p = _sampling_weights(system, size, s_hat) if index_distribution is None \
            else np.asarray(index_distribution, float)[:size]
    if p.shape != (size,) or np.any(p < 0) or p.sum() <= 0:
        raise InputError("index distribution must be non-negative over the alphabet")
    p = p / p.sum()
    L = system.linear_parts(None if system.is_finite else size)
    v = system.translations(None if system.is_finite else size)
    c = max(float(np.max(np.linalg.norm(L, ord=2, axis=(1, 2)))), 1e-300)
    radius = float(np.max(np.linalg.norm(v, axis=1))) / (1.0 - c) if c < 1 else 1.0
    steps = max(1, int(math.ceil(math.log(threshold / max(radius, 1e-300)) / math.log(c))) + 1) if c < 1 else 200
    seqs = np.random.SeedSequence(seed).spawn((count + CHUNK - 1) // CHUNK)
    out = []
    for j, ss in enumerate(seqs):
        m = min(CHUNK, count - j * CHUNK)
        rng = np.random.default_rng(ss)
        idx = rng.choice(size, size=(m, steps), p=p)
        x = np.zeros((m, system.dim))
        M = np.broadcast_to(np.eye(system.dim), (m, system.dim, system.dim)).copy()
        for k in range(steps):
            i = idx[:, k]
            x += np.einsum("pij,pj->pi", M, v[i])
            M = M @ L[i]
        out.append(x)
    return np.vstack(out)


@dataclass
class BoxCount:
    estimate: float
    scales: list
    counts: list
    residual: float


def _occupied(P: np.ndarray, lo: np.ndarray, diam: float, eps: float) -> int:
    # the last cell is closed so points on the upper edge do not open a new box
    top = max(int(math.ceil(diam / eps)) - 1, 0)
    idx = np.minimum(np.floor((P - lo) / eps).astype(np.int64), top)
    return len(np.unique(idx, axis=0))


def box_counting(points, scale_schedule=None, min_points: int = 10**4) -> BoxCount:
    """Least-squares slope of log N(ε) against log(1/ε)."""
    P = np.asarray(points, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    if P.shape[0] < min_points:
        raise InputError(f"box counting needs at least {min_points} points")
    lo = P.min(axis=0)
    diam = float(np.max(P.max(axis=0) - lo))
    if not np.isfinite(diam) or diam == 0:
        raise InputError("degenerate point set")
    if scale_schedule is None:
        scales = []
        k = 1
        while True:
            eps = diam * 2.0 ** (-k)
            n = _occupied(P, lo, diam, eps)
            if n > P.shape[0] / 20 or k > 40:
                break
            scales.append(eps)
            k += 1
    else:
        scales = sorted((float(e) for e in scale_schedule), reverse=True)
    if len(scales) < 4 or scales[0] / scales[-1] < 10:
        raise InputError("need at least 4 scales spanning a decade")
    counts = [_occupied(P, lo, diam, e) for e in scales]
    x = np.log(1.0 / np.array(scales))
    y = np.log(np.array(counts, dtype=float))
    A = np.vstack([x, np.ones_like(x)]).T
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(res[0] / len(x))) if len(res) else 0.0
    return BoxCount(float(coef[0]), scales, counts, resid)
