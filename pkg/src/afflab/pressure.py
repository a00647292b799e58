"""Partition sums, certified pressure brackets and the finiteness threshold.

The word engine enumerates 𝓘^n over a finite alphabet. Products are kept as
max-entry-normalised matrices with a separate log scale and an exactly
accumulated log|det|. Level n is assembled from the tables at levels ⌈n/2⌉
and ⌊n/2⌋ (meet in the middle), processed in fixed shards whose partial
log-sum-exp results are combined in shard order, so the result does not depend
on the number of worker threads.
"""

from __future__ import annotations

import itertools
import logging
import math
import os
import time
import weakref
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import BudgetError, InputError, ModeError, UnsupportedError
from .linalg import log_phi_from_logsv, log_singular_values_batch
from .systems import SystemSpec

log = logging.getLogger(__name__)

DEFAULT_BUDGET = 10**8
SHARD_WORDS = 1 << 15
CACHE_WORDS = 1 << 22
DIVERGENCE_TARGET = 1e100


def default_budget() -> int:
    env = os.environ.get("AFFLAB_BUDGET")
    if env:
        try:
            return int(float(env))
        except ValueError:
            raise InputError(f"AFFLAB_BUDGET={env!r} is not a number") from None
    return DEFAULT_BUDGET


def _lse_parts(values: np.ndarray) -> tuple:
    if values.size == 0:
        return -math.inf, 0.0
    m = float(values.max())
    if m == -math.inf:
        return m, 0.0
    return m, float(np.sum(np.exp(values - m)))


def _combine(parts) -> float:
    parts = [p for p in parts if p[0] != -math.inf]
    if not parts:
        return -math.inf
    top = max(p[0] for p in parts)
    total = math.fsum(s * math.exp(m - top) for m, s in parts)
    return top + math.log(total)


class WordEngine:
    """Log singular values of all products of length n over a finite alphabet."""

    def __init__(self, linear: np.ndarray, threads: int = 1, budget: Optional[int] = None):
        L = np.asarray(linear, dtype=float)
        self.N, self.d = L.shape[0], L.shape[1]
        scale = np.max(np.abs(L), axis=(1, 2))
        self._gen = L / scale[:, None, None]
        self._gen_logscale = np.log(scale)
        self._gen_logdet = np.linalg.slogdet(L)[1]
        self.threads = max(1, int(threads))
        self.budget = default_budget() if budget is None else int(budget)
        self._tables = {0: (np.eye(self.d)[None], np.zeros(1), np.zeros(1))}
        self._logsv = {}
        self.words_evaluated = 0

    def count(self, n: int) -> int:
        return self.N ** n

    def max_level(self, cap: int) -> int:
        n = 1
        while n < cap and self.count(n + 1) <= self.budget:
            n += 1
        return n

    def check_budget(self, n: int):
        cost = self.count(n)
        if cost > self.budget:
            suggested = 1
            while self.N > 1 and self.count(suggested + 1) <= self.budget:
                suggested += 1
            raise BudgetError(f"{self.N}^{n} = {cost:.3g} words exceeds budget {self.budget:.3g}; "
                              f"try n <= {suggested}", suggested_n=suggested, cost=cost)

    def table(self, n: int):
        """(normalised products, log scales, log|det|) for every word of length n."""
        if n in self._tables:
            return self._tables[n]
        P, c, D = self.table(n - 1)
        M = np.einsum("aij,bjk->abik", P, self._gen).reshape(-1, self.d, self.d)
        sc = np.max(np.abs(M), axis=(1, 2))
        M /= sc[:, None, None]
        cs = (c[:, None] + self._gen_logscale[None, :]).ravel() + np.log(sc)
        Ds = (D[:, None] + self._gen_logdet[None, :]).ravel()
        self._tables[n] = (M, cs, Ds)
        return self._tables[n]

    def _split(self, n: int):
        a = (n + 1) // 2
        return a, n - a

    def shards(self, n: int) -> list:
        a, b = self._split(n)
        rows = self.N ** a
        width = self.N ** b
        per = max(1, SHARD_WORDS // width)
        return [(r, min(r + per, rows)) for r in range(0, rows, per)]

    def _shard_logsv(self, n: int, r0: int, r1: int) -> np.ndarray:
        a, b = self._split(n)
        PL, cL, DL = self.table(a)
        PR, cR, DR = self.table(b)
        M = np.einsum("aij,bjk->abik", PL[r0:r1], PR).reshape(-1, self.d, self.d)
        c = (cL[r0:r1, None] + cR[None, :]).ravel()
        D = (DL[r0:r1, None] + DR[None, :]).ravel()
        logsv = log_singular_values_batch(M, D - self.d * c)
        return logsv + c[:, None]

    def _run(self, fn, jobs):
        if self.threads == 1 or len(jobs) == 1:
            return [fn(*j) for j in jobs]
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            return list(pool.map(lambda j: fn(*j), jobs))

    def logsv(self, n: int) -> Optional[np.ndarray]:
        """Cached (N^n, d) array of log singular values, or None if too large to keep."""
        if n in self._logsv:
            return self._logsv[n]
        self.check_budget(n)
        if self.count(n) > CACHE_WORDS:
            return None
        parts = self._run(lambda r0, r1: self._shard_logsv(n, r0, r1), self.shards(n))
        out = np.concatenate(parts, axis=0)
        self.words_evaluated += out.shape[0]
        self._logsv[n] = out
        return out

    def log_reduce(self, n: int, fn) -> float:
        """log Σ_w exp(fn(logsv)[w]) over all words of length n."""
        if n == 0:
            return float(fn(np.zeros((1, self.d)))[0])
        cached = self.logsv(n)
        shards = self.shards(n)
        width = self.N ** self._split(n)[1]
        if cached is not None:
            parts = [_lse_parts(fn(cached[r0 * width:r1 * width])) for r0, r1 in shards]
        else:
            def job(r0, r1):
                return _lse_parts(fn(self._shard_logsv(n, r0, r1)))
            parts = self._run(job, shards)
            self.words_evaluated += self.count(n)
        return _combine(parts)

    def log_partition(self, s: float, n: int) -> float:
        return self.log_reduce(n, lambda L: log_phi_from_logsv(L, s))

    def log_sigma_sum(self, s: float, n: int) -> float:
        return self.log_reduce(n, lambda L: s * L[:, -1])

    def log_phi_values(self, s: float, n: int) -> np.ndarray:
        L = self.logsv(n)
        if L is None:
            raise BudgetError(f"level {n} is too large to materialise", cost=self.count(n))
        return log_phi_from_logsv(L, s)


_ENGINES: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def engine_for(system: SystemSpec, N: Optional[int] = None, threads: int = 1,
               budget: Optional[int] = None) -> tuple:
    """Shared engine for a system (finite) or its truncation J_N; returns (engine, N_used)."""
    if system.is_finite:
        n_used = system.size
    else:
        if N is None:
            raise InputError("countable systems need a truncation N")
        n_used = system.representable_limit(int(N))
    per = _ENGINES.setdefault(system, {})
    eng = per.get(n_used)
    if eng is None:
        eng = WordEngine(system.linear_parts(None if system.is_finite else n_used),
                         threads=threads, budget=budget)
        per[n_used] = eng
    eng.threads = max(1, int(threads))
    eng.budget = default_budget() if budget is None else int(budget)
    return eng, n_used


@dataclass
class PartitionSum:
    value: float
    tail_bound: float
    log_value: float
    n: int
    N: object
    divergent: bool = False


def _divergent(system: SystemSpec, s: float) -> bool:
    if system.is_finite or system.divergence_witness is None:
        return False
    w = system.divergence_witness(s, DIVERGENCE_TARGET)
    return w is not None and math.isfinite(w)


def _tail(system: SystemSpec, s: float, N: int, certified: bool) -> float:
    if system.is_finite:
        return 0.0
    if system.tail_phi_upper is None:
        if certified:
            raise ModeError("certified mode needs a tail_phi_upper oracle")
        return math.nan
    return float(system.tail_phi_upper(s, N))


def _tail_term(logZ: list, T: float, n: int) -> float:
    """Σ_{m=1}^{n} Z_{m-1}(J_N)·T_N·U^{n-m} with U = Z_1(J_N) + T_N."""
    if T == 0.0:
        return 0.0
    if not math.isfinite(T):
        return math.inf
    U = math.exp(logZ[1]) + T
    return math.fsum(math.exp(logZ[m - 1]) * T * U ** (n - m) for m in range(1, n + 1))


def partition_sum(system: SystemSpec, s: float, n: int, N: Optional[int] = None,
                  threads: int = 1, budget: Optional[int] = None, certified: bool = True) -> PartitionSum:
    """Z_n(s) over the (truncated) alphabet plus a bound on what the truncation misses."""
    if s < 0:
        raise InputError("s must be non-negative")
    if n < 1:
        raise InputError("n must be at least 1")
    if _divergent(system, s):
        return PartitionSum(math.inf, math.inf, math.inf, n, N, divergent=True)
    eng, n_used = engine_for(system, N, threads, budget)
    eng.check_budget(n)
    logZ = [0.0] + [eng.log_partition(s, m) for m in range(1, n + 1)]
    T = _tail(system, s, n_used, certified)
    tail = _tail_term(logZ, T, n) if not math.isnan(T) else math.nan
    return PartitionSum(math.exp(logZ[n]), tail, logZ[n], n, "all" if system.is_finite else n_used)


@dataclass
class PressureBracket:
    s: float
    n: int
    N: object
    upper: float
    lower_certified: Optional[float]
    lower_heuristic: float
    tail_term: float
    certificate_ref: Optional[str] = None
    lower_route: Optional[str] = None
    infinite: bool = False
    levels: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    wall_ms: float = 0.0

    @property
    def width(self) -> float:
        if self.lower_certified is None:
            return math.inf
        return self.upper - self.lower_certified

    def sign(self) -> int:
        """+1 / -1 when the sign of the pressure is certified, 0 otherwise."""
        if self.infinite or (self.lower_certified is not None and self.lower_certified > 0):
            return 1
        if self.upper < 0:
            return -1
        return 0

    def as_row(self) -> dict:
        return {"s": self.s, "n": self.n, "N": self.N, "upper": self.upper,
                "lower_certified": self.lower_certified, "lower_heuristic": self.lower_heuristic,
                "tail_term": self.tail_term, "wall_ms": self.wall_ms}


def aitken(seq) -> float:
    if len(seq) < 3:
        return seq[-1]
    x0, x1, x2 = seq[-3:]
    den = x2 - 2 * x1 + x0
    if abs(den) < 1e-14:
        return x2
    return x2 - (x2 - x1) ** 2 / den


def triangular_diagonal(mats: np.ndarray) -> Optional[np.ndarray]:
    """Diagonals (B, d) when every matrix is upper triangular, or every one lower triangular."""
    if mats.shape[1] == 1:
        return mats[:, :, 0].copy()
    iu = np.triu_indices(mats.shape[1], 1)
    il = np.tril_indices(mats.shape[1], -1)
    if np.all(mats[:, il[0], il[1]] == 0) or np.all(mats[:, iu[0], iu[1]] == 0):
        return np.diagonal(mats, axis1=1, axis2=2).copy()
    return None


def triangular_log_pressure(diag: np.ndarray, s: float) -> float:
    """Exact pressure of a finite triangular tuple from its diagonal entries.

    The block-diagonal comparison tuple is diagonal, and for diagonal products
    φ^s is the maximum over coordinate assignments of multiplicative weights,
    so P(s) = max over assignments of log Σ_i ∏_j |x_ij|^{w_j}.
    """
    logs = np.log(np.abs(diag))
    d = logs.shape[1]
    if s >= d:
        return _combine([_lse_parts(logs.sum(axis=1) * (s / d))])
    k = int(math.floor(s))
    frac = s - k
    best = -math.inf
    for ones in itertools.combinations(range(d), k):
        base = logs[:, list(ones)].sum(axis=1) if ones else np.zeros(len(logs))
        rest = [j for j in range(d) if j not in ones] if frac > 0 else [None]
        for j in rest:
            v = base if j is None else base + frac * logs[:, j]
            best = max(best, _combine([_lse_parts(v)]))
    return best


def qm_constant(certificate, eng: WordEngine, s: float) -> float:
    """log K̂(s) = log K + log Σ_{ℓ ∈ lengths(F)} Z_ℓ, with Z_0 = 1."""
    lengths = sorted({len(w) for w in certificate.connecting_words})
    logs = [eng.log_partition(s, ell) for ell in lengths]
    return certificate.log_K + _combine([(v, 1.0) for v in logs])


def pressure_bracket(system: SystemSpec, s: float, n_max: int = 8, N: Optional[int] = None,
                     certificate=None, threads: int = 1, budget: Optional[int] = None) -> PressureBracket:
    """Certified upper and lower bounds on P(s) from levels 1..n_max."""
    t0 = time.perf_counter()
    if s < 0:
        raise InputError("s must be non-negative")
    if n_max < 1:
        raise InputError("n_max must be at least 1")
    if _divergent(system, s):
        br = PressureBracket(s, 1, N, math.inf, math.inf, math.inf, math.inf, infinite=True,
                             lower_route="divergence", notes=["sum of phi^s(A_i) diverges (s below theta)"])
        br.wall_ms = 1e3 * (time.perf_counter() - t0)
        return br
    eng, n_used = engine_for(system, N, threads, budget)
    n_eff = eng.max_level(n_max) if eng.N > 1 else n_max
    notes = []
    if n_eff < n_max:
        notes.append(f"levels capped at n={n_eff} by budget {eng.budget:.3g}")
    logZ = [0.0] + [eng.log_partition(s, m) for m in range(1, n_eff + 1)]
    T = _tail(system, s, n_used, certified=True)
    uppers = []
    tails = []
    for m in range(1, n_eff + 1):
        tail = _tail_term(logZ, T, m)
        tails.append(tail)
        uppers.append((_combine([(logZ[m], 1.0), (math.log(tail) if tail > 0 else -math.inf, 1.0)])) / m)
    best = int(np.argmin(uppers))
    upper = uppers[best]
    d = system.dim

    routes = {}
    if s >= d:
        # |det|^{s/d} is multiplicative
        routes["multiplicative"] = logZ[1]
    sig = [eng.log_sigma_sum(s, m) / m for m in range(1, n_eff + 1)]
    route_a = max(sig)
    if not system.is_finite and system.tail_sigma_lower is not None:
        extra = system.tail_sigma_lower(s, n_used)
        if extra > 0:
            route_a = max(route_a, _combine([(eng.log_sigma_sum(s, 1), 1.0), (math.log(extra), 1.0)]))
    routes["sigma_d"] = route_a
    diag = triangular_diagonal(system.linear_parts(None if system.is_finite else n_used))
    if diag is not None and s < d:
        exact = triangular_log_pressure(diag, s)
        routes["triangular_exact"] = exact
        if system.is_finite and exact < upper:
            upper = exact
    cert_ref = None
    if certificate is not None:
        if not certificate.full_space:
            notes.append("certificate ignored: only full-space certificates give a lower bound here")
        elif abs(certificate.s - s) > 1e-12:
            notes.append("certificate ignored: computed for a different s")
        else:
            logKhat = qm_constant(certificate, eng, s)
            routes["qm_certificate"] = max((logZ[m] - logKhat) / m for m in range(1, n_eff + 1))
            cert_ref = certificate.ref
    for name, val in list(routes.items()):
        if val > upper + 1e-9:
            notes.append(f"route {name} exceeded the upper bound and was dropped")
            del routes[name]
    lower_route = max(routes, key=routes.get) if routes else None
    lower = routes[lower_route] if routes else None

    seq = [logZ[m] / m for m in range(1, n_eff + 1)]
    heur = aitken(seq)
    if lower is not None:
        heur = min(max(heur, lower), upper)
    tail_final = tails[best]
    br = PressureBracket(s=s, n=n_eff, N="all" if system.is_finite else n_used, upper=upper,
                         lower_certified=lower, lower_heuristic=heur, tail_term=tail_final,
                         certificate_ref=cert_ref, lower_route=lower_route,
                         levels=[(m, seq[m - 1]) for m in range(1, n_eff + 1)], notes=notes)
    if not system.is_finite and n_used < (N or 0):
        notes.append(f"truncation capped at N={n_used} (smallest singular value underflows beyond)")
    theta = system.extras.get("theta")
    if theta is not None and abs(s - theta) < 0.02:
        notes.append("s is close to the finiteness threshold; brackets may be wide")
    br.wall_ms = 1e3 * (time.perf_counter() - t0)
    return br


@dataclass
class ThetaInterval:
    lower: float
    upper: float
    exact: bool = False
    notes: list = field(default_factory=list)


def theta_estimate(system: SystemSpec, tol: float = 1e-3, N: int = 1000) -> ThetaInterval:
    """Bracket the finiteness threshold using the tail and divergence oracles."""
    if system.is_finite:
        return ThetaInterval(0.0, 0.0, exact=True)
    if system.tail_phi_upper is None or system.divergence_witness is None:
        raise UnsupportedError("theta estimation needs tail_phi_upper and divergence_witness oracles")

    def converges(s):
        return math.isfinite(system.tail_phi_upper(s, N))

    def diverges(s):
        w = system.divergence_witness(s, DIVERGENCE_TARGET)
        return w is not None and math.isfinite(w)

    notes = []
    lo = 0.0
    if not diverges(0.0):
        notes.append("no divergence witness at s=0")
    hi = float(system.dim)
    while not converges(hi):
        hi *= 2
        if hi > 1e6:
            raise UnsupportedError("tail oracle never reports convergence")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if converges(mid):
            hi = mid
        elif diverges(mid):
            lo = mid
        else:
            notes.append(f"undecided at s={mid:.6g}")
            break
    return ThetaInterval(lo, hi, notes=notes)


@dataclass
class ShapeReport:
    s_grid: list
    values: list
    kappa: float
    monotone_violations: list
    lower_slope_violations: list
    convexity_violations: list

    @property
    def ok(self) -> bool:
        return not (self.monotone_violations or self.lower_slope_violations or self.convexity_violations)


def shape_diagnostics(system: SystemSpec, s_grid, n: int = 6, N: Optional[int] = None,
                      tol: float = 1e-10) -> ShapeReport:
    """Check monotone decrease, the Lipschitz lower slope and panel convexity at level n."""
    grid = sorted(float(s) for s in s_grid)
    eng, n_used = engine_for(system, N)
    vals = [eng.log_partition(s, n) / n for s in grid]
    L = system.linear_parts(None if system.is_finite else n_used)
    logsv = log_singular_values_batch(L)
    kappa = -float(np.max(logsv[:, 0]))
    log_min_sd = float(np.min(logsv[:, -1]))
    mono, slope, convex = [], [], []
    scale = 1.0 + max(abs(v) for v in vals)
    for j in range(len(grid) - 1):
        ds = grid[j + 1] - grid[j]
        if vals[j + 1] > vals[j] - kappa * ds + tol * scale:
            mono.append((grid[j], grid[j + 1]))
        if system.is_finite and vals[j + 1] < vals[j] + ds * log_min_sd - tol * scale:
            slope.append((grid[j], grid[j + 1]))
    for j in range(1, len(grid) - 1):
        a, b, c = grid[j - 1], grid[j], grid[j + 1]
        if math.floor(a) != math.floor(c) and c != math.floor(c):
            continue
        if c > math.floor(a) + 1:
            continue
        w = (b - a) / (c - a)
        interp = (1 - w) * vals[j - 1] + w * vals[j + 1]
        if vals[j] > interp + tol * scale:
            convex.append(b)
    return ShapeReport(grid, vals, kappa, mono, slope, convex)
