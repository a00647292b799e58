"""Finite and countable affine iterated function systems.

Maps are indexed from 0 in code. For the built-in countable families the map
at index i is the (i+1)-th member, so index 0 corresponds to k = 1 in the
usual formulas.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from .errors import InputError
from .linalg import MAX_DIM, TINY_SINGULAR, as_matrix, log_singular_values_batch

DEFAULT_K_MAX = 10**5
LOG_TINY = math.log(TINY_SINGULAR)


@dataclass(frozen=True)
class AffineMap:
    linear: np.ndarray
    translation: np.ndarray

    def __call__(self, x):
        return self.linear @ np.asarray(x, dtype=float) + self.translation

    def fixed_point(self) -> np.ndarray:
        d = self.linear.shape[0]
        return np.linalg.solve(np.eye(d) - self.linear, self.translation)


@dataclass(frozen=True)
class Word:
    letters: tuple

    def __post_init__(self):
        if len(self.letters) < 1:
            raise InputError("a word has length at least 1")
        if any((not isinstance(i, (int, np.integer))) or i < 0 for i in self.letters):
            raise InputError("word letters must be non-negative integers")

    def __len__(self):
        return len(self.letters)

    def __add__(self, other: "Word") -> "Word":
        return Word(self.letters + other.letters)


@dataclass
class ValidationReport:
    ok: bool
    checked: int
    worst_norm: float
    worst_index: int
    margin: float
    problems: list = field(default_factory=list)
    representable_limit: Optional[int] = None


class SystemSpec:
    """A finite tuple of affine maps, or a countable family given by a generator.

    Countable families supply `linear_block(start, stop)` returning the stacked
    linear parts for indices start..stop-1, optional tail oracles, and a
    `divergence_witness(s, target)` returning log N for an N with
    Σ_{i<N} φ^s(A_i) > target (None when no witness exists).
    """

    def __init__(self, dim: int, *, linear=None, translations=None,
                 linear_block: Optional[Callable] = None,
                 translation_block: Optional[Callable] = None,
                 contraction_bound: Optional[float] = None,
                 tail_phi_upper: Optional[Callable] = None,
                 tail_sigma_lower: Optional[Callable] = None,
                 divergence_witness: Optional[Callable] = None,
                 pressure_oracle: Optional[Callable] = None,
                 name: str = "custom", params: Optional[dict] = None,
                 extras: Optional[dict] = None, k_max: int = DEFAULT_K_MAX):
        if not (1 <= dim <= MAX_DIM):
            raise InputError(f"dimension must lie in 1..{MAX_DIM}")
        self.dim = int(dim)
        self.name = name
        self.params = dict(params or {})
        self.extras = dict(extras or {})
        self.pressure_oracle = pressure_oracle
        self.tail_phi_upper = tail_phi_upper
        self.tail_sigma_lower = tail_sigma_lower
        self.divergence_witness = divergence_witness
        self.k_max = k_max
        self._cache_linear = None
        self._cache_trans = None
        self._rep_limit = None
        if linear is not None:
            L = np.asarray(linear, dtype=float)
            if L.ndim != 3 or L.shape[1:] != (dim, dim) or L.shape[0] < 1:
                raise InputError(f"linear parts must have shape (N, {dim}, {dim})")
            if not np.all(np.isfinite(L)):
                raise InputError("linear parts contain non-finite entries")
            if translations is None:
                T = np.zeros((L.shape[0], dim))
            else:
                T = np.asarray(translations, dtype=float).reshape(L.shape[0], dim)
            self._linear = L
            self._trans = T
            self._linear_block = None
            self._translation_block = None
        else:
            if linear_block is None:
                raise InputError("a system needs either maps or a generator")
            self._linear = None
            self._trans = None
            self._linear_block = linear_block
            self._translation_block = translation_block
        if contraction_bound is None and self._linear is not None:
            contraction_bound = float(np.max(np.linalg.norm(self._linear, 2, axis=(1, 2))))
        self.contraction_bound = contraction_bound

    # -- basic shape -------------------------------------------------------
    @property
    def is_finite(self) -> bool:
        return self._linear is not None

    @property
    def size(self) -> Optional[int]:
        return self._linear.shape[0] if self.is_finite else None

    def __repr__(self):
        n = self.size if self.is_finite else "countable"
        return f"SystemSpec(name={self.name!r}, dim={self.dim}, maps={n})"

    # -- access ------------------------------------------------------------
    def _block(self, start: int, stop: int):
        L = np.asarray(self._linear_block(start, stop), dtype=float).reshape(stop - start, self.dim, self.dim)
        if self._translation_block is not None:
            T = np.asarray(self._translation_block(start, stop), dtype=float).reshape(stop - start, self.dim)
        else:
            T = np.zeros((stop - start, self.dim))
        return L, T

    def linear_parts(self, N: Optional[int] = None) -> np.ndarray:
        if self.is_finite:
            return self._linear if N is None else self._linear[:N]
        if N is None:
            raise InputError("countable systems need a truncation N")
        return self._prefix(N)[0]

    def translations(self, N: Optional[int] = None) -> np.ndarray:
        if self.is_finite:
            return self._trans if N is None else self._trans[:N]
        if N is None:
            raise InputError("countable systems need a truncation N")
        return self._prefix(N)[1]

    def _prefix(self, N: int):
        if N < 1:
            raise InputError("truncation must be at least 1")
        if self._cache_linear is not None and self._cache_linear.shape[0] >= N:
            return self._cache_linear[:N], self._cache_trans[:N]
        L, T = self._block(0, N)
        if N <= self.k_max:
            self._cache_linear, self._cache_trans = L, T
        return L, T

    def generator(self, i: int) -> AffineMap:
        if self.is_finite:
            return AffineMap(self._linear[i], self._trans[i])
        L, T = self._block(i, i + 1)
        return AffineMap(L[0], T[0])

    def maps(self, N: Optional[int] = None) -> list:
        L = self.linear_parts(N)
        T = self.translations(N)
        return [AffineMap(L[i], T[i]) for i in range(L.shape[0])]

    def product(self, letters) -> np.ndarray:
        """A_{i_1}⋯A_{i_n} associated left to right."""
        letters = tuple(letters.letters if isinstance(letters, Word) else letters)
        top = max(letters) + 1
        L = self.linear_parts(None if self.is_finite else top)
        out = np.eye(self.dim)
        for i in letters:
            out = out @ L[i]
        return out

    # -- truncation --------------------------------------------------------
    def representable_limit(self, N: int) -> int:
        """Largest prefix length ≤ N whose maps all have σ_d ≥ 1e-300."""
        if self.is_finite:
            return min(N, self.size)
        if self._rep_limit is not None and self._rep_limit[0] >= N:
            return min(N, self._rep_limit[1])
        L = self.linear_parts(N)
        logsv = log_singular_values_batch(L)
        bad = ~np.isfinite(logsv[:, -1]) | (logsv[:, -1] < LOG_TINY)
        limit = int(np.argmax(bad)) if bad.any() else N
        self._rep_limit = (N, limit)
        return limit

    def truncate(self, N: int) -> "SystemSpec":
        """Finite subsystem J_N (first N maps, capped at the representable prefix)."""
        if self.is_finite:
            n = min(N, self.size)
            sub = SystemSpec(self.dim, linear=self._linear[:n], translations=self._trans[:n],
                             name=f"{self.name}[:{n}]", params=self.params)
            sub.extras["truncation_requested"] = N
            return sub
        n = self.representable_limit(N)
        if n < 1:
            raise InputError("no representable maps in the requested prefix")
        sub = SystemSpec(self.dim, linear=self.linear_parts(n), translations=self.translations(n),
                         contraction_bound=self.contraction_bound,
                         name=f"{self.name}[:{n}]", params=self.params)
        sub.extras["truncation_requested"] = N
        sub.extras["truncation_used"] = n
        sub.extras["parent"] = self.name
        return sub

    # -- serialisation -----------------------------------------------------
    def to_json(self) -> dict:
        if self.name in FAMILIES and "family_params" in self.extras:
            return {"dim": self.dim, "norm": "operator-euclidean", "kind": "family",
                    "family": {"name": self.name, "params": self.extras["family_params"]}}
        if not self.is_finite:
            raise InputError("custom countable systems cannot be serialised")
        maps = [{"matrix": self._linear[i].tolist(), "translation": self._trans[i].tolist()}
                for i in range(self.size)]
        return {"dim": self.dim, "norm": "operator-euclidean", "kind": "finite", "maps": maps}


def finite_system(matrices, translations=None, name: str = "custom") -> SystemSpec:
    mats = [as_matrix(m) for m in matrices]
    if not mats:
        raise InputError("a finite system needs at least one map")
    d = mats[0].shape[0]
    if any(m.shape[0] != d for m in mats):
        raise InputError("all maps must share one dimension")
    return SystemSpec(d, linear=np.stack(mats), translations=translations, name=name)


def validate(spec: SystemSpec, sample_count: int = 1000, raise_on_error: bool = True) -> ValidationReport:
    """Check invertibility and contraction of the (first sample_count) maps."""
    n = spec.size if spec.is_finite else sample_count
    L = spec.linear_parts(None if spec.is_finite else n)
    problems = []
    notes = []
    logsv = log_singular_values_batch(L)
    norms = np.exp(logsv[:, 0])
    for i in range(L.shape[0]):
        if not np.isfinite(logsv[i, -1]) or logsv[i, -1] < LOG_TINY:
            if spec.is_finite:
                problems.append(f"map {i}: not invertible (log sigma_d = {logsv[i, -1]:.6g})")
            else:
                # generated analytically; only its floating point image is degenerate
                notes.append(i)
            if norms[i] >= 1.0:
                problems.append(f"map {i}: operator norm {norms[i]:.17g} is not < 1")
        elif norms[i] >= 1.0:
            problems.append(f"map {i}: operator norm {norms[i]:.17g} is not < 1")
        elif spec.contraction_bound is not None and norms[i] > spec.contraction_bound * (1 + 1e-12):
            problems.append(f"map {i}: norm {norms[i]:.17g} exceeds declared bound {spec.contraction_bound:.17g}")
    worst = int(np.argmax(norms))
    report = ValidationReport(ok=not problems, checked=L.shape[0], worst_norm=float(norms[worst]),
                              worst_index=worst, margin=float(1.0 - norms[worst]), problems=problems,
                              representable_limit=notes[0] if notes else None)
    if problems and raise_on_error:
        raise InputError("; ".join(problems[:5]))
    return report


# -- analytic helpers -------------------------------------------------------

def power_tail_upper(p: float, N: int) -> float:
    """Σ_{k>N} k^{-p} ≤ N^{1-p}/(p-1) for p > 1, N ≥ 1."""
    if p <= 1:
        return math.inf
    return N ** (1.0 - p) / (p - 1.0)


def power_log_tail_upper(p: float, q: float, N: int) -> float:
    """Upper bound on Σ_{k>N} k^{-p} log(k+1)^{-q} (finite iff p > 1 or p = 1 < q)."""
    if p > 1:
        return power_tail_upper(p, N) * math.log(N + 1) ** (-q) if q >= 0 else math.inf
    if p == 1 and q > 1:
        # Σ_{k>N} 1/(k log^q(k+1)) ≤ ∫_N^∞ dx/(x log^q x) = log(N)^{1-q}/(q-1), N ≥ 2
        if N < 2:
            return 1.0 / math.log(2.0) ** q + math.log(2.0) ** (1 - q) / (q - 1)
        return math.log(N) ** (1.0 - q) / (q - 1.0)
    return math.inf


def power_log_witness(p: float, q: float, coef: float, target: float) -> Optional[float]:
    """log N with coef·Σ_{k≤N} k^{-p} log(k+1)^{-q} > target, for p < 1 (or p = 1, q ≤ 0).

    Uses Σ_{k≤N} f(k) ≥ (X - √X) f(X) with X = N + 1 and f decreasing.
    """
    if coef <= 0:
        return None
    if p > 1 or (p == 1 and q > 0):
        return None

    def log_bound(u):  # u = log X
        x_term = math.log1p(-math.exp(-0.5 * u))
        return math.log(coef) + x_term + (1.0 - p) * u - q * math.log(math.log1p(math.exp(u)) if u < 700 else u)

    goal = math.log(target)
    if p == 1:
        # Σ_{k≤N} 1/k ≥ log(N+1)
        return target / coef if q == 0 else None
    u = 2.0
    while log_bound(u) <= goal:
        u *= 2.0
        if u > 1e300:
            return None
    lo, hi = u / 2.0, u
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if log_bound(mid) > goal:
            hi = mid
        else:
            lo = mid
    return hi


# -- built-in families ------------------------------------------------------

def pathology_parameters(alpha: float, beta: float, gamma: float, mode: str) -> dict:
    if not (0 < alpha < 1 and 0 < beta < 1 and beta < gamma <= 1):
        raise InputError("need 0 < alpha < 1, 0 < beta < 1 and beta < gamma <= 1")
    if mode not in ("infinite_pressure", "negative_pressure"):
        raise InputError("mode must be infinite_pressure or negative_pressure")
    t = math.log1p(alpha ** beta) / beta
    a = _pathology_offdiag(gamma, mode)
    # locate max_k a_k: scan until the sequence starts decreasing
    k = 1
    best = a(np.array([1.0]))[0]
    while True:
        nxt = a(np.array([k + 1.0]))[0]
        if nxt > best:
            best = nxt
            k += 1
        else:
            break
    eps = alpha * (1.0 - math.exp(-t)) / (2.0 * best)
    bound = alpha * math.exp(-t) + alpha * (1.0 - math.exp(-t)) / 2.0
    return {"t": t, "eps": eps, "max_a": best, "contraction_bound": bound}


def _pathology_offdiag(gamma: float, mode: str):
    if mode == "infinite_pressure":
        return lambda k: k ** (-1.0 / gamma)
    return lambda k: k ** (-1.0 / gamma) * np.log(k + 1.0) ** (-2.0 / gamma)


def pathology_family(alpha: float = 0.5, beta: float = 0.5, gamma: float = 0.75,
                     mode: str = "infinite_pressure") -> SystemSpec:
    """Upper-triangular 2×2 family whose lower and upper affinity dimensions differ.

    A_k = [[α e^{-tk}, ε a_k], [0, α e^{-tk}]] with e^{βt} - 1 = α^β, so the
    diagonal weights satisfy Σ_k (α e^{-tk})^β = 1.
    """
    par = pathology_parameters(alpha, beta, gamma, mode)
    t, eps = par["t"], par["eps"]
    a = _pathology_offdiag(gamma, mode)

    def linear_block(start, stop):
        k = np.arange(start + 1, stop + 1, dtype=float)
        diag = alpha * np.exp(-t * k)
        out = np.zeros((len(k), 2, 2))
        out[:, 0, 0] = diag
        out[:, 1, 1] = diag
        out[:, 0, 1] = eps * a(k)
        return out

    def translation_block(start, stop):
        k = np.arange(start + 1, stop + 1, dtype=float)
        out = np.zeros((len(k), 2))
        out[:, 0] = 2.0 ** (-k)
        return out

    q_log = 0.0 if mode == "infinite_pressure" else 2.0 / gamma

    def tail_phi_upper(s, N):
        # φ^s(A_k) ≤ ‖A_k‖^s ≤ c_s (x_k^s + (ε a_k)^s) for s ≤ 2; exact x_k^s beyond
        geo = alpha ** s * math.exp(-t * s * (N + 1)) / (-math.expm1(-t * s)) if s > 0 else math.inf
        if s > 2:
            return geo
        c = max(1.0, 2.0 ** (s - 1.0))
        p = s / gamma
        off = power_log_tail_upper(p, q_log * s, N)
        return c * (geo + eps ** s * off)

    def divergence_witness(s, target):
        # φ^s(A_k) ≥ ‖A_k‖^s ≥ (ε a_k)^s for s ≤ 1
        if s > 1:
            return None
        return power_log_witness(s / gamma, q_log * s, eps ** s, target)

    def diagonal_pressure(s):
        return s * math.log(alpha) - math.log(math.expm1(t * s)) if s > 0 else math.inf

    return SystemSpec(2, linear_block=linear_block, translation_block=translation_block,
                      contraction_bound=par["contraction_bound"], tail_phi_upper=tail_phi_upper,
                      divergence_witness=divergence_witness, name="pathology",
                      params=dict(alpha=alpha, beta=beta, gamma=gamma, mode=mode, **par),
                      extras={"family_params": dict(alpha=alpha, beta=beta, gamma=gamma, mode=mode),
                              "diagonal_pressure": diagonal_pressure,
                              "offdiag": a, "theta": gamma})


@lru_cache(maxsize=None)
def no_equilibrium_constant(M: int = 2 * 10**6) -> tuple:
    """C with Σ_n C/(n log²(n+1)) = 1, plus the half-width of its bracket.

    Partial sum to M plus the tail bracket 1/log(M+2) ≤ Σ_{n>M} ≤ 1/log M.
    """
    n = np.arange(1, M + 1, dtype=float)
    partial = math.fsum(1.0 / (n * np.log1p(n) ** 2))
    lo, hi = 1.0 / math.log(M + 2.0), 1.0 / math.log(M)
    C = 1.0 / (partial + 0.5 * (lo + hi))
    return C, 0.5 * C * (hi - lo), partial


def no_equilibrium_family() -> SystemSpec:
    """One-dimensional system a_n = C/(n log²(n+1)) with Σ a_n = 1.

    Its pressure threshold is 1 with pressure 0 there, yet Σ a_n log a_n = -∞,
    so no measure attains the supremum at s = 1.
    """
    C, _, _ = no_equilibrium_constant()

    def weight(k):
        return C / (k * np.log1p(k) ** 2)

    def linear_block(start, stop):
        k = np.arange(start + 1, stop + 1, dtype=float)
        return weight(k).reshape(-1, 1, 1)

    def translation_block(start, stop):
        k = np.arange(start + 1, stop + 1, dtype=float)
        return (2.0 ** (-k)).reshape(-1, 1)

    def tail_phi_upper(s, N):
        if s < 1:
            return math.inf
        head = float(weight(np.array([N + 1.0]))[0]) ** (s - 1.0)
        return head * C * power_log_tail_upper(1.0, 2.0, N)

    def tail_sigma_lower(s, N):
        if s > 1:
            return 0.0
        # a_k^s ≥ a_k, and Σ_{k>N} 1/(k log²(k+1)) ≥ 1/log(N+2)
        return C / math.log(N + 2.0)

    def divergence_witness(s, target):
        if s >= 1:
            return None
        # a_k^s = C^s k^{-s} log(k+1)^{-2s}
        return power_log_witness(s, 2.0 * s, C ** s, target)

    return SystemSpec(1, linear_block=linear_block, translation_block=translation_block,
                      contraction_bound=float(weight(np.array([1.0]))[0]),
                      tail_phi_upper=tail_phi_upper, tail_sigma_lower=tail_sigma_lower,
                      divergence_witness=divergence_witness, name="no_equilibrium",
                      params={"C": C},
                      extras={"family_params": {}, "theta": 1.0, "weight": weight,
                              "entropy_witness": entropy_divergence_witness})


def entropy_divergence_witness(target: float, M: int = 10**6) -> dict:
    """log N such that Σ_{n≤N} -a_n log a_n > target for the no-equilibrium weights.

    Exact partial sum up to M, then for n > M: -log a_n ≥ log n and
    log(n+1) ≤ (1+δ) log n with δ = 1/((M+1) log(M+1)), so the remaining sum is
    at least C/(1+δ)² (log log(N+1) - log log(M+1)).
    """
    C, _, _ = no_equilibrium_constant()
    n = np.arange(1, M + 1, dtype=float)
    a = C / (n * np.log1p(n) ** 2)
    terms = -a * np.log(a)
    partial = np.cumsum(terms)
    if partial[-1] > target:
        idx = int(np.argmax(partial > target))
        return {"log_N": math.log(idx + 1), "partial_at_M": float(partial[-1]), "M": M, "direct": True}
    delta = 1.0 / ((M + 1) * math.log(M + 1))
    need = (target - float(partial[-1])) * (1 + delta) ** 2 / C
    loglog = math.log(math.log(M + 1)) + need
    log_n = math.exp(loglog)  # log(N+1), N+1 ≈ N at this scale
    return {"log_N": log_n, "partial_at_M": float(partial[-1]), "M": M, "direct": False}


def _consistent_order(entries: np.ndarray) -> Optional[np.ndarray]:
    """Permutation sorting every row non-increasingly, if one exists."""
    perm = np.argsort(-entries[0], kind="stable")
    srt = entries[:, perm]
    if np.all(np.diff(srt, axis=1) <= 0):
        return perm
    return None


def diagonal_family(entries, translations=None) -> SystemSpec:
    E = np.asarray(entries, dtype=float)
    if E.ndim == 1:
        E = E[:, None]
    if np.any(E <= 0) or np.any(E >= 1):
        raise InputError("diagonal entries must lie in (0, 1)")
    N, d = E.shape
    linear = np.zeros((N, d, d))
    for j in range(d):
        linear[:, j, j] = E[:, j]
    if translations is None:
        translations = np.zeros((N, d))
        translations[:, 0] = np.arange(N) / N
    perm = _consistent_order(E)
    oracle = None
    if perm is not None:
        srt = np.log(E[:, perm])

        def oracle(s, srt=srt):
            from .linalg import log_phi_from_logsv
            vals = log_phi_from_logsv(srt, s)
            m = vals.max()
            return float(m + math.log(np.exp(vals - m).sum()))
    return SystemSpec(d, linear=linear, translations=translations, pressure_oracle=oracle,
                      name="diagonal", params={"entries": E.tolist()},
                      extras={"family_params": {"entries": E.tolist(),
                                                "translations": np.asarray(translations).tolist()}})


def similarity_family(ratios=None, translations=None, dim: int = 1, base: Optional[float] = None,
                      offset: int = 1) -> SystemSpec:
    """Scalar maps r_i·I. With `base`, the countable family r_k = base^{k+offset}, k ≥ 1."""
    if base is not None:
        return _geometric_similarity(base, offset, dim)
    r = np.asarray(ratios, dtype=float).ravel()
    if r.size == 0:
        raise InputError("need at least one ratio")
    if np.any(r <= 0) or np.any(r >= 1):
        raise InputError("similarity ratios must lie in (0, 1)")
    N = len(r)
    linear = r[:, None, None] * np.eye(dim)[None]
    if translations is None:
        # lay the images of the unit cube side by side along the first axis
        gap = (1.0 - r.sum()) / max(N - 1, 1) if r.sum() < 1 else 0.0
        starts = np.concatenate([[0.0], np.cumsum(r[:-1] + gap)])
        translations = np.zeros((N, dim))
        translations[:, 0] = starts
    logs = np.log(r)

    def oracle(s):
        vals = s * logs
        m = vals.max()
        return float(m + math.log(np.exp(vals - m).sum()))

    return SystemSpec(dim, linear=linear, translations=translations, pressure_oracle=oracle,
                      name="similarity", params={"ratios": r.tolist(), "dim": dim},
                      extras={"family_params": {"ratios": r.tolist(), "dim": dim,
                                                "translations": np.asarray(translations).tolist()}})


def _geometric_similarity(base: float, offset: int, dim: int) -> SystemSpec:
    if not (0 < base < 1):
        raise InputError("base must lie in (0, 1)")

    def linear_block(start, stop):
        k = np.arange(start + 1, stop + 1, dtype=float)
        return base ** (k + offset)[:, None, None] * np.eye(dim)[None]

    def translation_block(start, stop):
        k = np.arange(start + 1, stop + 1, dtype=float)
        out = np.zeros((len(k), dim))
        out[:, 0] = 1.0 - base ** (k - 1)
        return out

    def tail(s, N):
        if s <= 0:
            return math.inf
        return base ** (s * (N + 1 + offset)) / (-math.expm1(s * math.log(base)))

    def witness(s, target):
        if s > 0:
            return None
        return math.log(math.floor(target) + 1.0)

    def oracle(s):
        if s <= 0:
            return math.inf
        return s * (1 + offset) * math.log(base) - math.log(-math.expm1(s * math.log(base)))

    return SystemSpec(dim, linear_block=linear_block, translation_block=translation_block,
                      contraction_bound=base ** (1 + offset), tail_phi_upper=tail,
                      tail_sigma_lower=tail, divergence_witness=witness, pressure_oracle=oracle,
                      name="similarity", params={"base": base, "offset": offset, "dim": dim},
                      extras={"family_params": {"base": base, "offset": offset, "dim": dim},
                              "theta": 0.0})


FAMILIES = {
    "pathology": {
        "builder": lambda p: pathology_family(p.get("alpha", 0.5), p.get("beta", 0.5),
                                              p.get("gamma", 0.75), p.get("mode", "infinite_pressure")),
        "schema": {"alpha": "real in (0,1), default 0.5", "beta": "real in (0,1), default 0.5",
                   "gamma": "real in (beta,1], default 0.75",
                   "mode": "infinite_pressure | negative_pressure"},
    },
    "no_equilibrium": {
        "builder": lambda p: no_equilibrium_family(),
        "schema": {},
    },
    "diagonal": {
        "builder": lambda p: diagonal_family(p["entries"], p.get("translations")),
        "schema": {"entries": "list of d-vectors with entries in (0,1)",
                   "translations": "optional list of d-vectors"},
    },
    "similarity": {
        "builder": lambda p: similarity_family(p.get("ratios"), p.get("translations"), p.get("dim", 1),
                                               p.get("base"), p.get("offset", 1)),
        "schema": {"ratios": "list of reals in (0,1) (finite family)",
                   "base": "real in (0,1): countable family r_k = base^(k+offset)",
                   "offset": "integer, default 1", "dim": "ambient dimension, default 1",
                   "translations": "optional list of d-vectors"},
    },
}


def system_from_json(obj: dict) -> SystemSpec:
    try:
        dim = int(obj["dim"])
        kind = obj["kind"]
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"system JSON missing field: {exc}") from None
    norm = obj.get("norm", "operator-euclidean")
    if norm != "operator-euclidean":
        raise InputError(f"unsupported norm {norm!r}")
    if kind == "finite":
        maps = obj.get("maps")
        if not maps:
            raise InputError("finite system needs a non-empty 'maps' list")
        try:
            mats = [np.asarray(m["matrix"], dtype=float) for m in maps]
            trans = [np.asarray(m.get("translation", [0.0] * dim), dtype=float) for m in maps]
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"bad map entry: {exc}") from None
        if any(m.shape != (dim, dim) for m in mats) or any(t.shape != (dim,) for t in trans):
            raise InputError("map shapes do not match 'dim'")
        return finite_system(mats, np.stack(trans), name=obj.get("name", "custom"))
    if kind == "family":
        fam = obj.get("family") or {}
        name = fam.get("name")
        if name not in FAMILIES:
            raise InputError(f"unknown family {name!r}; known: {sorted(FAMILIES)}")
        try:
            spec = FAMILIES[name]["builder"](fam.get("params") or {})
        except (KeyError, TypeError) as exc:
            raise InputError(f"bad parameters for family {name}: {exc}") from None
        if spec.dim != dim:
            raise InputError(f"family {name} has dimension {spec.dim}, file says {dim}")
        return spec
    raise InputError(f"unknown system kind {kind!r}")


def load_system(path) -> SystemSpec:
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read system file {path}: {exc}") from None
    return system_from_json(obj)
