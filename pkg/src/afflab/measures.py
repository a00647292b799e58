"""Shift-invariant measures, entropy, energy and level-n equilibrium diagnostics.

Words of length n are indexed lexicographically with the first letter most
significant, matching the ordering used by the pressure engine.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from .errors import InputError, InvariantViolation
from .pressure import _combine, _lse_parts, engine_for, pressure_bracket
from .systems import SystemSpec

ENUM_LIMIT = 1 << 22


def _xlogx(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    out = np.zeros_like(p)
    pos = p > 0
    out[pos] = p[pos] * np.log(p[pos])
    return out


@dataclass
class MeasureSpec:
    """Bernoulli or Markov measure on the full shift.

    Countable Bernoulli measures give `weight(k)` for letters k = 0, 1, ...
    and `tail_mass(N)` for the mass of letters ≥ N.
    """

    kind: str
    weights: Optional[np.ndarray] = None
    transition: Optional[np.ndarray] = None
    stationary: Optional[np.ndarray] = None
    weight: Optional[Callable] = None
    tail_mass: Optional[Callable] = None
    name: str = ""

    def __post_init__(self):
        if self.kind == "bernoulli":
            if self.weights is not None:
                w = np.asarray(self.weights, dtype=float)
                if w.ndim != 1 or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
                    raise InputError("Bernoulli weights must be a probability vector")
                self.weights = w
            elif self.weight is None or self.tail_mass is None:
                raise InputError("countable Bernoulli measures need weight and tail_mass oracles")
        elif self.kind == "markov":
            P = np.asarray(self.transition, dtype=float)
            if P.ndim != 2 or P.shape[0] != P.shape[1] or np.any(P < 0):
                raise InputError("transition must be a square non-negative matrix")
            if np.max(np.abs(P.sum(axis=1) - 1.0)) > 1e-12:
                raise InputError("transition matrix must be row-stochastic")
            self.transition = P
            if self.stationary is None:
                lam, V = np.linalg.eig(P.T)
                j = int(np.argmin(np.abs(lam - 1.0)))
                pi = np.real(V[:, j])
                pi = pi / pi.sum()
                self.stationary = pi
            pi = np.asarray(self.stationary, dtype=float)
            if np.any(pi < -1e-15) or abs(pi.sum() - 1) > 1e-12 or np.max(np.abs(pi @ P - pi)) > 1e-12:
                raise InputError("stationary vector must satisfy pi P = pi")
            self.stationary = np.clip(pi, 0.0, None)
        else:
            raise InputError(f"unknown measure kind {self.kind!r}")

    @property
    def is_finite(self) -> bool:
        return self.kind == "markov" or self.weights is not None

    @property
    def size(self) -> Optional[int]:
        if self.kind == "markov":
            return self.transition.shape[0]
        return None if self.weights is None else len(self.weights)

    def letter_masses(self, N: Optional[int] = None) -> np.ndarray:
        if self.kind == "markov":
            return self.stationary.copy()
        if self.weights is not None:
            return self.weights.copy()
        if N is None:
            raise InputError("countable measures need a truncation")
        return np.array([self.weight(k) for k in range(N)])

    def as_markov(self) -> tuple:
        """(initial vector, transition) for finite measures."""
        if self.kind == "markov":
            return self.stationary, self.transition
        if self.weights is None:
            raise InputError("countable Bernoulli measures have no finite transition matrix")
        return self.weights, np.tile(self.weights, (len(self.weights), 1))

    def cylinder_masses(self, n: int) -> np.ndarray:
        """μ([i]) for all words of length n."""
        if not self.is_finite:
            raise InputError("cylinder enumeration needs a finite alphabet")
        S = self.size
        if S ** n > ENUM_LIMIT:
            raise InputError(f"{S}^{n} cylinders exceed the enumeration limit")
        if self.kind == "bernoulli":
            out = self.weights.copy()
            for _ in range(n - 1):
                out = np.outer(out, self.weights).ravel()
            return out
        pi, P = self.stationary, self.transition
        masses = pi.copy()
        last = np.arange(S)
        for _ in range(n - 1):
            masses = (masses[:, None] * P[last]).ravel()
            last = np.tile(np.arange(S), len(last))
        return masses


def bernoulli(weights) -> MeasureSpec:
    return MeasureSpec("bernoulli", weights=np.asarray(weights, dtype=float))


def uniform_bernoulli(size: int) -> MeasureSpec:
    return bernoulli(np.full(size, 1.0 / size))


def markov(transition, stationary=None) -> MeasureSpec:
    return MeasureSpec("markov", transition=transition, stationary=stationary)


def dirac(letter: int, size: int) -> MeasureSpec:
    """Point mass on the constant sequence, as a degenerate Markov chain."""
    pi = np.zeros(size)
    pi[letter] = 1.0
    return markov(np.eye(size), pi)


def escaping_mass_bernoulli(k: int) -> MeasureSpec:
    """Mass 1 − 1/log k on letter 0 and k atoms of mass 1/(k log k).

    These converge weakly to the point mass at 000… while their entropy tends to 1.
    """
    if k < 3:
        raise InputError("k must be at least 3")
    lk = math.log(k)
    w = np.full(k + 1, 1.0 / (k * lk))
    w[0] = 1.0 - 1.0 / lk
    w /= w.sum()
    return bernoulli(w)


def escaping_mass_entropy(k: float = None, log_k: float = None) -> float:
    """Closed-form entropy of escaping_mass_bernoulli(k).

    Pass `log_k` for k beyond float range; the excess over 1 decays like (log log k)/log k.
    """
    L = math.log(k) if log_k is None else float(log_k)
    q = 1.0 / L
    return -(1 - q) * math.log1p(-q) + q * (L + math.log(L))


@lru_cache(maxsize=None)
def _log_squared_normaliser(M: int = 2 * 10**6) -> float:
    """1 / Σ_{i≥2} 1/(i log² i), with the tail past M taken as the midpoint of its integral bracket."""
    i = np.arange(2, M + 1, dtype=float)
    partial = math.fsum(1.0 / (i * np.log(i) ** 2))
    tail = 0.5 * (1.0 / math.log(M + 1) + 1.0 / math.log(M))
    return 1.0 / (partial + tail)


def log_squared_bernoulli() -> MeasureSpec:
    """Atoms c/(i log² i), i ≥ 2 (letter k carries i = k + 2).

    Its one-letter partition has infinite entropy while the entropy through any
    finite generalized partition stays finite.
    """
    c = _log_squared_normaliser()

    def weight(k):
        i = k + 2
        return c / (i * math.log(i) ** 2)

    def tail_mass(N):
        return max(0.0, 1.0 - math.fsum(weight(k) for k in range(N)))

    return MeasureSpec("bernoulli", weight=weight, tail_mass=tail_mass, name="log_squared")


def log_squared_entropy_witness(target: float) -> float:
    """log N such that Σ_{letters < N} p log(1/p) exceeds target.

    With c ≤ log² 2, p_i ≤ 1/i so p_i log(1/p_i) ≥ c/(i log i), and
    Σ_{i=2}^{N} 1/(i log i) ≥ log log(N+1) − log log 2.
    """
    c = _log_squared_normaliser()
    if c > math.log(2) ** 2:
        raise InvariantViolation("normaliser exceeds log^2 2; the witness bound does not apply")
    return math.exp(target / c + math.log(math.log(2)))


@dataclass(frozen=True)
class GeneralizedPartition:
    """Singletons {0}, …, {J−1} plus one lumped cell for the remaining letters."""

    J: int
    alphabet: Optional[int] = None

    def __post_init__(self):
        if self.J < 1:
            raise InputError("partition needs at least one singleton")
        if self.alphabet is not None and self.J > self.alphabet:
            raise InputError("partition singletons exceed the alphabet")

    @property
    def lumped(self) -> bool:
        return self.alphabet is None or self.J < self.alphabet

    @property
    def cells(self) -> int:
        return self.J + (1 if self.lumped else 0)

    @classmethod
    def full(cls, size: int) -> "GeneralizedPartition":
        return cls(size, size)


def _cell_of(partition: GeneralizedPartition, size: int) -> np.ndarray:
    cell = np.arange(size)
    cell[cell >= partition.J] = partition.J
    return cell


def _partition_masses(mu: MeasureSpec, partition: GeneralizedPartition, n: int) -> np.ndarray:
    """Masses of the cells of the n-fold refinement (finite measures)."""
    pi, P = mu.as_markov()
    S = len(pi)
    cell = _cell_of(partition, S)
    C = partition.cells
    if C ** n > ENUM_LIMIT:
        raise InputError(f"{C}^{n} refinement cells exceed the enumeration limit")
    member = np.zeros((C, S))
    member[cell, np.arange(S)] = 1.0
    # forward vectors: row = cell word, column = current state
    vec = member * pi[None, :]
    for _ in range(n - 1):
        nxt = vec @ P
        vec = (nxt[:, None, :] * member[None, :, :]).reshape(-1, S)
    return vec.sum(axis=1)


def _lumped_letter_masses(mu: MeasureSpec, partition: GeneralizedPartition) -> np.ndarray:
    J = partition.J
    if mu.is_finite:
        m = mu.letter_masses()
        if partition.lumped:
            return np.concatenate([m[:J], [m[J:].sum()]])
        return m
    m = mu.letter_masses(J)
    return np.concatenate([m, [mu.tail_mass(J)]])


def shannon_entropy(mu: MeasureSpec, partition: GeneralizedPartition, n: int) -> float:
    """H(μ, ⋁_{i<n} σ^{-i} P_J), with 0 log 0 = 0."""
    if n < 1:
        raise InputError("n must be at least 1")
    if mu.kind == "bernoulli":
        # refinement cells of a Bernoulli measure are independent across positions
        q = _lumped_letter_masses(mu, partition)
        return float(-n * math.fsum(_xlogx(q)))
    return float(-math.fsum(_xlogx(_partition_masses(mu, partition, n))))


def ks_entropy(mu: MeasureSpec, partition: GeneralizedPartition, n_max: int = 8) -> tuple:
    """(H_n/n for n = 1..n_max, closed-form limit or None)."""
    seq = [shannon_entropy(mu, partition, n) / n for n in range(1, n_max + 1)]
    closed = None
    if mu.kind == "bernoulli":
        closed = float(-math.fsum(_xlogx(_lumped_letter_masses(mu, partition))))
    elif not partition.lumped:
        pi, P = mu.stationary, mu.transition
        closed = float(-math.fsum(pi[i] * math.fsum(_xlogx(P[i])) for i in range(len(pi))))
    return seq, closed


def _log_phi_words(system: SystemSpec, s: float, n: int, N: Optional[int] = None) -> np.ndarray:
    eng, _ = engine_for(system, N)
    return eng.log_phi_values(s, n)


def _word_masses(mu: MeasureSpec, n: int, size: int) -> np.ndarray:
    if mu.is_finite:
        if mu.size != size:
            raise InputError(f"measure alphabet {mu.size} does not match system alphabet {size}")
        return mu.cylinder_masses(n)
    w = mu.letter_masses(size)
    out = w.copy()
    for _ in range(n - 1):
        out = np.outer(out, w).ravel()
    return out


def energy(mu: MeasureSpec, system: SystemSpec, s: float, n: int, N: Optional[int] = None) -> dict:
    """(1/n) E_μ log φ^s(A_{i|n}); countable systems give a partial value over J_N."""
    if s < 0:
        raise InputError("s must be non-negative")
    if s == 0:
        return {"value": 0.0, "missing_mass": 0.0}
    eng, n_used = engine_for(system, N)
    masses = _word_masses(mu, n, eng.N)
    lphi = eng.log_phi_values(s, n)
    pos = masses > 0
    val = math.fsum(masses[pos] * lphi[pos]) / n
    missing = max(0.0, 1.0 - math.fsum(masses))
    return {"value": val, "missing_mass": missing}


def energy_sequence(mu: MeasureSpec, system: SystemSpec, s: float, n_max: int) -> list:
    return [energy(mu, system, s, n)["value"] for n in range(1, n_max + 1)]


def measure_pressure(mu: MeasureSpec, system: SystemSpec, s: float, n: int) -> float:
    """(1/n) Σ μ([i]) log(φ^s(A_i)/μ([i]))."""
    eng, _ = engine_for(system)
    masses = _word_masses(mu, n, eng.N)
    lphi = eng.log_phi_values(s, n)
    pos = masses > 0
    return math.fsum(masses[pos] * (lphi[pos] - np.log(masses[pos]))) / n


def variational_check(mu: MeasureSpec, system: SystemSpec, s: float, n: int, tol: float = 1e-9) -> float:
    """Slack (1/n) log Z_n − (1/n)(H_n + E log φ^s); raises if it is below −tol."""
    if not system.is_finite:
        raise InputError("variational check needs a finite alphabet")
    eng, _ = engine_for(system)
    lhs = measure_pressure(mu, system, s, n)
    rhs = eng.log_partition(s, n) / n
    slack = rhs - lhs
    if slack < -tol:
        raise InvariantViolation(f"variational inequality fails: slack {slack:.3e} at s={s}, n={n}")
    return slack


@dataclass
class EquilibriumApprox:
    s: float
    n: int
    size: int
    log_weights: np.ndarray
    log_phi: Optional[np.ndarray] = None
    pressure_ref: Optional[tuple] = None
    level_ratios: list = field(default_factory=list)
    gibbs_C_hat: float = 1.0
    two_sided_C: Optional[float] = None
    threefold_violations: Optional[int] = None
    pressure_sensitivity: float = 0.0
    warnings: list = field(default_factory=list)

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def marginal(self, m: int) -> np.ndarray:
        """Masses of the length-m prefixes."""
        w = self.weights.reshape(self.size ** m, -1)
        return w.sum(axis=1)

    def window_mass(self, start: int, word) -> np.ndarray:
        """w(σ^{-start}[word])."""
        shape = (self.size,) * self.n
        W = self.weights.reshape(shape)
        idx = [slice(None)] * self.n
        for k, letter in enumerate(word):
            idx[start + k] = letter
        return float(W[tuple(idx)].sum())

    @classmethod
    def from_measure(cls, mu: MeasureSpec, n: int) -> "EquilibriumApprox":
        m = mu.cylinder_masses(n)
        with np.errstate(divide="ignore"):
            lw = np.log(m)
        return cls(s=math.nan, n=n, size=mu.size, log_weights=lw)

    def to_json(self) -> dict:
        return {"s": self.s, "n": self.n, "gibbs_C_hat": self.gibbs_C_hat, "two_sided_C": self.two_sided_C,
                "level_ratios": self.level_ratios, "threefold_violations": self.threefold_violations,
                "pressure_sensitivity": self.pressure_sensitivity,
                "pressure_ref": None if self.pressure_ref is None else list(self.pressure_ref),
                "warnings": self.warnings}


def _level_log_phi(system: SystemSpec, s: float, m: int) -> np.ndarray:
    return _log_phi_words(system, s, m)


def equilibrium_approx(system: SystemSpec, s: float, n: int, threefold_len: int = 2,
                       check_reducible: bool = True) -> EquilibriumApprox:
    """Level-n Gibbs weights w(i) = φ^s(A_i)/Z_n and their Gibbs-ratio diagnostics."""
    if not system.is_finite:
        raise InputError("equilibrium approximation needs a finite system")
    notes = []
    if check_reducible and system.dim > 1:
        from .reducibility import find_invariant_subspace
        if find_invariant_subspace(system, trials=8) is not None:
            notes.append("system is reducible; detriangularise first (Gibbs ratio may degenerate)")
            warnings.warn(notes[-1], RuntimeWarning, stacklevel=2)
    lphi_n = _level_log_phi(system, s, n)
    logZ = _combine([_lse_parts(lphi_n)])
    lw = lphi_n - logZ
    approx = EquilibriumApprox(s=s, n=n, size=system.size, log_weights=lw, log_phi=lphi_n, warnings=notes)
    from .potentials import certificate_search
    cert = certificate_search(system, s, max_F_len=1, checked_len=3) if system.size <= 6 else None
    br = pressure_bracket(system, s, n_max=min(n, 12), certificate=cert)
    lower = br.lower_certified if br.lower_certified is not None else br.lower_heuristic
    P_hat = 0.5 * (br.upper + lower)
    approx.pressure_ref = (lower, br.upper)
    approx.pressure_sensitivity = 0.5 * (br.upper - lower) * n
    ratios = []
    two_sided = 1.0
    w = np.exp(lw)
    for m in range(1, n + 1):
        marg = w.reshape(system.size ** m, -1).sum(axis=1)
        lr = np.log(marg) - _level_log_phi(system, s, m)
        ratios.append(float(math.exp(lr.max() - lr.min())))
        two_sided = max(two_sided, math.exp(lr.max() + m * P_hat), math.exp(-(lr.min() + m * P_hat)))
    approx.level_ratios = ratios
    approx.gibbs_C_hat = max(ratios)
    approx.two_sided_C = two_sided
    approx.threefold_violations = _threefold(approx, min(threefold_len, max(1, n // 3)), two_sided)
    return approx


def _threefold(approx: EquilibriumApprox, L: int, C: float) -> int:
    """Count triples with w([ikj]) > C⁴ w([i]) w([k]) w([j]) over words of length L."""
    N = approx.size
    marg = approx.marginal(L)
    if 3 * L > approx.n:
        return 0
    M3 = approx.marginal(3 * L).reshape(N ** L, N ** L, N ** L)
    bound = C ** 4 * marg[:, None, None] * marg[None, :, None] * marg[None, None, :]
    return int(np.sum(M3 > bound * (1 + 1e-12)))


def correlation_decay(approx: EquilibriumApprox, cylinders=None, gaps=range(6)) -> list:
    """Rows (i, j, g, |w([i] ∩ σ^{-|i|-g}[j]) − w([i]) w(σ^{-|i|-g}[j])|)."""
    if cylinders is None:
        cylinders = [((a,), (b,)) for a in range(approx.size) for b in range(approx.size)]
    rows = []
    for i, j in cylinders:
        wi = approx.window_mass(0, i)
        for g in gaps:
            if len(i) + g + len(j) > approx.n:
                raise InputError("approximation level too short for the requested gap")
            # level-n weights are not exactly shift-invariant, so compare with the window marginal
            wj = approx.window_mass(len(i) + g, j)
            joint = _joint_mass(approx, i, len(i) + g, j)
            rows.append((tuple(i), tuple(j), int(g), abs(joint - wi * wj)))
    return rows


def _joint_mass(approx: EquilibriumApprox, i, start: int, j) -> float:
    shape = (approx.size,) * approx.n
    W = approx.weights.reshape(shape)
    idx = [slice(None)] * approx.n
    for k, letter in enumerate(i):
        idx[k] = letter
    for k, letter in enumerate(j):
        idx[start + k] = letter
    return float(W[tuple(idx)].sum())
