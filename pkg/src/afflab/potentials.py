"""Restricted-norm potentials and empirical quasi-multiplicativity certificates.

A potential is described by exterior grades k_j, exponents β_j and a finite
set of tuples (W_1, ..., W_p) with W_j a subspace of the k_j-th exterior power.
Its value on a matrix M is max over tuples of ∏_j ‖∧^{k_j}M restricted to W_j‖^{β_j}.
With every W_j the full space and grades (⌊s⌋, ⌊s⌋+1) this is exactly φ^s(M).
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field
from math import comb
from typing import Optional

import numpy as np

from .errors import InputError
from .linalg import Subspace, exterior_power_batch, log_phi_from_logsv, log_singular_values_batch
from .systems import SystemSpec


@dataclass
class SubspaceFamilyTuple:
    dim: int
    grades: tuple
    betas: tuple
    tuples: list
    full: bool = False

    def __post_init__(self):
        if not self.tuples:
            raise InputError("subspace family must be nonempty")
        if len(self.grades) != len(self.betas):
            raise InputError("grades and betas differ in length")
        if any(b < 0 for b in self.betas):
            raise InputError("exponents must be non-negative")
        for tup in self.tuples:
            if len(tup) != len(self.grades):
                raise InputError("tuple length does not match the number of factors")
            for W, k in zip(tup, self.grades):
                if W.ambient_dim != comb(self.dim, k):
                    raise InputError(f"subspace ambient {W.ambient_dim} != C({self.dim},{k})")

    @property
    def beta(self) -> float:
        return float(sum(self.betas))

    @property
    def degree(self) -> float:
        """Homogeneity: Ψ(cM) = |c|^degree Ψ(M)."""
        return float(sum(b * k for b, k in zip(self.betas, self.grades)))

    @classmethod
    def from_lists(cls, dim: int, grades, betas, lists) -> "SubspaceFamilyTuple":
        return cls(dim, tuple(grades), tuple(betas), [tuple(t) for t in itertools.product(*lists)])

    def to_json(self) -> dict:
        return {"dim": self.dim, "grades": list(self.grades), "betas": list(self.betas), "full": self.full,
                "tuples": [[W.basis.tolist() for W in tup] for tup in self.tuples]}

    @classmethod
    def from_json(cls, obj: dict) -> "SubspaceFamilyTuple":
        tuples = [tuple(Subspace(np.asarray(b, dtype=float)) for b in tup) for tup in obj["tuples"]]
        return cls(int(obj["dim"]), tuple(obj["grades"]), tuple(obj["betas"]), tuples, bool(obj.get("full")))


def split_exponent(d: int, s: float) -> tuple:
    """Grades and exponents with φ^s(M) = ∏ ‖∧^{k_j} M‖^{β_j}."""
    if s < 0:
        raise InputError("s must be non-negative")
    if s >= d:
        return (d,), (s / d,)
    k = int(math.floor(s))
    frac = s - k
    grades, betas = [], []
    if k > 0:
        grades.append(k)
        betas.append(1.0 - frac)
    if frac > 0:
        grades.append(k + 1)
        betas.append(frac)
    return tuple(grades), tuple(betas)


def full_space_family(d: int, s: float) -> SubspaceFamilyTuple:
    grades, betas = split_exponent(d, s)
    tup = tuple(Subspace.full(comb(d, k)) for k in grades)
    return SubspaceFamilyTuple(d, grades, betas, [tup], full=True)


def p_bound(d: int, s: float) -> int:
    """Upper bound on the number of families needed at exponent s."""
    k = int(math.floor(s))
    if s == k or s >= d:
        return comb(d, min(k, d))
    return comb(d, k) * comb(d, k + 1)


def log_psi_batch(mats: np.ndarray, family: SubspaceFamilyTuple) -> np.ndarray:
    """log Ψ for a stack (B, d, d) of matrices."""
    mats = np.asarray(mats, dtype=float)
    if mats.shape[1] != family.dim:
        raise InputError("matrix dimension does not match the family")
    if family.full:
        s = family.degree
        return log_phi_from_logsv(log_singular_values_batch(mats), s)
    B = mats.shape[0]
    ext = {k: exterior_power_batch(mats, k) for k in set(family.grades)}
    best = np.full(B, -np.inf)
    for tup in family.tuples:
        val = np.zeros(B)
        for W, k, b in zip(tup, family.grades, family.betas):
            if b == 0:
                continue
            restricted = ext[k] @ W.basis
            val += b * np.log(np.linalg.norm(restricted, ord=2, axis=(1, 2)))
        best = np.maximum(best, val)
    return best


def psi(M, family: SubspaceFamilyTuple) -> float:
    """Ψ(M) for a single matrix (typically a word product)."""
    A = np.asarray(M, dtype=float)
    if A.ndim != 2 or A.shape[0] != family.dim:
        raise InputError("matrix dimension does not match the family")
    return float(np.exp(log_psi_batch(A[None], family)[0]))


def _words(n_letters: int, max_len: int, min_len: int = 1) -> list:
    out = []
    for L in range(min_len, max_len + 1):
        out.extend(itertools.product(range(n_letters), repeat=L))
    return out


def _product_of(gens, w, cache):
    for j in range(1, len(w) + 1):
        if w[:j] not in cache:
            P, c = cache[w[:j - 1]]
            M = P @ gens[w[j - 1]]
            m = float(np.max(np.abs(M)))
            cache[w[:j]] = (M / m, c + math.log(m))
    return cache[w]


def _products(gens: np.ndarray, words: list) -> tuple:
    """Normalised products with log scales, sharing prefixes."""
    cache = {(): (np.eye(gens.shape[1]), 0.0)}
    pairs = [_product_of(gens, tuple(w), cache) for w in words]
    return np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs])


def _system_gens(system, N=None) -> np.ndarray:
    if isinstance(system, SystemSpec):
        if system.is_finite:
            return system.linear_parts()
        if N is None:
            raise InputError("countable systems need a truncation N")
        return system.linear_parts(system.representable_limit(int(N)))
    return np.asarray(system, dtype=float)


def _log_psi_words(gens, words, family):
    mats, scales = _products(gens, words)
    return log_psi_batch(mats, family) + family.degree * scales


@dataclass
class SubmultReport:
    holds: bool
    pairs_checked: int
    violations: int
    worst_log_excess: float
    closed: bool
    closure_violation: Optional[dict] = None


def _image(E: np.ndarray, W: Subspace) -> Subspace:
    return Subspace.span(E @ W.basis)


def closure_check(gens: np.ndarray, family: SubspaceFamilyTuple, tol: float = 1e-6) -> Optional[dict]:
    """None if each generator maps every family tuple onto a family tuple (within angle tol)."""
    for i, A in enumerate(gens):
        ext = {k: exterior_power_batch(A[None], k)[0] for k in set(family.grades)}
        for t, tup in enumerate(family.tuples):
            img = tuple(_image(ext[k], W) for W, k in zip(tup, family.grades))
            hit = any(all(a.distance(b) <= tol for a, b in zip(img, other)) for other in family.tuples)
            if not hit:
                return {"generator": i, "tuple": t, "image": [W.basis.tolist() for W in img]}
    return None


def submultiplicativity_check(system, family: SubspaceFamilyTuple, word_len: int = 4, tol: float = 1e-9,
                              closure_tol: float = 1e-6, N: Optional[int] = None) -> SubmultReport:
    """Ψ(ij) ≤ Ψ(i)Ψ(j)(1+tol) over all words with 1 ≤ |i|, |j| ≤ word_len."""
    gens = _system_gens(system, N)
    words = _words(len(gens), word_len)
    index = {w: n for n, w in enumerate(words)}
    lp = _log_psi_words(gens, words, family)
    pairs = [(a, b) for a in words for b in words if len(a) + len(b) <= 2 * word_len]
    joined = [a + b for a, b in pairs]
    lj = _log_psi_words(gens, joined, family)
    excess = np.array([lj[n] - lp[index[a]] - lp[index[b]] for n, (a, b) in enumerate(pairs)])
    bad = int(np.sum(excess > math.log1p(tol)))
    closure = closure_check(gens, family, closure_tol)
    return SubmultReport(holds=bad == 0, pairs_checked=len(pairs), violations=bad,
                         worst_log_excess=float(excess.max()), closed=closure is None,
                         closure_violation=closure)


@dataclass
class QMCertificate:
    s: float
    families: list
    connecting_words: list
    kappa: float
    beta: float
    checked_len: int
    violations: int = 0
    system_name: str = ""
    notes: list = field(default_factory=list)

    @property
    def log_K(self) -> float:
        return -self.beta * math.log(self.kappa)

    @property
    def full_space(self) -> bool:
        return len(self.families) == 1 and self.families[0].full

    @property
    def ref(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return "qm-" + hashlib.sha256(blob).hexdigest()[:12]

    def to_json(self) -> dict:
        return {"s": self.s, "families": [f.to_json() for f in self.families],
                "connecting_words": [list(w) for w in self.connecting_words], "kappa": self.kappa,
                "beta": self.beta, "checked_len": self.checked_len, "violations": self.violations,
                "system_name": self.system_name}

    @classmethod
    def from_json(cls, obj: dict) -> "QMCertificate":
        return cls(s=float(obj["s"]), families=[SubspaceFamilyTuple.from_json(f) for f in obj["families"]],
                   connecting_words=[tuple(w) for w in obj["connecting_words"]], kappa=float(obj["kappa"]),
                   beta=float(obj["beta"]), checked_len=int(obj["checked_len"]),
                   violations=int(obj.get("violations", 0)), system_name=obj.get("system_name", ""))


def certificate_search(system, s: float, max_F_len: int = 2, checked_len: int = 4, family=None,
                       floor: float = 1e-12, max_F_size: int = 8, N: Optional[int] = None) -> Optional[QMCertificate]:
    """Greedy search for (F, κ) with Ψ(i)Ψ(j) ≤ κ^{-β} max_{k∈F} Ψ(ikj) on all checked pairs.

    F may contain the empty word. The returned certificate is only verified
    for |i|, |j| ≤ checked_len.
    """
    gens = _system_gens(system, N)
    d = gens.shape[1]
    fam = family if family is not None else full_space_family(d, s)
    if fam.beta == 0:
        return QMCertificate(s, [fam], [()], 1.0, 0.0, checked_len,
                             system_name=getattr(system, "name", ""))
    words = _words(len(gens), checked_len)
    cands = [()] + _words(len(gens), max_F_len)
    lp = _log_psi_words(gens, words, fam)
    base = lp[:, None] + lp[None, :]
    # ratios[c, a, b] = log Ψ(a c b) − log Ψ(a) − log Ψ(b)
    ratios = np.empty((len(cands), len(words), len(words)))
    for c, k in enumerate(cands):
        joined = [a + k + b for a in words for b in words]
        ratios[c] = _log_psi_words(gens, joined, fam).reshape(len(words), len(words)) - base
    chosen = []
    current = np.full((len(words), len(words)), -np.inf)
    best_min = -np.inf
    while len(chosen) < max_F_size:
        gains = [np.min(np.maximum(current, ratios[c])) if c not in chosen else -np.inf
                 for c in range(len(cands))]
        c = int(np.argmax(gains))
        if chosen and gains[c] <= best_min + 1e-12:
            break
        chosen.append(c)
        current = np.maximum(current, ratios[c])
        best_min = gains[c]
    log_kappa = best_min / fam.beta
    if not math.isfinite(log_kappa) or log_kappa < math.log(floor):
        return None
    kappa = min(1.0, math.exp(log_kappa))
    return QMCertificate(s=s, families=[fam], connecting_words=[cands[c] for c in chosen], kappa=kappa,
                         beta=fam.beta, checked_len=checked_len, violations=0,
                         system_name=getattr(system, "name", ""))


def verify_certificate(system, cert: QMCertificate, check_len: Optional[int] = None,
                       rtol: float = 1e-9, N: Optional[int] = None) -> int:
    """Count violations of the certificate inequality up to check_len."""
    gens = _system_gens(system, N)
    L = cert.checked_len if check_len is None else check_len
    words = _words(len(gens), L)
    fam = cert.families[0]
    lp = _log_psi_words(gens, words, fam)
    best = np.full((len(words), len(words)), -np.inf)
    for k in cert.connecting_words:
        joined = [a + tuple(k) + b for a in words for b in words]
        best = np.maximum(best, _log_psi_words(gens, joined, fam).reshape(len(words), len(words)))
    lhs = lp[:, None] + lp[None, :]
    return int(np.sum(lhs > best + cert.log_K + math.log1p(rtol)))


def norm_equivalence_constant(system, families: list, s: float, word_len: int = 4,
                              N: Optional[int] = None) -> float:
    """Smallest K with K⁻¹φ^s ≤ max_t Ψ^(t) ≤ Kφ^s over words up to word_len."""
    gens = _system_gens(system, N)
    words = _words(len(gens), word_len)
    mats, scales = _products(gens, words)
    lphi = log_phi_from_logsv(log_singular_values_batch(mats), s) + s * scales
    lmax = np.max([log_psi_batch(mats, f) + f.degree * scales for f in families], axis=0)
    return float(math.exp(np.max(np.abs(lmax - lphi))))
