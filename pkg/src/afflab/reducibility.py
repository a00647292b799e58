"""Invariant subspaces, block-triangular forms and proximality searches.

Irreducibility is never proven here. "No invariant subspace found" always
means "not found at (trials, tol)", and the reports carry those parameters.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InputError
from .linalg import Subspace
from .systems import SystemSpec, Word, finite_system

DEFAULT_TRIALS = 32
DEFAULT_TOL = 1e-8
COND_LIMIT = 1e8


def _generators(system, N: Optional[int] = None) -> np.ndarray:
    if isinstance(system, SystemSpec):
        if system.is_finite:
            return system.linear_parts()
        if N is None:
            raise InputError("countable systems need a truncation N")
        return system.linear_parts(system.representable_limit(int(N)))
    mats = np.asarray(system, dtype=float)
    if mats.ndim == 2:
        mats = mats[None]
    if mats.ndim != 3 or mats.shape[1] != mats.shape[2]:
        raise InputError("expected a stack of square matrices")
    return mats


def _normalised(mats: np.ndarray) -> np.ndarray:
    scale = np.max(np.abs(mats), axis=(1, 2))
    if np.any(scale == 0):
        raise InputError("zero matrix in tuple")
    return mats / scale[:, None, None]


def algebra_dimension(system, word_cap: int = 8, tol: float = 1e-10, N: Optional[int] = None) -> int:
    """Dimension of span{A_w : 1 ≤ |w| ≤ word_cap} inside the d²-dimensional matrix space."""
    G = _normalised(_generators(system, N))
    d = G.shape[1]
    basis = np.zeros((d * d, 0))

    def absorb(M):
        nonlocal basis
        v = M.ravel()
        nv = np.linalg.norm(v)
        if nv == 0:
            return False
        v = v / nv
        for _ in range(2):
            v = v - basis @ (basis.T @ v)
        r = np.linalg.norm(v)
        if r <= tol:
            return False
        basis = np.column_stack([basis, v / r])
        return True

    frontier = [g for g in G if absorb(g)]
    for _ in range(word_cap - 1):
        if not frontier or basis.shape[1] == d * d:
            break
        fresh = []
        for M in frontier:
            for g in G:
                P = M @ g
                P = P / np.max(np.abs(P))
                if absorb(P):
                    fresh.append(P)
        frontier = fresh
    return basis.shape[1]


def invariance_defect(gens: np.ndarray, W: Subspace) -> float:
    """max_i ‖(I − P_W) A_i Q_W‖ / ‖A_i‖."""
    Q = W.basis
    worst = 0.0
    for A in gens:
        img = A @ Q
        res = img - Q @ (Q.T @ img)
        worst = max(worst, np.linalg.norm(res, 2) / np.linalg.norm(A, 2))
    return float(worst)


def _refine(gens: np.ndarray, W: Subspace, rounds: int = 3) -> Subspace:
    r = W.rank
    Q = W.basis
    for _ in range(rounds):
        blocks = [Q] + [A @ Q / np.linalg.norm(A, 2) for A in gens]
        U, _, _ = np.linalg.svd(np.hstack(blocks), full_matrices=False)
        Q = U[:, :r]
    return Subspace(Q)


def _random_element(gens: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Random convex combination of at most 2d word products of length ≤ 3."""
    k, d, _ = gens.shape
    terms = rng.integers(1, 2 * d + 1)
    R = np.zeros((d, d))
    w = rng.dirichlet(np.ones(terms))
    for c in w:
        L = rng.integers(1, 4)
        M = np.eye(d)
        for i in rng.integers(0, k, size=L):
            M = M @ gens[i]
        R += c * M / np.max(np.abs(M))
    return R


def _primary_subspaces(R: np.ndarray, cluster_tol: float = 1e-6) -> list:
    """Real primary subspaces of R: 1-dim real and 2-dim complex-pair blocks, with multiplicity."""
    d = R.shape[0]
    lam = np.linalg.eigvals(R)
    scale = max(1.0, float(np.max(np.abs(lam))))
    clusters = []
    for z in lam:
        if z.imag < -cluster_tol * scale:
            continue
        for c in clusters:
            if abs(c[0] - z) <= cluster_tol * scale:
                c[1] += 1
                break
        else:
            clusters.append([z, 1])
    out = []
    for z, mult in clusters:
        if abs(z.imag) <= cluster_tol * scale:
            base = R - z.real * np.eye(d)
            dim = mult
        else:
            base = R @ R - 2 * z.real * R + abs(z) ** 2 * np.eye(d)
            dim = 2 * mult
        # the primary subspace is the kernel of base^mult
        _, _, Vt = np.linalg.svd(np.linalg.matrix_power(base, mult))
        out.append(Vt[d - dim:].T)
    return out


def _line_candidates(gens: np.ndarray, R: np.ndarray) -> list:
    out = []
    for M in [R, *gens]:
        lam, V = np.linalg.eig(M)
        for j in range(len(lam)):
            v = V[:, j]
            if abs(lam[j].imag) <= 1e-12 * max(1.0, abs(lam[j])):
                out.append(np.real(v)[:, None])
            elif lam[j].imag > 0:
                out.append(np.column_stack([v.real, v.imag]))
    return out


def _closure(gens: np.ndarray, V: np.ndarray, rank_tol: float = 1e-7) -> Optional[Subspace]:
    d = gens.shape[1]
    try:
        W = Subspace.span(V)
    except InputError:
        return None
    for _ in range(d):
        imgs = [W.basis] + [A @ W.basis / np.linalg.norm(A, 2) for A in gens]
        U, sv, _ = np.linalg.svd(np.hstack(imgs), full_matrices=False)
        r = int(np.sum(sv > rank_tol * sv[0]))
        if r == W.rank:
            return W
        W = Subspace(U[:, :r])
        if r == d:
            return W
    return W


def _candidates(gens: np.ndarray, rng: np.random.Generator) -> list:
    d = gens.shape[1]
    R = _random_element(gens, rng)
    prim = _primary_subspaces(R)
    cands = []
    if len(prim) > 1:
        for r in range(1, len(prim)):
            for combo in itertools.combinations(range(len(prim)), r):
                V = np.hstack([prim[j] for j in combo])
                if V.shape[1] < d:
                    cands.append(V)
    for V in _line_candidates(gens, R):
        W = _closure(gens, V)
        if W is not None and W.rank < d:
            cands.append(W.basis)
    return cands


def _search(gens: np.ndarray, trials: int, tol: float, rng: np.random.Generator) -> Optional[Subspace]:
    d = gens.shape[1]
    if d == 1:
        return None
    best = None
    for _ in range(max(1, trials)):
        for V in _candidates(gens, rng):
            try:
                W = Subspace.span(V)
            except InputError:
                continue
            if not (0 < W.rank < d) or (best is not None and W.rank >= best.rank):
                continue
            if invariance_defect(gens, W) > tol:
                W = _refine(gens, W)
                if invariance_defect(gens, W) > tol:
                    continue
            best = W
        if best is not None and best.rank == 1:
            break
    return best


def _complement(W: Subspace) -> Subspace:
    U, _, _ = np.linalg.svd(W.basis, full_matrices=True)
    return Subspace(U[:, W.rank:])


def find_invariant_subspace(system, trials: int = DEFAULT_TRIALS, tol: float = DEFAULT_TOL,
                            seed: int = 0, N: Optional[int] = None) -> Optional[Subspace]:
    """A common invariant subspace of minimal found dimension, or None at (trials, tol).

    Subspaces invariant under the transposed tuple are also searched; their
    orthogonal complements are invariant under the original tuple.
    """
    gens = _normalised(_generators(system, N))
    rng = np.random.default_rng(seed)
    direct = _search(gens, trials, tol, rng)
    if direct is not None and direct.rank == 1:
        return direct
    dual = _search(np.transpose(gens, (0, 2, 1)), trials, tol, rng)
    if dual is not None:
        comp = _complement(dual)
        if invariance_defect(gens, comp) <= tol and (direct is None or comp.rank < direct.rank):
            return comp
    return direct


@dataclass
class BlockStructure:
    conjugator: np.ndarray
    block_dims: list
    diagonal_blocks: list
    irreducible_flags: list
    completely_reducible: bool
    cond: float
    ill_conditioned: bool = False
    trials: int = DEFAULT_TRIALS
    tol: float = DEFAULT_TOL
    off_block_defect: float = 0.0
    translations: Optional[np.ndarray] = None
    notes: list = field(default_factory=list)

    @property
    def confidence(self) -> str:
        return f"no invariant subspace found at trials={self.trials}, tol={self.tol:g}"

    def block_diagonal_matrices(self) -> np.ndarray:
        d = sum(self.block_dims)
        out = np.zeros((len(self.diagonal_blocks), d, d))
        for i, blocks in enumerate(self.diagonal_blocks):
            o = 0
            for B in blocks:
                m = B.shape[0]
                out[i, o:o + m, o:o + m] = B
                o += m
        return out

    def block_diagonal_system(self) -> SystemSpec:
        """The comparison system with the same pressure (finite systems)."""
        return finite_system(self.block_diagonal_matrices(), self.translations, name="block_diagonal")

    def is_diagonal(self) -> bool:
        return all(m == 1 for m in self.block_dims)


def _sylvester_split(T: np.ndarray, r: int, tol: float) -> Optional[np.ndarray]:
    """Y with B11 Y − Y B22 = −C for every map, if one exists within tol."""
    k, m, _ = T.shape
    q = m - r
    rows, rhs = [], []
    for Ti in T:
        B11, C, B22 = Ti[:r, :r], Ti[:r, r:], Ti[r:, r:]
        # vec(B11 Y − Y B22) = (I ⊗ B11 − B22ᵀ ⊗ I) vec(Y), column-major vec
        rows.append(np.kron(np.eye(q), B11) - np.kron(B22.T, np.eye(r)))
        rhs.append(-C.ravel(order="F"))
    A = np.vstack(rows)
    b = np.concatenate(rhs)
    if np.linalg.norm(b) == 0:
        return np.zeros((r, q))
    y, *_ = np.linalg.lstsq(A, b, rcond=None)
    res = np.linalg.norm(A @ y - b)
    if res > tol * max(1.0, np.linalg.norm(A, 2) * np.linalg.norm(y)):
        return None
    return y.reshape((r, q), order="F")


def _split(gens: np.ndarray, trials: int, tol: float, rng, allow_diag: bool):
    """Return (X, dims, flags, split_ok) with X⁻¹ A_i X block upper triangular."""
    m = gens.shape[1]
    W = find_invariant_subspace(gens, trials=trials, tol=tol, seed=int(rng.integers(2**31)))
    if W is None:
        return np.eye(m), [m], [True], True
    r = W.rank
    Q = np.hstack([W.basis, _complement(W).basis])
    T = np.einsum("ji,ajk,kl->ail", Q, gens, Q)
    P = np.eye(m)
    split_ok = False
    if allow_diag:
        Y = _sylvester_split(T, r, 1e-9)
        if Y is not None:
            P[:r, r:] = Y
            Pinv = np.eye(m)
            Pinv[:r, r:] = -Y
            T = np.einsum("ij,ajk,kl->ail", Pinv, T, P)
            split_ok = True
    X1, d1, f1, ok1 = _split(T[:, :r, :r], trials, tol, rng, allow_diag and split_ok)
    X2, d2, f2, ok2 = _split(T[:, r:, r:], trials, tol, rng, allow_diag and split_ok)
    D = np.zeros((m, m))
    D[:r, :r] = X1
    D[r:, r:] = X2
    return Q @ P @ D, d1 + d2, f1 + f2, split_ok and ok1 and ok2


def _block_defect(T: np.ndarray, dims: list) -> float:
    worst = 0.0
    offs = np.cumsum([0] + dims)
    for Ti in T:
        nrm = np.linalg.norm(Ti, 2)
        for a in range(len(dims)):
            for b in range(a):
                blk = Ti[offs[a]:offs[a + 1], offs[b]:offs[b + 1]]
                worst = max(worst, np.linalg.norm(blk) / nrm)
    return float(worst)


def detriangularise(system, trials: int = DEFAULT_TRIALS, tol: float = DEFAULT_TOL, seed: int = 0,
                    N: Optional[int] = None, retries: int = 3) -> BlockStructure:
    """Block upper-triangular form with irreducible diagonal blocks.

    When every split admits an invariant complement the conjugator makes the
    tuple block diagonal (completely reducible); otherwise an orthogonal
    conjugator gives the triangular form. An ill-conditioned split conjugator
    is retried with fresh randomness and then abandoned for the orthogonal one.
    """
    gens = _generators(system, N)
    if isinstance(system, SystemSpec):
        trans = system.translations(None if system.is_finite else system.representable_limit(int(N)))
    else:
        trans = None
    scale = np.max(np.abs(gens), axis=(1, 2))
    G = gens / scale[:, None, None]
    rng = np.random.default_rng(seed)
    notes = []
    result = None
    for attempt in range(retries + 1):
        allow = attempt < retries
        X, dims, flags, split_ok = _split(G, trials, tol, rng, allow_diag=allow)
        cond = float(np.linalg.cond(X))
        if cond <= COND_LIMIT:
            result = (X, dims, flags, split_ok and allow, cond)
            break
        notes.append(f"attempt {attempt}: conjugator condition {cond:.3g} exceeds {COND_LIMIT:g}")
    ill = False
    if result is None:
        ill = True
        X, dims, flags, _ = _split(G, trials, tol, rng, allow_diag=False)
        result = (X, dims, flags, False, float(np.linalg.cond(X)))
    X, dims, flags, complete, cond = result
    if ill:
        notes.append("flagged ill-conditioned; fell back to an orthogonal triangular form")
    Xinv = np.linalg.inv(X)
    T = np.einsum("ij,ajk,kl->ail", Xinv, gens, X)
    offs = np.cumsum([0] + dims)
    blocks = [[Ti[offs[t]:offs[t + 1], offs[t]:offs[t + 1]].copy() for t in range(len(dims))] for Ti in T]
    defect = _block_defect(T, dims)
    if defect > 1e-8 * max(1.0, cond):
        notes.append(f"off-block-lower defect {defect:.3g}")
    tr = None if trans is None else (Xinv @ trans.T).T
    return BlockStructure(conjugator=X, block_dims=list(dims), diagonal_blocks=blocks,
                          irreducible_flags=list(flags), completely_reducible=bool(complete and len(dims) > 1)
                          or len(dims) == 1, cond=cond, ill_conditioned=ill, trials=trials, tol=tol,
                          off_block_defect=defect, translations=tr, notes=notes)


def _eigen_gap(M: np.ndarray) -> float:
    lam = np.sort(np.abs(np.linalg.eigvals(M)))[::-1]
    if len(lam) < 2:
        return math.inf
    if lam[1] == 0:
        return math.inf
    return float(lam[0] / lam[1])


def proximality_search(system, max_word_len: int = 6, tol_gap: float = 1e-6, beam: int = 64,
                       N: Optional[int] = None) -> Optional[Word]:
    """Shortest found word whose product has a simple leading eigenvalue in modulus."""
    gens = _normalised(_generators(system, N))
    if gens.shape[1] == 1:
        return Word((0,))
    layer = [((), np.eye(gens.shape[1]))]
    for _ in range(max_word_len):
        scored = []
        for letters, M in layer:
            for i, g in enumerate(gens):
                P = M @ g
                P = P / np.max(np.abs(P))
                gap = _eigen_gap(P)
                if gap > 1 + tol_gap:
                    return Word(letters + (i,))
                scored.append((gap, letters + (i,), P))
        scored.sort(key=lambda x: (-x[0], x[1]))
        layer = [(w, P) for _, w, P in scored[:beam]]
    return None


@dataclass
class LineFamily:
    lines: list
    permutations: list

    @property
    def size(self) -> int:
        return len(self.lines)


def _line_image(A: np.ndarray, v: np.ndarray) -> np.ndarray:
    w = A @ v
    return w / np.linalg.norm(w)


def finite_line_orbit_search(system, max_orbit: int = 3, max_word_len: int = 3, tol: float = 1e-8,
                             N: Optional[int] = None) -> Optional[LineFamily]:
    """A finite union of at most max_orbit lines permuted by every generator, or None."""
    gens = _normalised(_generators(system, N))
    d = gens.shape[1]
    if d > 3:
        raise InputError("finite line orbit search is limited to d <= 3")
    cands = []

    def add(v):
        v = np.real(v)
        n = np.linalg.norm(v)
        if n == 0:
            return
        v = v / n
        for c in cands:
            if abs(abs(c @ v) - 1.0) <= tol:
                return
        cands.append(v)

    for L in range(1, max_word_len + 1):
        for word in itertools.product(range(len(gens)), repeat=L):
            M = np.eye(d)
            for i in word:
                M = M @ gens[i]
            lam, V = np.linalg.eig(M)
            for j in range(d):
                if abs(lam[j].imag) <= 1e-12 * max(1.0, abs(lam[j])):
                    add(V[:, j])
        if len(cands) > 24:
            break

    def match(v, family):
        for idx, c in enumerate(family):
            if abs(abs(c @ v) - 1.0) <= tol * 10:
                return idx
        return None

    for size in range(1, max_orbit + 1):
        for combo in itertools.combinations(range(len(cands)), size):
            fam = [cands[j] for j in combo]
            perms = []
            for A in gens:
                perm = [match(_line_image(A, v), fam) for v in fam]
                if None in perm or len(set(perm)) != size:
                    break
                perms.append(perm)
            else:
                return LineFamily(fam, perms)
    return None
