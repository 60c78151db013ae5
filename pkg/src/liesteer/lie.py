"""Generated Lie algebras and the rank certificates built on them.

The closure computation keeps an orthonormal basis under the real
Hilbert-Schmidt inner product Re tr(X^dag Y) and admits a bracket when its
residual after projection onto the current basis exceeds ``rank_tol``
relative to the candidate's norm.  The containment test projects the basis
to traceless parts and counts the rank: the traceless projection is a Lie
homomorphism from u(n) onto su(n), and su(n) is perfect, so a full-rank
traceless projection of a bracket-closed algebra already contains su(n)
via su(n) = [su(n), su(n)] subset [L, L] subset L.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ChainError
from .model import SystemModel, truncate
from .spectral import GAP_TOL, XiCertificate, gap_table, select, xi_set

RANK_TOL = 1e-9
SKEW_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class AlgebraBasis:
    """Orthonormal basis of the generated real Lie algebra at cutoff n."""

    n: int
    basis: tuple[np.ndarray, ...]
    dim: int
    depth_used: int
    generators_tag: str
    closed: bool
    rank_tol: float
    abelian: bool


@dataclass(frozen=True, eq=False)
class GeneratorSet:
    """Tagged skew-Hermitian generators derived from a system at cutoff n."""

    tag: str
    n: int
    labels: tuple[str, ...]
    matrices: tuple[np.ndarray, ...]
    xi: XiCertificate


@dataclass(frozen=True, eq=False)
class Chain:
    """A coupling walk linking every requested level, with resonance audit."""

    pairs: tuple[tuple[int, int], ...]
    nonresonant: bool
    resonance_witnesses: tuple[tuple[tuple[int, int], tuple[int, int]], ...]
    degeneracy_ok: bool
    degeneracy_witnesses: tuple[tuple[int, int], ...]
    levels: int
    tail_cutoff: Optional[int]

    def to_document(self) -> dict:
        return {
            "levels": self.levels,
            "pairs": [list(p) for p in self.pairs],
            "nonresonant": self.nonresonant,
            "resonance_witnesses": [
                {"edge": list(e), "pair": list(p)} for e, p in self.resonance_witnesses
            ],
            "degeneracy_hypothesis_ok": self.degeneracy_ok,
            "degeneracy_witnesses": [list(p) for p in self.degeneracy_witnesses],
            "tail_cutoff": self.tail_cutoff,
        }


def bracket(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Commutator XY - YX."""
    X = np.asarray(X)
    Y = np.asarray(Y)
    if X.shape != Y.shape or X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise ValueError(f"shape mismatch: {X.shape} vs {Y.shape}")
    return X @ Y - Y @ X


def _check_skew(M: np.ndarray, label: str = "generator"):
    if np.max(np.abs(M + M.conj().T)) > SKEW_TOL * max(1.0, float(np.max(np.abs(M)))):
        raise ValueError(f"{label} is not skew-Hermitian")


def _vec(M: np.ndarray) -> np.ndarray:
    return np.concatenate([M.real.ravel(), M.imag.ravel()])


def build_mn(system: SystemModel, n: int, xi: Optional[XiCertificate] = None) -> GeneratorSet:
    """Drift plus decoupled selections of the compressed coupled Hamiltonian,
    all multiplied by i."""
    if xi is None:
        xi = xi_set(system, n)
    pair = truncate(system, n)
    lam = system.eigenvalues(n)
    labels = ["drift"]
    mats = [1j * pair.h0]
    for sigma in xi.xi:
        labels.append(f"sel:{sigma:g}")
        mats.append(1j * select(pair.h1, sigma, lam).matrix)
    return GeneratorSet(tag="M_n", n=n, labels=tuple(labels), matrices=tuple(mats), xi=xi)


def build_vn(system: SystemModel, n: int, xi: Optional[XiCertificate] = None) -> GeneratorSet:
    """Skew drift plus decoupled selections of the skew coupling."""
    if xi is None:
        xi = xi_set(system, n)
    pair = truncate(system, n)
    lam = system.eigenvalues(n)
    labels = ["drift"]
    mats = [pair.a]
    for sigma in xi.xi:
        labels.append(f"sel:{sigma:g}")
        mats.append(select(pair.b, sigma, lam).matrix)
    return GeneratorSet(tag="V_n", n=n, labels=tuple(labels), matrices=tuple(mats), xi=xi)


def build_wn(
    system: SystemModel,
    n: int,
    nus: Sequence[float] = (0.25,),
    xi: Optional[XiCertificate] = None,
) -> GeneratorSet:
    """Tracking alphabet: drift, zero-gap selection, and mixed selections
    with mixing weights strictly inside (-1/2, 1/2)."""
    for nu in nus:
        if not -0.5 < nu < 0.5:
            raise ValueError(f"nu={nu} outside the open interval (-1/2, 1/2)")
    if xi is None:
        xi = xi_set(system, n)
    pair = truncate(system, n)
    lam = system.eigenvalues(n)
    e0 = select(pair.b, 0.0, lam).matrix
    labels = ["drift", "sel:0"]
    mats = [pair.a, e0]
    for sigma in xi.xi:
        if abs(sigma) <= GAP_TOL:
            continue
        for nu in nus:
            labels.append(f"sel:{sigma:g}:nu={nu:g}")
            mats.append(e0 + nu * select(pair.b, sigma, lam).matrix)
    return GeneratorSet(tag="W_n", n=n, labels=tuple(labels), matrices=tuple(mats), xi=xi)


def generated_algebra(
    generators: Iterable[np.ndarray],
    depth_cap: Optional[int] = None,
    rank_tol: float = RANK_TOL,
    tag: str = "",
) -> AlgebraBasis:
    """Close the real span of the generators under the commutator.

    Deterministic given the generator order.  Stops at closure, at the full
    dimension n^2, or at ``depth_cap`` bracket generations (default 2 n^2);
    hitting the cap is reported through ``closed=False``, not an error.
    """
    gens = [np.asarray(g, dtype=complex) for g in generators]
    if not gens:
        raise ValueError("need at least one generator")
    n = gens[0].shape[0]
    for g in gens:
        if g.shape != (n, n):
            raise ValueError("generators must share one square shape")
        _check_skew(g)
    if depth_cap is None:
        depth_cap = 2 * n * n

    full_dim = n * n
    basis_mats: list[np.ndarray] = []
    basis_vecs = np.zeros((0, 2 * n * n))

    def admit(M: np.ndarray) -> bool:
        nonlocal basis_vecs
        v = _vec(M)
        norm = np.linalg.norm(v)
        if norm <= rank_tol:
            return False
        # two-pass Gram-Schmidt for orthogonality at the rank_tol scale
        r = v - basis_vecs.T @ (basis_vecs @ v)
        r -= basis_vecs.T @ (basis_vecs @ r)
        rnorm = np.linalg.norm(r)
        if rnorm <= rank_tol * norm:
            return False
        r /= rnorm
        basis_vecs = np.vstack([basis_vecs, r])
        half = n * n
        basis_mats.append((r[:half] + 1j * r[half:]).reshape(n, n))
        return True

    new_start = 0
    for g in gens:
        admit(g)
    depth = 0
    closed = True
    max_bracket_norm = 0.0
    while len(basis_mats) > new_start and len(basis_mats) < full_dim:
        if depth >= depth_cap:
            closed = False
            break
        depth += 1
        lo, hi = new_start, len(basis_mats)
        new_start = hi
        for i in range(lo, hi):
            for j in range(i):
                c = bracket(basis_mats[i], basis_mats[j])
                max_bracket_norm = max(max_bracket_norm, float(np.linalg.norm(c)))
                admit(c)
            if len(basis_mats) >= full_dim:
                break

    dim = len(basis_mats)
    abelian = closed and max_bracket_norm <= 10 * rank_tol
    for m in basis_mats:
        m.setflags(write=False)
    return AlgebraBasis(
        n=n,
        basis=tuple(basis_mats),
        dim=dim,
        depth_used=depth,
        generators_tag=tag,
        closed=closed,
        rank_tol=rank_tol,
        abelian=abelian,
    )


def contains_su(basis: AlgebraBasis) -> bool:
    """True when the traceless projections of the basis span the full
    traceless skew-Hermitian space (real dimension n^2 - 1)."""
    if not basis.closed:
        raise ValueError("closure did not terminate; containment test needs a closed basis")
    n = basis.n
    if basis.dim < n * n - 1:
        return False
    rows = []
    for X in basis.basis:
        T = X - (np.trace(X) / n) * np.eye(n)
        rows.append(_vec(T))
    A = np.array(rows)
    s = np.linalg.svd(A, compute_uv=False)
    rank = int(np.sum(s > basis.rank_tol * s[0])) if s.size and s[0] > 0 else 0
    return rank >= n * n - 1


@dataclass(frozen=True, eq=False)
class CertificationResult:
    """Outcome of the controllability-condition search over cutoffs."""

    certified: bool
    n: Optional[int]
    xi: Optional[XiCertificate]
    dim: Optional[int]
    depth_used: Optional[int]
    reasons: tuple[tuple[int, str], ...]
    n0: int
    n_max: int
    rank_tol: float

    def to_document(self) -> dict:
        doc = {
            "certified": self.certified,
            "n0": self.n0,
            "n_max": self.n_max,
            "rank_tol": self.rank_tol,
            "reasons": [{"n": n, "reason": r} for n, r in self.reasons],
        }
        if self.certified:
            doc.update(
                {
                    "n": self.n,
                    "dim": self.dim,
                    "depth_used": self.depth_used,
                    "xi": self.xi.to_document(),
                    "note": "finite certificate: condition verified at this cutoff only",
                }
            )
        return doc


def lie_galerkin_search(
    system: SystemModel,
    n0: int,
    n_max: int,
    rank_tol: float = RANK_TOL,
    depth_cap: Optional[int] = None,
) -> CertificationResult:
    """Scan cutoffs n0+1 .. n_max for one where the zero gap decouples and the
    generated algebra contains the traceless skew-Hermitian matrices."""
    if n_max < n0 + 1:
        raise ValueError("n_max must be at least n0 + 1")
    reasons: list[tuple[int, str]] = []
    for n in range(n0 + 1, n_max + 1):
        xi = xi_set(system, n)
        if not any(abs(s) <= GAP_TOL for s in xi.xi):
            reasons.append((n, "zero gap not decoupled"))
            continue
        gens = build_mn(system, n, xi=xi)
        algebra = generated_algebra(gens.matrices, depth_cap=depth_cap, rank_tol=rank_tol, tag=gens.tag)
        if not algebra.closed:
            reasons.append((n, f"closure not reached within depth cap (dim {algebra.dim})"))
            continue
        if contains_su(algebra):
            return CertificationResult(
                certified=True,
                n=n,
                xi=xi,
                dim=algebra.dim,
                depth_used=algebra.depth_used,
                reasons=tuple(reasons),
                n0=n0,
                n_max=n_max,
                rank_tol=rank_tol,
            )
        if algebra.abelian:
            reasons.append((n, "abelian"))
        else:
            reasons.append((n, f"dim {algebra.dim} below required {n * n - 1} after traceless projection"))
    return CertificationResult(
        certified=False,
        n=None,
        xi=None,
        dim=None,
        depth_used=None,
        reasons=tuple(reasons),
        n0=n0,
        n_max=n_max,
        rank_tol=rank_tol,
    )


def _coupling_walk(system: SystemModel, levels: int) -> list[tuple[int, int]]:
    """Walk over the coupling graph visiting every level, BFS-tree based."""
    adjacency = {v: set() for v in range(1, levels + 1)}
    for j, k in system.coupling.support_pairs_upto(levels):
        adjacency[j].add(k)
        adjacency[k].add(j)
    seen = {1}
    parent = {1: None}
    order = deque([1])
    bfs = []
    while order:
        v = order.popleft()
        bfs.append(v)
        for w in sorted(adjacency[v]):
            if w not in seen:
                seen.add(w)
                parent[w] = v
                order.append(w)
    if len(seen) != levels:
        missing = sorted(set(range(1, levels + 1)) - seen)
        raise ChainError(f"coupling graph disconnected: levels {missing} unreachable from level 1")

    # depth-first walk of the BFS tree with backtracking edges, cut at the
    # moment the last level is first reached (shortest certificate on paths)
    children = {v: [] for v in range(1, levels + 1)}
    for v, p in parent.items():
        if p is not None:
            children[p].append(v)
    pairs: list[tuple[int, int]] = []
    discovered = {1}
    last_discovery_at = 0

    def dfs(v):
        nonlocal last_discovery_at
        for w in sorted(children[v]):
            pairs.append((v, w))
            discovered.add(w)
            last_discovery_at = len(pairs)
            dfs(w)
            pairs.append((w, v))

    dfs(1)
    return pairs[:last_discovery_at]


def chain_check(system: SystemModel, levels: int) -> Chain:
    """Find a coupling walk linking the first ``levels`` levels and audit it
    for gap resonances against every coupled pair up to the certified tail.

    Also checks the degeneracy hypothesis: coupling must vanish between
    distinct levels sharing one eigenvalue.
    """
    if levels < 2:
        raise ValueError("need at least two levels")
    pairs = _coupling_walk(system, levels)

    lam_small = system.eigenvalues(levels)
    edge_gaps = {}
    for s1, s2 in pairs:
        edge_gaps[(min(s1, s2), max(s1, s2))] = abs(lam_small[s1 - 1] - lam_small[s2 - 1])
    gap_max = max(edge_gaps.values())

    from .spectral import _tail_cutoff  # shared termination certificate

    cutoff, _method = _tail_cutoff(system, levels, gap_max)
    scan_to = max(levels, cutoff or 0)
    lam = system.eigenvalues(scan_to)

    witnesses: list[tuple[tuple[int, int], tuple[int, int]]] = []
    degeneracy_witnesses: list[tuple[int, int]] = []
    coupled = system.coupling.support_pairs_upto(scan_to)
    for t1, t2 in coupled:
        if abs(lam[t1 - 1] - lam[t2 - 1]) <= GAP_TOL and abs(system.coupling.value(t1, t2)) > 0:
            degeneracy_witnesses.append((t1, t2))
    for (e1, e2), g in sorted(edge_gaps.items()):
        for t1, t2 in coupled:
            if {t1, t2} == {e1, e2}:
                continue
            if abs(abs(lam[t1 - 1] - lam[t2 - 1]) - g) <= GAP_TOL:
                witnesses.append(((e1, e2), (t1, t2)))

    return Chain(
        pairs=tuple(pairs),
        nonresonant=not witnesses,
        resonance_witnesses=tuple(witnesses),
        degeneracy_ok=not degeneracy_witnesses,
        degeneracy_witnesses=tuple(degeneracy_witnesses),
        levels=levels,
        tail_cutoff=cutoff,
    )


def vn_equivalence_check(system: SystemModel, n: int, rank_tol: float = RANK_TOL) -> bool:
    """Closures of the skew collection and of the i-Hamiltonian collection span
    the same algebra (mutual projection residuals below rank_tol)."""
    xi = xi_set(system, n)
    alg_v = generated_algebra(build_vn(system, n, xi=xi).matrices, rank_tol=rank_tol, tag="V_n")
    alg_m = generated_algebra(build_mn(system, n, xi=xi).matrices, rank_tol=rank_tol, tag="M_n")
    if not (alg_v.closed and alg_m.closed):
        raise ValueError("closure failed on one side")
    if alg_v.dim != alg_m.dim:
        return False
    V = np.array([_vec(X) for X in alg_v.basis])
    M = np.array([_vec(X) for X in alg_m.basis])
    res_v = np.linalg.norm(V - (V @ M.T) @ M, axis=1).max() if len(V) else 0.0
    res_m = np.linalg.norm(M - (M @ V.T) @ V, axis=1).max() if len(M) else 0.0
    return bool(max(res_v, res_m) < max(10 * rank_tol, 1e-8))
