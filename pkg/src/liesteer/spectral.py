"""Spectral gap tables, gap selections, and the decoupled-gap sets.

Gap equality is tolerance-based: two gaps are considered equal when they
differ by at most ``GAP_TOL`` (eigenvalues are user data, typically exact
integers or rationals).  Near-coincidences between ``GAP_TOL`` and
``NEAR_TOL`` are recorded as warnings in the certificates rather than
silently resolved.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import TailUndecidableError
from .model import SystemModel, truncate

GAP_TOL = 1e-9
NEAR_TOL = 1e-6
TAIL_SCAN_CAP = 10**6


@dataclass(frozen=True, eq=False)
class GapTable:
    """Distinct spectral gaps among the first n levels with their realizing pairs."""

    n: int
    gaps: tuple[float, ...]                      # sorted, deduplicated, 0 always present
    pair_index: dict[float, tuple[tuple[int, int], ...]]  # gap -> ((l, k) with l > k)
    warnings: tuple[str, ...] = ()


@dataclass(frozen=True, eq=False)
class GapSelection:
    """A gap value with its selection matrix and membership flags."""

    sigma: float
    matrix: np.ndarray
    in_sigma_n: bool
    in_xi_n: Optional[bool] = None

    def __post_init__(self):
        self.matrix.setflags(write=False)


@dataclass(frozen=True, eq=False)
class XiCertificate:
    """Decoupled gaps at level n with exclusion witnesses and the tail cutoff used."""

    n: int
    sigma_n: tuple[float, ...]
    xi: tuple[float, ...]
    exclusions: dict[float, tuple[int, int]]     # excluded sigma -> witness (k, l)
    cutoff: Optional[int]                        # last tail level inspected, None if no crossing support
    method: str                                  # "divergence" | "support"
    warnings: tuple[str, ...] = ()

    def to_document(self) -> dict:
        return {
            "n": self.n,
            "sigma_n": list(self.sigma_n),
            "xi_n": list(self.xi),
            "exclusions": [
                {"sigma": s, "witness": list(w)} for s, w in sorted(self.exclusions.items())
            ],
            "tail_cutoff": self.cutoff,
            "termination": self.method,
            "gap_tol": GAP_TOL,
            "warnings": list(self.warnings),
        }


def gap_table(system: SystemModel, n: int) -> GapTable:
    """All distinct gaps |lambda_l - lambda_k| among the first n levels."""
    if n < 1:
        raise ValueError("n must be >= 1")
    lam = system.eigenvalues(n)
    raw: list[tuple[float, int, int]] = [(0.0, 0, 0)]  # the l = k pairs
    for l in range(1, n):
        for k in range(l):
            raw.append((abs(lam[l] - lam[k]), l + 1, k + 1))
    raw.sort(key=lambda t: t[0])

    gaps: list[float] = []
    pair_index: dict[float, list[tuple[int, int]]] = {}
    warnings: list[str] = []
    cluster: list[tuple[float, int, int]] = []

    def flush():
        if not cluster:
            return
        rep = cluster[0][0]
        gaps.append(rep)
        pair_index[rep] = [(l, k) for _g, l, k in cluster if l > k]

    for item in raw:
        if cluster and item[0] - cluster[0][0] > GAP_TOL:
            if item[0] - cluster[-1][0] <= NEAR_TOL:
                warnings.append(
                    f"gaps {cluster[-1][0]!r} and {item[0]!r} are within {NEAR_TOL} but "
                    f"treated as distinct (gap_tol={GAP_TOL})"
                )
            flush()
            cluster = []
        cluster.append(item)
    flush()

    return GapTable(
        n=n,
        gaps=tuple(gaps),
        pair_index={g: tuple(p) for g, p in pair_index.items()},
        warnings=tuple(warnings),
    )


def select(
    M: np.ndarray,
    sigma: float,
    eigenvalues: Sequence[float],
    xi: Optional[Sequence[float]] = None,
) -> GapSelection:
    """Zero every entry of M whose level pair does not realize the gap sigma."""
    M = np.asarray(M)
    m = M.shape[0]
    if M.shape != (m, m):
        raise ValueError("selection needs a square matrix")
    lam = np.asarray(eigenvalues, dtype=float)
    if lam.shape[0] < m:
        raise ValueError(f"need {m} eigenvalues, got {lam.shape[0]}")
    lam = lam[:m]
    mask = np.abs(np.abs(lam[:, None] - lam[None, :]) - sigma) <= GAP_TOL
    out = np.where(mask, M, 0.0)
    in_sigma = bool(mask.any())
    in_xi = None
    if xi is not None:
        in_xi = any(abs(sigma - s) <= GAP_TOL for s in xi)
    return GapSelection(sigma=float(sigma), matrix=out, in_sigma_n=in_sigma, in_xi_n=in_xi)


def _tail_cutoff(system: SystemModel, n: int, sigma_max: float) -> tuple[Optional[int], str]:
    """Last tail level that must be inspected, and how termination is certified.

    With finite declared support the scan stops at the support boundary.  With
    band coupling the scan runs until the gap to level n exceeds sigma_max at
    an index past the declared monotone tail, so every later level is clear.
    """
    coupling = system.coupling
    if not coupling.has_bands:
        lmax = coupling.max_declared_index
        return (lmax if lmax > n else None), "support"

    if system.tail is None:
        raise TailUndecidableError(
            "coupling support is unbounded and no tail declaration was given"
        )

    lam_n = system.eigenvalue(n)
    monotone_from = system.tail.monotone_from
    prev = None
    l = n + 1
    while l <= TAIL_SCAN_CAP:
        lam_l = system.eigenvalue(l)
        if prev is not None and l > monotone_from and lam_l <= prev:
            raise TailUndecidableError(
                f"eigenvalues not strictly increasing at level {l} despite tail declaration"
            )
        if l >= monotone_from and lam_l - lam_n > sigma_max + GAP_TOL:
            return l, "divergence"
        prev = lam_l
        l += 1
    raise TailUndecidableError(f"tail scan exceeded {TAIL_SCAN_CAP} levels without divergence")


def xi_set(system: SystemModel, n: int) -> XiCertificate:
    """Gaps of the first n levels whose selections decouple from the tail.

    A gap sigma is excluded when some coupled pair (k, l) with k <= n < l has
    |lambda_l - lambda_k| = sigma; the first such pair is kept as a witness.
    """
    table = gap_table(system, n)
    sigma_max = max(table.gaps)
    cutoff, method = _tail_cutoff(system, n, sigma_max)

    exclusions: dict[float, tuple[int, int]] = {}
    warnings = list(table.warnings)
    if cutoff is not None:
        lam = system.eigenvalues(cutoff)
        for k, l in system.coupling.crossing_support(n, cutoff):
            gap = abs(lam[l - 1] - lam[k - 1])
            for sigma in table.gaps:
                if sigma in exclusions:
                    continue
                d = abs(gap - sigma)
                if d <= GAP_TOL:
                    exclusions[sigma] = (k, l)
                elif d <= NEAR_TOL:
                    warnings.append(
                        f"crossing pair ({k}, {l}) gap {gap!r} is within {NEAR_TOL} of "
                        f"sigma={sigma!r} but not excluded (gap_tol={GAP_TOL})"
                    )

    xi = tuple(s for s in table.gaps if s not in exclusions)
    return XiCertificate(
        n=n,
        sigma_n=table.gaps,
        xi=xi,
        exclusions=exclusions,
        cutoff=cutoff,
        method=method,
        warnings=tuple(warnings),
    )


def decoupling_check(system: SystemModel, n: int, sigma: float, N: int) -> float:
    """Operator norm of the commutator between the rank-n projection and the
    selected compressed Hamiltonian at the larger cutoff N.

    Zero exactly (no tolerance) whenever sigma is a decoupled gap at level n:
    the selection kills every boundary-crossing entry.
    """
    if N <= n:
        raise ValueError("N must exceed n")
    pair = truncate(system, N)
    sel = select(pair.h1, sigma, system.eigenvalues(N)).matrix
    pi = np.zeros((N, N))
    pi[:n, :n] = np.eye(n)
    comm = pi @ sel - sel @ pi
    return float(np.linalg.norm(comm, 2))
