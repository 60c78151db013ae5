"""End-to-end control synthesis: word planning, pulse generation, two-valued
realization, and exact projection matching by a damped Gauss-Newton solver.

The pipeline plans a word of tracking matrices (drift factors interleaved
with mixed gap selections), realizes each selection factor by a small
periodic pulse whose rotating-frame average reproduces the factor, converts
every pulse to a {0, 1}-valued control, and then polishes all word times
against the fully simulated final state.  The solver, not the plan, owns
exactness: planning errors (pulse averaging, conversion, phase quantization)
only shift the optimum inside the solver's basin.

Plan file (JSON): word, per-factor pulses, the final two-valued control in
the simulator's control format, residuals, tolerances, and the seed; a plan
is fully re-verifiable from the file plus the system description.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .errors import PlanningError, PreconditionError, PulseVerificationError
from .lie import lie_galerkin_search
from .model import SystemModel, builtin_family, truncate
from .spectral import GAP_TOL, gap_table, select, xi_set
from .sim import (
    PiecewiseConstantControl,
    StateVector,
    ValueRange,
    concat_controls,
    propagate,
    propagator_matrix,
)
from .bangbang import bangbangify, primitive_error

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class SynthParams:
    """Tunables of the synthesis pipeline (all recorded in certificates)."""

    delta: float = 0.2            # pulse amplitude bound, must stay below 1
    pulse_tol: float = 0.05       # per-factor verification bound during planning
    nu0: float = 0.25             # default selection mixing weight
    a_time: float = 1e-4          # lower bound on word times
    b_time: float = 200.0         # upper bound on word times
    seg_per_period: int = 16      # carrier sampling density
    bb_dt: float = 0.015          # target bang-bang interval length
    headroom: float = 1.4         # pulse duration headroom for solver moves
    wait_margin: float = 0.75     # minimum drift-compensation wait
    max_pulse_retries: int = 6


def drift_period(eigenvalues: Sequence[float], tol: float = 1e-12) -> Optional[float]:
    """Smallest P > 0 with every eigenvalue times P in 2 pi Z, if one exists.

    Detected by rationalizing the eigenvalues with small denominators; None
    for spectra that are incommensurable (or commensurable only through
    impractically long periods), where drift phases recur approximately.
    """
    fracs = []
    for lam in eigenvalues:
        f = Fraction(lam).limit_denominator(10**4)
        if abs(float(f) - lam) > tol * max(1.0, abs(lam)):
            return None
        fracs.append(f)
    denom_lcm = 1
    for f in fracs:
        denom_lcm = denom_lcm * f.denominator // math.gcd(denom_lcm, f.denominator)
    nums = [abs(int(f * denom_lcm)) for f in fracs]
    g = 0
    for v in nums:
        g = math.gcd(g, v)
    if g == 0:
        return TWO_PI
    period = TWO_PI * denom_lcm / g
    return period if period <= 1e4 else None


@dataclass(frozen=True)
class WordFactor:
    """One tracking-word entry: a drift wait or a mixed gap selection."""

    kind: str                 # "drift" | "selection"
    tau: float
    sigma: float = 0.0
    nu: float = 0.0
    plane: Optional[tuple[int, int]] = None

    def tag(self) -> str:
        if self.kind == "drift":
            return "drift"
        if abs(self.sigma) <= GAP_TOL:
            return "sel:0"
        return f"sel:{self.sigma:g}:nu={self.nu:g}"

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "tau": self.tau,
            "sigma": self.sigma,
            "nu": self.nu,
            "plane": list(self.plane) if self.plane else None,
        }

    @classmethod
    def from_json(cls, obj) -> "WordFactor":
        plane = tuple(obj["plane"]) if obj.get("plane") else None
        return cls(obj["kind"], float(obj["tau"]), float(obj["sigma"]), float(obj["nu"]), plane)


def _expm_skew(B: np.ndarray) -> np.ndarray:
    H = 1j * B
    w, V = np.linalg.eigh(H)
    return (V * np.exp(-1j * w)) @ V.conj().T


def _available_cutoff(system: SystemModel, desired: int, minimum: int) -> int:
    """Clamp a cutoff to the declared spectrum for rule-less systems."""
    if system.has_rule:
        return max(desired, minimum)
    return max(minimum, min(desired, len(system.eigenvalue_list)))


def factor_matrix(system: SystemModel, n: int, factor: WordFactor) -> np.ndarray:
    """The generator the factor exponentiates, at cutoff n."""
    pair = truncate(system, n)
    if factor.kind == "drift":
        return pair.a
    lam = system.eigenvalues(n)
    e0 = select(pair.b, 0.0, lam).matrix
    if abs(factor.sigma) <= GAP_TOL:
        return e0
    return e0 + factor.nu * select(pair.b, factor.sigma, lam).matrix


def word_product(system: SystemModel, n: int, word: Sequence[WordFactor]) -> np.ndarray:
    """Product of factor exponentials, first factor applied first."""
    P = np.eye(n, dtype=complex)
    for f in word:
        P = _expm_skew(f.tau * factor_matrix(system, n, f)) @ P
    return P


def _complete_onb(v: np.ndarray) -> np.ndarray:
    """Deterministic unitary whose first column is the given unit vector."""
    n = v.shape[0]
    cols = [v.astype(complex)]
    for i in range(n):
        e = np.zeros(n, dtype=complex)
        e[i] = 1.0
        r = e.copy()
        for c in cols:
            r -= c * np.vdot(c, r)
        for c in cols:
            r -= c * np.vdot(c, r)
        nr = np.linalg.norm(r)
        if nr > 1e-8:
            cols.append(r / nr)
        if len(cols) == n:
            break
    return np.column_stack(cols)


def complete_compression(target: np.ndarray, n: int) -> np.ndarray:
    """Unitary of size n whose leading compression equals the target, with the
    determinant phase pushed to the last column."""
    target = np.asarray(target, dtype=complex)
    N = target.shape[0]
    if target.shape != (N, N) or N >= n:
        raise PlanningError(f"target must be N x N with N < n, got {target.shape} at n={n}")
    defect = np.eye(N) - target.conj().T @ target
    w, V = np.linalg.eigh(defect)
    w = np.clip(w, 0.0, None)
    order = np.argsort(w)[::-1]
    w, V = w[order], V[:, order]
    rank = int(np.sum(w > 1e-12))
    if rank > n - N:
        raise PlanningError(
            f"target compression needs {rank} tail levels but only {n - N} are available"
        )
    D = np.zeros((n - N, N), dtype=complex)
    for i in range(rank):
        D[i, :] = math.sqrt(w[i]) * V[:, i].conj()
    first_cols = np.vstack([target, D])
    cols = [first_cols[:, j] for j in range(N)]
    for i in range(n):
        e = np.zeros(n, dtype=complex)
        e[i] = 1.0
        r = e.copy()
        for c in cols:
            r -= c * np.vdot(c, r)
        for c in cols:
            r -= c * np.vdot(c, r)
        nr = np.linalg.norm(r)
        if nr > 1e-8:
            cols.append(r / nr)
        if len(cols) == n:
            break
    M = np.column_stack(cols)
    det = np.linalg.det(M)
    M[:, -1] *= det.conjugate() / abs(det)
    return M


@dataclass(frozen=True, eq=False)
class PlaneInfo:
    """A rotation plane: a decoupled gap selected on exactly one coupled pair."""

    i: int
    j: int
    sigma: float
    w: complex    # coupling element on the pair
    d_i: float    # coupling diagonal at the two levels (detuning when unequal)
    d_j: float


def rotation_planes(system: SystemModel, n: int, xi=None) -> dict[tuple[int, int], PlaneInfo]:
    """Planes rotatable through a single mixed selection factor at cutoff n."""
    if xi is None:
        xi = xi_set(system, n)
    table = gap_table(system, n)
    planes: dict[tuple[int, int], PlaneInfo] = {}
    for sigma in xi.xi:
        if abs(sigma) <= GAP_TOL:
            continue
        live = [
            (k, l)
            for l, k in table.pair_index.get(sigma, ())
            if abs(system.coupling.value(k, l)) > 0
        ]
        if len(live) != 1:
            continue
        i, j = live[0]
        planes[(i, j)] = PlaneInfo(
            i=i,
            j=j,
            sigma=float(sigma),
            w=system.coupling.value(i, j),
            d_i=system.coupling.value(i, i).real,
            d_j=system.coupling.value(j, j).real,
        )
    return planes


def _spanning_tree(planes: dict[tuple[int, int], PlaneInfo], n: int) -> dict[int, set[int]]:
    adj: dict[int, set[int]] = {v: set() for v in range(1, n + 1)}
    for i, j in planes:
        adj[i].add(j)
        adj[j].add(i)
    seen = {1}
    tree: dict[int, set[int]] = {v: set() for v in range(1, n + 1)}
    frontier = [1]
    while frontier:
        v = frontier.pop(0)
        for w in sorted(adj[v]):
            if w not in seen:
                seen.add(w)
                tree[v].add(w)
                tree[w].add(v)
                frontier.append(w)
    if len(seen) != n:
        missing = sorted(set(range(1, n + 1)) - seen)
        raise PlanningError(f"no rotation route to levels {missing}; plane graph disconnected")
    return tree


def _mod_nonneg(x: float, period: float) -> float:
    y = math.fmod(x, period)
    if y < 0:
        y += period
    return y


@dataclass
class _Planner:
    system: SystemModel
    n: int
    planes: dict[tuple[int, int], PlaneInfo]
    params: SynthParams
    lam: np.ndarray = field(init=False)
    word: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def __post_init__(self):
        self.lam = self.system.eigenvalues(self.n)

    def _emit_drift(self, gamma: float):
        if gamma > 1e-12:
            self.word.append(WordFactor("drift", gamma))

    def _emit_selection(self, info: PlaneInfo, theta: float):
        """Split theta = tau * nu * |w| into factors respecting the time box."""
        p = self.params
        total = abs(theta)
        sign = 1.0 if theta >= 0 else -1.0
        absw = abs(info.w)
        factors = []
        max_theta = p.b_time * p.nu0 * absw
        while total > 1e-15:
            chunk = min(total, max_theta)
            tau = chunk / (p.nu0 * absw)
            nu = p.nu0 * sign
            if tau < p.a_time:
                tau = p.a_time
                nu = sign * chunk / (tau * absw)
            factors.append(WordFactor("selection", tau, info.sigma, nu, (info.i, info.j)))
            total -= chunk
        self.word.extend(factors)
        return factors

    def _apply(self, R: np.ndarray, new_factors: Sequence[WordFactor]) -> np.ndarray:
        for f in new_factors:
            if f.kind == "drift":
                R = np.exp(-1j * self.lam * f.tau)[:, None] * R
            else:
                R = _expm_skew(f.tau * factor_matrix(self.system, self.n, f)) @ R
        return R

    def zero_entry(self, R: np.ndarray, r: int, p: int, col: int) -> np.ndarray:
        """Emit a (drift, selection) pair that zeroes R[r, col] against row p."""
        key = (min(r, p), max(r, p))
        info = self.planes.get(key)
        if info is None:
            raise PlanningError(f"no rotation plane on levels {key}")
        rr = R[r - 1, col - 1]
        rp = R[p - 1, col - 1]
        if abs(rr) < 1e-13:
            return R
        if abs(info.d_i - info.d_j) > 1e-12:
            return self._zero_entry_detuned(R, r, p, col, info)
        alpha = math.atan2(info.w.imag, info.w.real)
        sgn_alpha = alpha if r == key[1] else -alpha
        dlam = self.lam[r - 1] - self.lam[p - 1]
        if abs(rp) < 1e-300:
            gamma, theta = 0.0, math.pi / 2.0
        else:
            zeta0 = -1j * complex(math.cos(sgn_alpha), math.sin(sgn_alpha)) * (rr / rp)
            phi0 = math.atan2(zeta0.imag, zeta0.real)
            if abs(dlam) < 1e-12:
                # degenerate pair: only a real ratio can be zeroed without drift
                if abs(phi0) > 1e-9 and abs(abs(phi0) - math.pi) > 1e-9:
                    raise PlanningError(
                        f"cannot phase-align degenerate levels {key} for elimination"
                    )
                gamma = 0.0
            else:
                gamma = _mod_nonneg(phi0 / dlam, math.pi / abs(dlam))
            resid = phi0 - dlam * gamma
            sign = 1.0 if math.cos(resid) >= 0 else -1.0
            theta = math.atan(sign * abs(zeta0))
        start = len(self.word)
        self._emit_drift(gamma)
        self._emit_selection(info, theta)
        R = self._apply(R, self.word[start:])
        if abs(R[r - 1, col - 1]) > 1e-9:
            self.notes.append(
                f"elimination left |R[{r},{col}]| = {abs(R[r - 1, col - 1]):.2e}"
            )
        return R

    def _zero_entry_detuned(self, R, r, p, col, info: PlaneInfo) -> np.ndarray:
        """Numeric fallback when the selection's diagonal detunes the plane."""
        from scipy.optimize import minimize

        prm = self.params
        dlam = self.lam[r - 1] - self.lam[p - 1]
        absw = abs(info.w)

        def build(x):
            gamma = _mod_nonneg(x[0], TWO_PI / max(abs(dlam), 1e-6))
            theta = x[1]
            fs = []
            if gamma > 1e-12:
                fs.append(WordFactor("drift", gamma))
            tau = max(min(abs(theta) / (prm.nu0 * absw), prm.b_time), prm.a_time)
            nu = theta / (tau * absw)
            nu = max(min(nu, 0.499), -0.499)
            fs.append(WordFactor("selection", tau, info.sigma, nu, (info.i, info.j)))
            return fs

        def objective(x):
            Rl = self._apply(R.copy(), build(x))
            return abs(Rl[r - 1, col - 1]) ** 2

        best = None
        for g0 in (0.0, 0.25, 0.5, 0.75):
            x0 = np.array([g0 * TWO_PI / max(abs(dlam), 1e-6), 0.3])
            res = minimize(objective, x0, method="Nelder-Mead", options={"xatol": 1e-12, "fatol": 1e-24})
            if best is None or res.fun < best.fun:
                best = res
        fs = build(best.x)
        if best.fun > 1e-16:
            self.notes.append(
                f"detuned plane {info.i},{info.j}: residual {math.sqrt(best.fun):.2e} left in place"
            )
        self.word.extend(fs)
        return self._apply(R, fs)

    def phase_block(self, Q: np.ndarray, l: int, m: int, beta: float, P_drift: float) -> np.ndarray:
        """Two half-turn rotations with drift-neutral waits setting the phase of
        diagonal entry l to exp(i beta) times its current value."""
        key = (min(l, m), max(l, m))
        info = self.planes.get(key)
        if info is None:
            raise PlanningError(f"no rotation plane on levels {key} for phase alignment")
        prm = self.params
        absw = abs(info.w)
        theta = math.pi / 2.0
        tau_rot = theta / (prm.nu0 * absw)
        if tau_rot > prm.b_time:
            raise PlanningError(f"half-turn on plane {key} exceeds the time box")
        rot = WordFactor("selection", tau_rot, info.sigma, prm.nu0, (info.i, info.j))
        d = info.d_i  # equal diagonals on the clean path
        dlam = self.lam[m - 1] - self.lam[l - 1]
        # C[l,l](gamma_b) = -exp(-2 i d tau_rot) exp(-i dlam gamma_b)
        target = beta
        rhs = _mod_nonneg(-(target - math.pi + 2.0 * d * tau_rot), TWO_PI)
        gamma_b = _mod_nonneg(rhs / dlam if dlam != 0 else 0.0, TWO_PI / abs(dlam))
        K = P_drift * max(1, math.ceil(gamma_b / P_drift))
        gamma_a = K - gamma_b
        fs = []
        if gamma_a > 1e-12:
            fs.append(WordFactor("drift", gamma_a))
        fs.append(rot)
        if gamma_b > 1e-12:
            fs.append(WordFactor("drift", gamma_b))
        fs.append(rot)
        self.word.extend(fs)
        return self._apply(Q, fs)


@dataclass(frozen=True, eq=False)
class WordPlan:
    """Planned tracking word with its exact-exponential product audit."""

    word: tuple[WordFactor, ...]
    n: int
    big_n: int
    target: np.ndarray
    completion: np.ndarray
    product: np.ndarray
    defect_rows: float
    defect_full: float
    drift_period: Optional[float]
    nu_values: tuple[float, ...]
    notes: tuple[str, ...]


def plan_word(
    system: SystemModel,
    n: int,
    N: int,
    target: np.ndarray,
    completion: Optional[np.ndarray] = None,
    psi0: Optional[np.ndarray] = None,
    margin: float = 1e-9,
    params: SynthParams = SynthParams(),
) -> WordPlan:
    """Decompose a unitary completion of the target compression into drift and
    selection factors routed along the rotation-plane tree.

    The elimination triangularizes the completion's adjoint with plane
    rotations (each preceded by a drift factor fixing the rotation axis);
    the residual diagonal is then phase-aligned on the first N levels by
    half-turn pairs whose waits are drift-neutral.  All emitted times are
    strictly positive and inside the solver's time box.
    """
    target = np.asarray(target, dtype=complex)
    if N >= n:
        raise PreconditionError("projection level must be below the certification level")
    if psi0 is not None:
        head = np.asarray(psi0, dtype=complex)[:N]
        if np.linalg.norm(target @ head) >= 1.0 - margin:
            raise PreconditionError("target projection leaves no tail mass to steer through")
    xi = xi_set(system, n)
    planes = rotation_planes(system, n, xi=xi)
    tree = _spanning_tree(planes, n)
    if completion is None:
        M = complete_compression(target, n)
    else:
        M = np.asarray(completion, dtype=complex)
        if np.linalg.norm(M[:N, :N] - target, 2) > 1e-9:
            raise PlanningError("provided completion does not compress to the target")

    planner = _Planner(system=system, n=n, planes=planes, params=params)
    P_drift = drift_period(system.eigenvalues(_available_cutoff(system, 4 * n, n)))

    R = M.conj().T.copy()
    work_tree = {v: set(nb) for v, nb in tree.items()}
    remaining = set(range(1, n + 1))
    while len(remaining) > 1:
        leaves = sorted(v for v in remaining if len(work_tree[v]) == 1)
        v = leaves[-1]
        # distances and next-hop toward v on the current tree
        dist = {v: 0}
        nxt: dict[int, int] = {}
        frontier = [v]
        while frontier:
            x = frontier.pop(0)
            for y in sorted(work_tree[x]):
                if y in remaining and y not in dist:
                    dist[y] = dist[x] + 1
                    nxt[y] = x
                    frontier.append(y)
        for r in sorted(remaining - {v}, key=lambda u: (-dist[u], -u)):
            R = planner.zero_entry(R, r, nxt[r], v)
        p = next(iter(work_tree[v]))
        work_tree[p].discard(v)
        work_tree[v].clear()
        remaining.discard(v)

    # R now holds the diagonal defect D with G-word product = D M
    Q = R @ M
    if P_drift is not None:
        for l in range(1, N + 1):
            d_ll = (Q @ M.conj().T)[l - 1, l - 1]
            beta = -math.atan2(d_ll.imag, d_ll.real)
            if abs(beta) < 1e-10:
                continue
            ups = sorted(m for m in tree[l] if m > l)
            if not ups:
                raise PlanningError(f"no ascending plane at level {l} for phase alignment")
            Q = planner.phase_block(Q, l, ups[0], beta, P_drift)
    else:
        planner.notes.append("incommensurable drift: first-level phases left to the solver")

    word = tuple(planner.word)
    product = Q
    defect_rows = float(np.linalg.norm(product[:N, :] - M[:N, :], 2))
    defect_full = float(np.linalg.norm(product - M, 2))
    nu_values = tuple(sorted({f.nu for f in word if f.kind == "selection"}))
    return WordPlan(
        word=word,
        n=n,
        big_n=N,
        target=target,
        completion=M,
        product=product,
        defect_rows=defect_rows,
        defect_full=defect_full,
        drift_period=P_drift,
        nu_values=nu_values,
        notes=tuple(planner.notes),
    )


# --------------------------------------------------------------------------
# pulse generation


@dataclass(frozen=True, eq=False)
class PulseSpec:
    """Frozen realization template for one selection factor.

    Duration, segment grid, and calibration are fixed at plan time so the
    solver objective stays continuous in the word time: only the waveform
    amplitude rescales with tau.
    """

    sigma: float
    nu: float
    plane: Optional[tuple[int, int]]
    period_quantum: float
    m: int
    n_segments: int
    kappa: float
    delta_cap: float

    @property
    def duration(self) -> float:
        return self.m * self.period_quantum


def _pulse_control(spec: PulseSpec, tau: float) -> PiecewiseConstantControl:
    """Sampled-carrier pulse realizing exp(tau (E0 + nu E_sigma)) up to drift."""
    T = spec.duration
    beta0 = 1.0 / (1.0 + 2.0 * abs(spec.nu))
    delta_eff = min(abs(tau) / (beta0 * T * spec.kappa), spec.delta_cap)
    dt = T / spec.n_segments
    mid = (np.arange(spec.n_segments) + 0.5) * dt
    if abs(spec.sigma) <= GAP_TOL:
        values = np.full(spec.n_segments, delta_eff)
    else:
        values = delta_eff * beta0 * (1.0 + 2.0 * spec.nu * np.cos(spec.sigma * mid))
    values = np.clip(values, 0.0, spec.delta_cap)
    segs = tuple((dt, float(v)) for v in values)
    return PiecewiseConstantControl(segs, ValueRange.interval(0.0, spec.delta_cap))


def _pair_system(system: SystemModel, plane: tuple[int, int]) -> SystemModel:
    """Isolated two-level subsystem on the given plane, for rate calibration."""
    i, j = plane
    w = system.coupling.value(i, j)
    couplings = [[1, 2, w.real, w.imag]]
    d_i = system.coupling.value(i, i).real
    d_j = system.coupling.value(j, j).real
    if d_i:
        couplings.append([1, 1, d_i, 0.0])
    if d_j:
        couplings.append([2, 2, d_j, 0.0])
    return builtin_family(
        "custom_gaps",
        eigenvalues=[system.eigenvalue(i), system.eigenvalue(j)],
        couplings=couplings,
        tail=1,
    )


def _calibrate_rate(system: SystemModel, spec: PulseSpec, tau: float) -> float:
    """Measured over predicted rotation angle on the isolated plane."""
    if spec.plane is None or abs(spec.sigma) <= GAP_TOL:
        return 1.0
    theta_target = abs(tau * spec.nu * abs(system.coupling.value(*spec.plane)))
    if theta_target < 1e-9:
        return 1.0
    pair_sys = _pair_system(system, spec.plane)
    pulse = _pulse_control(spec, tau)
    U = propagator_matrix(pair_sys, pulse, 2)
    lam2 = pair_sys.eigenvalues(2)
    X = np.exp(1j * lam2 * spec.duration)[:, None] * U
    theta_measured = math.atan2(abs(X[1, 0]), abs(X[1, 1]))
    if theta_measured < 1e-12:
        return 1.0
    return theta_measured / theta_target


@dataclass(frozen=True, eq=False)
class PulseResult:
    """A verified pulse for one factor: control, drift phase, achieved error."""

    control: PiecewiseConstantControl
    spec: PulseSpec
    gamma_drift: float
    error: float
    delta_eff: float
    retries: int


def _phase_fit_error(
    system: SystemModel, n: int, U_block: np.ndarray, V_target: np.ndarray, T: float, lam: np.ndarray
) -> tuple[float, float]:
    """Best drift phase gamma near the pulse duration and the residual there."""
    from scipy.optimize import minimize_scalar

    def defect(gamma: float) -> float:
        phases = np.exp(-1j * lam * gamma)
        return float(np.linalg.norm(U_block - phases[:, None] * V_target, 2))

    grid = np.linspace(T - 1.0, T + 1.0, 801)
    vals = [defect(g) for g in grid]
    g0 = grid[int(np.argmin(vals))]
    h = grid[1] - grid[0]
    res = minimize_scalar(defect, bounds=(g0 - h, g0 + h), method="bounded",
                          options={"xatol": 1e-12})
    return float(res.x), float(res.fun)


def pulse_for_factor(
    system: SystemModel,
    n: int,
    factor: WordFactor,
    delta: float = 0.2,
    pulse_tol: float = 1e-3,
    cutoff: Optional[int] = None,
    params: SynthParams = SynthParams(),
) -> PulseResult:
    """Construct and verify a [0, delta]-valued pulse realizing one factor.

    A square-wave sampled carrier at the factor's gap frequency, with the
    mean encoding the zero-gap part and the carrier amplitude the mixed
    part; duration is quantized to whole recurrence periods so first-order
    off-resonant contributions integrate to zero on commensurable spectra.
    The effective rotation rate is calibrated on the isolated plane, and the
    result is accepted only after a simulation check at the enlarged cutoff;
    on failure the amplitude is halved and the pulse rebuilt.
    """
    if factor.kind != "selection":
        raise PreconditionError("pulses realize selection factors; drift factors are plain waits")
    if not 0.0 < delta < 1.0:
        raise PreconditionError("pulse amplitude bound must lie in (0, 1)")
    if factor.tau < 0:
        raise PreconditionError("factor time must be nonnegative")
    if factor.tau == 0:
        empty_spec = PulseSpec(factor.sigma, factor.nu, factor.plane, 1.0, 0, 0, 1.0, delta)
        empty = PiecewiseConstantControl((), ValueRange.interval(0.0, delta))
        return PulseResult(empty, empty_spec, 0.0, 0.0, 0.0, 0)
    cutoff = _available_cutoff(system, cutoff or max(2 * n, n + 2), n)
    lam_n = system.eigenvalues(n)
    V_target = _expm_skew(factor.tau * factor_matrix(system, n, factor))
    P_comm = drift_period(system.eigenvalues(cutoff))

    sigma = abs(factor.sigma)
    if sigma <= GAP_TOL:
        quantum = P_comm if P_comm else factor.tau / delta
        beta0 = 1.0
    else:
        quantum = P_comm if P_comm else TWO_PI / sigma
        beta0 = 1.0 / (1.0 + 2.0 * abs(factor.nu))

    best: Optional[PulseResult] = None
    d = delta
    for attempt in range(params.max_pulse_retries + 1):
        T_raw = factor.tau / (d * beta0)
        m = max(1, math.ceil(params.headroom * T_raw / quantum))
        if sigma <= GAP_TOL:
            n_segments = 1
        else:
            carriers = max(1, round(sigma * m * quantum / TWO_PI))
            n_segments = params.seg_per_period * carriers
        spec = PulseSpec(
            sigma=factor.sigma,
            nu=factor.nu,
            plane=factor.plane,
            period_quantum=quantum,
            m=m,
            n_segments=n_segments,
            kappa=1.0,
            delta_cap=d,
        )
        kappa = _calibrate_rate(system, spec, factor.tau)
        spec = replace(spec, kappa=kappa)
        pulse = _pulse_control(spec, factor.tau)
        U = propagator_matrix(system, pulse, cutoff)
        gamma, err = _phase_fit_error(system, n, U[:n, :n], V_target, spec.duration, lam_n)
        result = PulseResult(
            control=pulse,
            spec=spec,
            gamma_drift=gamma,
            error=err,
            delta_eff=min(factor.tau / (beta0 * spec.duration * kappa), d),
            retries=attempt,
        )
        if best is None or err < best.error:
            best = result
        if err <= pulse_tol:
            return result
        d *= 0.5
    raise PulseVerificationError(
        f"pulse for {factor.tag()} failed verification: achieved {best.error:.3e} "
        f"> tol {pulse_tol:.3e} after {params.max_pulse_retries} retries",
        achieved_error=best.error,
    )


# --------------------------------------------------------------------------
# recurrence waits


@dataclass(frozen=True)
class WaitResult:
    gamma: float
    error: float
    capped: bool = False


def recurrence_wait(
    system: SystemModel,
    n: int,
    phase_target: Sequence[complex],
    wait_tol: float,
    gamma_max: Optional[float] = None,
) -> WaitResult:
    """Drift duration realigning the free-evolution phases with the target.

    Commensurable spectra are scanned over one exact period; otherwise the
    scan sweeps geometrically growing windows of almost-periods up to the
    cap and reports the best achieved error.
    """
    lam = system.eigenvalues(n)
    target = np.asarray(phase_target, dtype=complex)
    if target.shape != (n,):
        raise PreconditionError(f"need {n} target phases")
    target = target / np.abs(target)
    lam_scale = max(1.0, float(np.max(np.abs(lam))))

    def defect_many(gs: np.ndarray) -> np.ndarray:
        phases = np.exp(-1j * np.outer(gs, lam))
        return np.max(np.abs(phases - target[None, :]), axis=1)

    def refine(g0: float, h: float) -> tuple[float, float]:
        from scipy.optimize import minimize_scalar

        res = minimize_scalar(
            lambda g: float(defect_many(np.array([g]))[0]),
            bounds=(max(0.0, g0 - h), g0 + h),
            method="bounded",
            options={"xatol": 1e-13},
        )
        return float(res.x), float(res.fun)

    step = min(wait_tol, 0.02) / (2.0 * lam_scale)
    P = drift_period(lam)
    if P is not None:
        gs = np.arange(0.0, P + step, step)
        errs = defect_many(gs)
        i = int(np.argmin(errs))
        g, e = refine(float(gs[i]), step)
        return WaitResult(gamma=g, error=e, capped=False)

    if gamma_max is None:
        gamma_max = 2e5 * TWO_PI / lam_scale
    window = 64.0 * TWO_PI / lam_scale
    lo = 0.0
    best_g, best_e = 0.0, float(defect_many(np.array([0.0]))[0])
    while lo < gamma_max:
        hi = min(lo + window, gamma_max)
        gs = np.arange(lo, hi, step)
        if gs.size:
            for chunk in np.array_split(gs, max(1, gs.size // 500000)):
                errs = defect_many(chunk)
                i = int(np.argmin(errs))
                if errs[i] < best_e:
                    best_g, best_e = float(chunk[i]), float(errs[i])
            g, e = refine(best_g, step)
            if e < best_e:
                best_g, best_e = g, e
            if best_e <= wait_tol:
                return WaitResult(gamma=best_g, error=best_e, capped=False)
        lo = hi
        window *= 2.0
    return WaitResult(gamma=best_g, error=best_e, capped=True)


# --------------------------------------------------------------------------
# realization and the projection matcher


@dataclass(frozen=True, eq=False)
class ControlPlan:
    """Synthesis output: the word, its pulses, the two-valued control, and the
    verification certificate."""

    n: int
    big_n: int
    word: tuple[WordFactor, ...]
    nu_values: tuple[float, ...]
    pulses: tuple[PiecewiseConstantControl, ...]
    delta: float
    gamma_wait: float
    bang: PiecewiseConstantControl
    residual: float
    certificate: dict
    psi0: StateVector
    psi1: StateVector
    seed: int
    cutoff: int
    success: bool
    message: str = ""

    def to_document(self) -> dict:
        return {
            "n": self.n,
            "N": self.big_n,
            "word": [f.to_json() for f in self.word],
            "nu_values": list(self.nu_values),
            "pulses": [p.to_json() for p in self.pulses],
            "delta": self.delta,
            "gamma_wait": self.gamma_wait,
            "bang": self.bang.to_json(),
            "residual": self.residual,
            "certificate": self.certificate,
            "psi0": self.psi0.to_json(),
            "psi1": self.psi1.to_json(),
            "seed": self.seed,
            "cutoff": self.cutoff,
            "success": self.success,
            "message": self.message,
        }

    @classmethod
    def from_document(cls, doc: dict) -> "ControlPlan":
        return cls(
            n=int(doc["n"]),
            big_n=int(doc["N"]),
            word=tuple(WordFactor.from_json(f) for f in doc["word"]),
            nu_values=tuple(doc["nu_values"]),
            pulses=tuple(PiecewiseConstantControl.from_json(p) for p in doc["pulses"]),
            delta=float(doc["delta"]),
            gamma_wait=float(doc["gamma_wait"]),
            bang=PiecewiseConstantControl.from_json(doc["bang"]),
            residual=float(doc["residual"]),
            certificate=doc["certificate"],
            psi0=StateVector.from_json(doc["psi0"]),
            psi1=StateVector.from_json(doc["psi1"]),
            seed=int(doc["seed"]),
            cutoff=int(doc["cutoff"]),
            success=bool(doc["success"]),
            message=doc.get("message", ""),
        )


class _Realizer:
    """Maps word times to the concatenated {0,1}-valued control.

    A pulse of duration T realizes exp(T A) exp(tau M), its drift half
    sitting to the LEFT of the selection; each wait therefore compensates
    the previous pulse's duration, and a closing wait neutralizes the last
    one.  Pulse templates (durations, grids, calibrations, conversion
    interval counts, and wait branch offsets) are frozen at construction so
    the map stays continuous in the times.
    """

    def __init__(self, system, n, word, params: SynthParams, P_drift, pulse_specs):
        self.system = system
        self.n = n
        self.word = list(word)
        self.params = params
        self.P_drift = P_drift
        self.specs = pulse_specs  # word index -> PulseSpec
        self.k_bb = {
            idx: max(1, math.ceil(spec.duration / params.bb_dt))
            for idx, spec in pulse_specs.items()
        }
        self.wait_offsets: dict = {}
        self._freeze_wait_offsets()

    def _walk_bases(self, taus):
        """Yield (selection index or 'end', pending drift minus previous pulse
        duration), the quantity each wait must realize modulo a recurrence."""
        pending = 0.0
        prev_T = 0.0
        for idx, f in enumerate(self.word):
            if f.kind == "drift":
                pending += float(taus[idx])
                continue
            yield idx, pending - prev_T
            pending = 0.0
            prev_T = self.specs[idx].duration
        yield "end", pending - prev_T

    def _freeze_wait_offsets(self):
        taus0 = [f.tau for f in self.word]
        for key, base in self._walk_bases(taus0):
            if self.P_drift:
                lifts = math.ceil((self.params.wait_margin - base) / self.P_drift)
                self.wait_offsets[key] = max(0, lifts) * self.P_drift
            elif base < 0:
                # incommensurable drift: approximate the missing negative wait
                # by a recurrence back to the identity
                target = np.exp(-1j * self.system.eigenvalues(self.n) * base)
                wr = recurrence_wait(self.system, self.n, target, wait_tol=0.02)
                self.wait_offsets[key] = wr.gamma - base
            else:
                self.wait_offsets[key] = 0.0

    def controls(self, taus: np.ndarray):
        """Per-factor pulses and the final two-valued concatenation."""
        waits_total = 0.0
        pieces: list[PiecewiseConstantControl] = []
        pulses: list[PiecewiseConstantControl] = []
        for key, base in self._walk_bases(taus):
            wait = max(0.0, base + self.wait_offsets[key])
            if wait > 1e-12:
                pieces.append(
                    PiecewiseConstantControl(((wait, 0.0),), ValueRange.two_value(1.0))
                )
                waits_total += wait
            if key == "end":
                break
            pulse = _pulse_control(self.specs[key], float(taus[key]))
            pulses.append(pulse)
            pieces.append(bangbangify(pulse, 1.0, self.k_bb[key]))
        if pieces:
            bang = concat_controls(pieces, ValueRange.two_value(1.0))
        else:
            bang = PiecewiseConstantControl((), ValueRange.two_value(1.0))
        return bang, pulses, waits_total


def _projection_residual(system, bang, cutoff, psi0: StateVector, target_head: np.ndarray) -> float:
    final = propagate(system, bang, cutoff, psi0.padded(cutoff), two_value=True)
    head = final.coefficients[: target_head.shape[0]]
    return float(np.linalg.norm(head - target_head))


def _gauss_newton(objective, s0, lower, upper, tol, budget, seed, fd_step=3e-4):
    """Damped Gauss-Newton with box projection and seeded restarts.

    The objective maps times to the residual vector; accepted iterations are
    monotone in the residual norm by construction.
    """
    rng = np.random.default_rng(seed)
    evals = 0

    def f(s):
        nonlocal evals
        evals += 1
        return objective(s)

    s = np.clip(np.asarray(s0, dtype=float), lower, upper)
    r = f(s)
    best_s, best_r = s.copy(), r.copy()
    mu = 1e-6
    history = [float(np.linalg.norm(r))]
    while evals < budget and np.linalg.norm(best_r) > tol:
        J = np.zeros((r.shape[0], s.shape[0]))
        base_norm = np.linalg.norm(r)
        for i in range(s.shape[0]):
            if evals >= budget:
                break
            sp = s.copy()
            h = fd_step * max(1.0, abs(s[i]))
            sp[i] = min(sp[i] + h, upper[i])
            actual = sp[i] - s[i]
            if actual <= 0:
                sp[i] = max(s[i] - h, lower[i])
                actual = sp[i] - s[i]
            J[:, i] = (f(sp) - r) / actual
        improved = False
        for _trial in range(8):
            if evals >= budget:
                break
            JtJ = J.T @ J + (mu + 1e-8) * np.eye(s.shape[0])
            step = np.linalg.solve(JtJ, -J.T @ r)
            cand = np.clip(s + step, lower, upper)
            rc = f(cand)
            if np.linalg.norm(rc) < base_norm:
                s, r = cand, rc
                mu = max(mu / 3.0, 1e-9)
                improved = True
                break
            mu *= 10.0
        if np.linalg.norm(r) < np.linalg.norm(best_r):
            best_s, best_r = s.copy(), r.copy()
        history.append(float(np.linalg.norm(r)))
        if not improved:
            # stall: seeded perturbation around the best iterate
            if evals >= budget:
                break
            scale = 0.02 * np.maximum(1.0, np.abs(best_s))
            s = np.clip(best_s + rng.normal(0.0, 1.0, best_s.shape) * scale, lower, upper)
            r = f(s)
            mu = 1e-6
    return best_s, best_r, evals, history


def project_match(
    system: SystemModel,
    N: int,
    psi0: StateVector,
    psi1: StateVector,
    tol: float,
    budget: int = 600,
    seed: int = 0,
    params: SynthParams = SynthParams(),
    cutoff: Optional[int] = None,
    n_search_extra: int = 6,
) -> ControlPlan:
    """Steer the first N coordinates of the initial state onto the target's.

    Pipeline: certify a cutoff, complete a steering unitary, plan the word,
    realize it through calibrated pulses and their two-valued conversions,
    then run the damped Gauss-Newton loop on all word times against the
    simulated final state.  Success requires the residual to meet the
    tolerance both at the certificate cutoff and eight levels higher.
    """
    c0 = psi0.coefficients
    c1 = psi1.coefficients
    if abs(np.linalg.norm(c0) - 1.0) > 1e-10 or abs(np.linalg.norm(c1) - 1.0) > 1e-10:
        raise PreconditionError("both states must be normalized")
    if N < 1:
        raise PreconditionError("projection level must be >= 1")
    head1 = np.zeros(N, dtype=complex)
    head1[: min(N, c1.shape[0])] = c1[:N]
    if np.linalg.norm(head1) >= 1.0 - 1e-9:
        raise PreconditionError(
            "the projected target must keep some tail mass (projection norm strictly below one)"
        )
    head0 = np.zeros(N, dtype=complex)
    head0[: min(N, c0.shape[0])] = c0[:N]

    if np.linalg.norm(head0 - head1) <= 1e-14:
        cutoff0 = cutoff or max(N + 1, psi0.cutoff)
        bang = PiecewiseConstantControl((), ValueRange.two_value(1.0))
        residual = _projection_residual(system, bang, cutoff0, psi0, head1)
        return ControlPlan(
            n=N, big_n=N, word=(), nu_values=(), pulses=(), delta=params.delta,
            gamma_wait=0.0, bang=bang, residual=residual,
            certificate={"trivial": True, "tolerance": tol},
            psi0=psi0, psi1=psi1, seed=seed, cutoff=cutoff0,
            success=residual <= tol, message="projections already equal",
        )

    support0 = int(np.max(np.nonzero(np.abs(c0) > 1e-14)[0])) + 1 if np.any(np.abs(c0) > 1e-14) else 1
    n0 = max(N, support0 - 1, 1)
    cert = lie_galerkin_search(system, n0, n0 + n_search_extra)
    if not cert.certified:
        raise PlanningError(
            f"controllability condition not certified between {n0 + 1} and {n0 + n_search_extra}: "
            + "; ".join(f"n={n}: {r}" for n, r in cert.reasons)
        )
    n = cert.n
    sim_cutoff = _available_cutoff(system, cutoff or 4 * n, n + 1)
    hi_cutoff = _available_cutoff(system, sim_cutoff + 8, sim_cutoff)

    psi0_n = np.zeros(n, dtype=complex)
    psi0_n[: min(n, c0.shape[0])] = c0[:n]
    psi0_n /= np.linalg.norm(psi0_n)
    psi1_eff = np.zeros(n, dtype=complex)
    psi1_eff[:N] = head1
    psi1_eff[N] = math.sqrt(max(0.0, 1.0 - float(np.linalg.norm(head1)) ** 2))

    B0 = _complete_onb(psi0_n)
    B1 = _complete_onb(psi1_eff)
    M = B1 @ B0.conj().T
    det_col = int(np.argmin(np.abs(psi0_n)))
    det = np.linalg.det(M)
    M[:, det_col] *= det.conjugate() / abs(det)
    det_perturbation = float(abs(psi0_n[det_col]) * abs(det.conjugate() / abs(det) - 1.0))

    plan = plan_word(system, n, N, M[:N, :N], completion=M, psi0=psi0_n, params=params)

    pulse_specs: dict[int, PulseSpec] = {}
    pulse_errors: dict[int, float] = {}
    for idx, f in enumerate(plan.word):
        if f.kind != "selection":
            continue
        res = pulse_for_factor(
            system, n, f, delta=params.delta, pulse_tol=params.pulse_tol,
            cutoff=min(sim_cutoff, 2 * n), params=params,
        )
        pulse_specs[idx] = res.spec
        pulse_errors[idx] = res.error

    realizer = _Realizer(system, n, plan.word, params, plan.drift_period, pulse_specs)
    psi0_state = StateVector(psi0_n, n)

    def objective(taus: np.ndarray) -> np.ndarray:
        bang, _pulses, _w = realizer.controls(taus)
        final = propagate(system, bang, sim_cutoff, psi0_state.padded(sim_cutoff), two_value=True)
        r = final.coefficients[:N] - head1
        return np.concatenate([r.real, r.imag])

    taus0 = np.array([f.tau for f in plan.word])
    lower = np.array([0.0 if f.kind == "drift" else params.a_time for f in plan.word])
    upper = np.full(taus0.shape, params.b_time)
    upper = np.maximum(upper, taus0 * 1.5 + 1.0)
    best_taus, best_r, evals, history = _gauss_newton(
        objective, taus0, lower, upper, tol * 0.5, budget, seed
    )
    residual = float(np.linalg.norm(best_r))

    bang, pulses, waits_total = realizer.controls(best_taus)
    residual_hi = _projection_residual(
        system, bang, hi_cutoff, psi0, head1
    )
    success = residual <= tol and residual_hi <= tol
    word_final = tuple(
        replace(f, tau=float(t)) for f, t in zip(plan.word, best_taus)
    )
    residual_check = _projection_residual(system, bang, sim_cutoff, psi0, head1)

    bb_primitive = {
        i_key: primitive_error(p, bangbangify(p, 1.0, realizer.k_bb[i_key]))
        for p, i_key in zip(pulses, sorted(pulse_specs))
    }
    certificate = {
        "certification": {"n": n, "dim": cert.dim, "depth": cert.depth_used},
        "plan_defect_rows": plan.defect_rows,
        "plan_defect_full": plan.defect_full,
        "drift_period": plan.drift_period,
        "det_phase_perturbation": det_perturbation,
        "pulse_errors": {str(k): v for k, v in pulse_errors.items()},
        "pulse_tol": params.pulse_tol,
        "bangbang_intervals": {str(k): realizer.k_bb[k] for k in sorted(realizer.k_bb)},
        "bangbang_primitive_errors": {str(k): v for k, v in bb_primitive.items()},
        "solver": {
            "evaluations": evals,
            "budget": budget,
            "history_first": history[0],
            "history_last": history[-1],
            "iterations": len(history) - 1,
        },
        "residual_at_cutoff": residual_check,
        "residual_at_cutoff_plus_8": residual_hi,
        "cutoffs": [sim_cutoff, hi_cutoff],
        "tolerance": tol,
        "error_budget": {
            "pulse_sum": float(sum(pulse_errors.values())),
            "bangbang_sum": float(sum(bb_primitive.values())),
            "solver_tol": tol,
            "total": float(sum(pulse_errors.values()) + sum(bb_primitive.values()) + tol),
            "residual_within_budget": bool(
                residual_check
                <= sum(pulse_errors.values()) + sum(bb_primitive.values()) + tol + 1e-12
            ),
        },
        "notes": list(plan.notes),
    }
    return ControlPlan(
        n=n,
        big_n=N,
        word=word_final,
        nu_values=plan.nu_values,
        pulses=tuple(pulses),
        delta=params.delta,
        gamma_wait=waits_total,
        bang=bang,
        residual=residual_check,
        certificate=certificate,
        psi0=psi0,
        psi1=psi1,
        seed=seed,
        cutoff=sim_cutoff,
        success=success,
        message="" if success else "solver stalled above tolerance within budget",
    )


def verify_plan(system: SystemModel, plan: ControlPlan, cutoffs: Sequence[int]) -> dict:
    """Re-simulate a plan's two-valued control and audit it against the stored
    residual, unitarity, and timing data."""
    head1 = plan.psi1.coefficients[: plan.big_n]
    rows = []
    for c in cutoffs:
        resid = _projection_residual(system, plan.bang, c, plan.psi0, head1)
        U = propagator_matrix(system, plan.bang, min(c, 24), two_value=True)
        n_ = U.shape[0]
        udef = float(np.linalg.norm(U.conj().T @ U - np.eye(n_), 2))
        rows.append({"cutoff": c, "residual": resid, "unitarity_defect": udef})
    stored_ok = None
    fresh = None
    if plan.cutoff in list(cutoffs):
        fresh = next(r["residual"] for r in rows if r["cutoff"] == plan.cutoff)
    else:
        fresh = _projection_residual(system, plan.bang, plan.cutoff, plan.psi0, head1)
    stored_ok = abs(fresh - plan.residual) <= 1e-9
    return {
        "rows": rows,
        "stored_residual": plan.residual,
        "stored_residual_consistent": bool(stored_ok),
        "total_time": plan.bang.total_time,
        "switch_count": len(plan.bang.segments),
        "success_flag": plan.success,
    }

