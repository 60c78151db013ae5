"""Exact propagators for piecewise-constant controls at finite cutoffs.

Segment exponentials are computed through Hermitian eigendecompositions, so
every propagator is unitary to near machine precision; that unitarity is a
test oracle downstream, not an accident.  The interaction-frame propagator
integrates the time-ordered system with a commutator-free fourth-order
scheme and bisection step control.

Control file (JSON): ``{"segments": [[duration, value], ...],
"range": [lo, hi]}`` or ``"range": {"two_value": a}``.
State file (JSON): ``{"cutoff": n, "coefficients": [[re, im], ...]}`` with
1-based level indexing (coefficient i belongs to level i+1... levels are
listed in order starting at level 1).
"""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import PreconditionError
from .model import SystemModel, truncate

UNITARITY_TOL = 1e-10
STEP_TOL_DEFAULT = 1e-9
_SQRT3 = math.sqrt(3.0)
_CF4_A1 = 0.25 + _SQRT3 / 6.0
_CF4_A2 = 0.25 - _SQRT3 / 6.0


@dataclass(frozen=True, eq=False)
class ValueRange:
    """Declared control range: an interval or the two-point set {0, a}."""

    kind: str  # "interval" | "two_value"
    lo: float
    hi: float

    @classmethod
    def interval(cls, lo: float, hi: float) -> "ValueRange":
        if hi < lo:
            raise ValueError("empty interval")
        return cls("interval", float(lo), float(hi))

    @classmethod
    def two_value(cls, a: float) -> "ValueRange":
        if a <= 0:
            raise ValueError("two-value amplitude must be positive")
        return cls("two_value", 0.0, float(a))

    def contains(self, v: float) -> bool:
        if self.kind == "two_value":
            return v == 0.0 or v == self.hi
        return self.lo - 1e-12 <= v <= self.hi + 1e-12

    def to_json(self):
        if self.kind == "two_value":
            return {"two_value": self.hi}
        return [self.lo, self.hi]

    @classmethod
    def from_json(cls, obj) -> "ValueRange":
        if isinstance(obj, dict) and "two_value" in obj:
            return cls.two_value(float(obj["two_value"]))
        if isinstance(obj, (list, tuple)) and len(obj) == 2:
            return cls.interval(float(obj[0]), float(obj[1]))
        raise ValueError(f"malformed control range {obj!r}")


@dataclass(frozen=True, eq=False)
class PiecewiseConstantControl:
    """Ordered (duration, value) segments with declared value range."""

    segments: tuple[tuple[float, float], ...]
    value_range: ValueRange

    def __post_init__(self):
        for d, v in self.segments:
            if d <= 0:
                raise ValueError(f"segment duration {d} must be positive")
            if not self.value_range.contains(v):
                raise ValueError(f"value {v} outside declared range {self.value_range}")

    @property
    def total_time(self) -> float:
        return math.fsum(d for d, _v in self.segments)

    def breakpoints(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum([d for d, _v in self.segments])])

    def values(self) -> np.ndarray:
        return np.array([v for _d, v in self.segments], dtype=float)

    def value_at(self, t: float) -> float:
        """Value on the segment containing t (right-continuous; last value at T)."""
        if not self.segments:
            return 0.0
        bp = self.breakpoints()
        idx = int(np.searchsorted(bp, t, side="right")) - 1
        idx = min(max(idx, 0), len(self.segments) - 1)
        return self.segments[idx][1]

    def prefix(self, t: float) -> "PiecewiseConstantControl":
        """Control restricted to [0, t], splitting the segment containing t."""
        if t <= 0:
            return PiecewiseConstantControl((), self.value_range)
        out = []
        acc = 0.0
        for d, v in self.segments:
            if acc + d <= t:
                out.append((d, v))
                acc += d
            else:
                if t - acc > 0:
                    out.append((t - acc, v))
                acc = t
                break
        return PiecewiseConstantControl(tuple(out), self.value_range)

    def to_json(self) -> dict:
        return {"segments": [[d, v] for d, v in self.segments], "range": self.value_range.to_json()}

    @classmethod
    def from_json(cls, obj) -> "PiecewiseConstantControl":
        if not isinstance(obj, dict) or "segments" not in obj or "range" not in obj:
            raise ValueError('control document needs "segments" and "range"')
        segs = tuple((float(d), float(v)) for d, v in obj["segments"])
        return cls(segs, ValueRange.from_json(obj["range"]))


def concat_controls(controls: Sequence[PiecewiseConstantControl], value_range: Optional[ValueRange] = None):
    segs: list[tuple[float, float]] = []
    for c in controls:
        segs.extend(c.segments)
    if value_range is None:
        lo = min((c.value_range.lo for c in controls), default=0.0)
        hi = max((c.value_range.hi for c in controls), default=1.0)
        value_range = ValueRange.interval(lo, hi)
    return PiecewiseConstantControl(tuple(segs), value_range)


@dataclass(frozen=True, eq=False)
class StateVector:
    """Level coefficients of a state truncated at a cutoff."""

    coefficients: np.ndarray
    cutoff: int

    def __post_init__(self):
        arr = np.asarray(self.coefficients, dtype=complex)
        if arr.shape != (self.cutoff,):
            raise ValueError(f"need {self.cutoff} coefficients, got shape {arr.shape}")
        object.__setattr__(self, "coefficients", arr)
        arr.setflags(write=False)

    def norm(self) -> float:
        return float(np.linalg.norm(self.coefficients))

    def padded(self, cutoff: int) -> "StateVector":
        if cutoff < self.cutoff:
            raise ValueError("cannot pad to a smaller cutoff")
        out = np.zeros(cutoff, dtype=complex)
        out[: self.cutoff] = self.coefficients
        return StateVector(out, cutoff)

    def to_json(self) -> dict:
        return {
            "cutoff": self.cutoff,
            "coefficients": [[float(c.real), float(c.imag)] for c in self.coefficients],
        }

    @classmethod
    def from_json(cls, obj) -> "StateVector":
        if not isinstance(obj, dict) or "cutoff" not in obj or "coefficients" not in obj:
            raise ValueError('state document needs "cutoff" and "coefficients"')
        coeffs = np.array([complex(re, im) for re, im in obj["coefficients"]])
        return cls(coeffs, int(obj["cutoff"]))


def basis_state(level: int, cutoff: int) -> StateVector:
    v = np.zeros(cutoff, dtype=complex)
    v[level - 1] = 1.0
    return StateVector(v, cutoff)


# eigendecompositions of h0 + v * coupling, keyed per system then (cutoff, v)
_EIG_CACHE: "weakref.WeakKeyDictionary[SystemModel, dict]" = weakref.WeakKeyDictionary()


def _segment_eig(system: SystemModel, cutoff: int, value: float):
    cache = _EIG_CACHE.setdefault(system, {})
    key = (cutoff, value)
    hit = cache.get(key)
    if hit is not None:
        return hit
    pair = truncate(system, cutoff)
    if value == 0.0:
        w = np.diag(pair.h0).real.copy()
        entry = (w, None)
    else:
        h = pair.h0 + value * (pair.h1 - pair.h0)
        w, V = np.linalg.eigh(h)
        entry = (w, V)
    if len(cache) > 4096:
        cache.clear()
    cache[key] = entry
    return entry


def _apply_segment(system: SystemModel, cutoff: int, value: float, dt: float, psi: np.ndarray) -> np.ndarray:
    w, V = _segment_eig(system, cutoff, value)
    phases = np.exp(-1j * w * dt)
    if V is None:
        return phases * psi
    return V @ (phases * (V.conj().T @ psi))


def _validate_two_value(control: PiecewiseConstantControl):
    bad = [v for _d, v in control.segments if v not in (0.0, 1.0)]
    if bad:
        raise PreconditionError(
            f"two-value semantics requires control values in {{0, 1}}, got {sorted(set(bad))[:3]}; "
            "propagators through the nonlinear-in-control Hamiltonian agree with the bilinear "
            "ones only there"
        )


def propagate(
    system: SystemModel,
    control: PiecewiseConstantControl,
    cutoff: int,
    state: StateVector,
    two_value: bool = False,
) -> StateVector:
    """Apply the segment-by-segment exponential propagator to a state.

    With ``two_value=True`` the control must take values in {0, 1} and the
    exponentials use the endpoint Hamiltonians directly; for general values
    the control enters linearly through the coupling operator.
    """
    if state.cutoff != cutoff:
        raise PreconditionError(f"state cutoff {state.cutoff} != requested cutoff {cutoff}")
    if two_value:
        _validate_two_value(control)
    psi = state.coefficients.copy()
    for d, v in control.segments:
        psi = _apply_segment(system, cutoff, v, d, psi)
    return StateVector(psi, cutoff)


def propagator_matrix(
    system: SystemModel,
    control: PiecewiseConstantControl,
    cutoff: int,
    two_value: bool = False,
) -> np.ndarray:
    """Matrix form of :func:`propagate`; columns are propagated basis states."""
    if two_value:
        _validate_two_value(control)
    U = np.eye(cutoff, dtype=complex)
    for d, v in control.segments:
        w, V = _segment_eig(system, cutoff, v)
        phases = np.exp(-1j * w * d)
        if V is None:
            U = phases[:, None] * U
        else:
            U = V @ (phases[:, None] * (V.conj().T @ U))
    return U


def unitarity_defect(U: np.ndarray) -> float:
    n = U.shape[0]
    return float(np.linalg.norm(U.conj().T @ U - np.eye(n), 2))


def theta(system: SystemModel, t: float, N: int) -> np.ndarray:
    """Interaction-frame coupling: drift conjugation reduces to entrywise phases."""
    if N < 1:
        raise ValueError("N must be >= 1")
    pair = truncate(system, N)
    lam = system.eigenvalues(N)
    phase = np.exp(1j * (lam[:, None] - lam[None, :]) * t)
    return pair.b * phase


def _expm_skew(B: np.ndarray) -> np.ndarray:
    """Exponential of a skew-Hermitian matrix through the Hermitian eigenproblem."""
    H = 1j * B
    w, V = np.linalg.eigh(H)
    return (V * np.exp(-1j * w)) @ V.conj().T


def _cf4_step(system, N, b, lam, v: float, t0: float, h: float, X: np.ndarray) -> np.ndarray:
    c1 = 0.5 - _SQRT3 / 6.0
    c2 = 0.5 + _SQRT3 / 6.0
    phase = lam[:, None] - lam[None, :]
    M1 = v * b * np.exp(1j * phase * (t0 + c1 * h))
    M2 = v * b * np.exp(1j * phase * (t0 + c2 * h))
    B1 = h * (_CF4_A1 * M1 + _CF4_A2 * M2)
    B2 = h * (_CF4_A2 * M1 + _CF4_A1 * M2)
    return _expm_skew(B2) @ (_expm_skew(B1) @ X)


def interaction_propagator(
    system: SystemModel,
    control: PiecewiseConstantControl,
    N: int,
    s: float,
    t: float,
    step_tol: float = STEP_TOL_DEFAULT,
) -> np.ndarray:
    """Propagator of the interaction-frame system from time s to time t.

    Solves X' = v(t) Theta(t) X, X(s) = I with bisection-controlled
    commutator-free fourth-order steps; local error per step <= step_tol.
    """
    if not (0.0 <= s <= t <= control.total_time + 1e-12):
        raise PreconditionError(f"need 0 <= s <= t <= total_time, got s={s}, t={t}")
    pair = truncate(system, N)
    b = pair.b
    lam = system.eigenvalues(N)
    X = np.eye(N, dtype=complex)
    if t - s <= 0:
        return X

    def integrate(v, a0, a1, X, depth=0):
        h = a1 - a0
        if h <= 1e-14:
            return X
        coarse = _cf4_step(system, N, b, lam, v, a0, h, np.eye(N, dtype=complex))
        mid = a0 + h / 2.0
        fine = _cf4_step(system, N, b, lam, v, a0, h / 2.0, np.eye(N, dtype=complex))
        fine = _cf4_step(system, N, b, lam, v, mid, h / 2.0, fine)
        if np.linalg.norm(coarse - fine, 2) <= step_tol or depth >= 40:
            if depth >= 40:
                raise FloatingPointError("step underflow in interaction propagator")
            return fine @ X
        X = integrate(v, a0, mid, X, depth + 1)
        return integrate(v, mid, a1, X, depth + 1)

    bp = control.breakpoints()
    for i, (_d, v) in enumerate(control.segments):
        lo, hi = bp[i], bp[i + 1]
        a0, a1 = max(lo, s), min(hi, t)
        if a1 - a0 <= 1e-15 or v == 0.0:
            continue
        X = integrate(v, a0, a1, X)
    return X


def interaction_checkpoints(
    system: SystemModel,
    control: PiecewiseConstantControl,
    N: int,
    times: Sequence[float],
    step_tol: float = STEP_TOL_DEFAULT,
) -> list[np.ndarray]:
    """X_{t,0} at increasing times, integrated once cumulatively."""
    out = []
    prev_t = 0.0
    X = np.eye(N, dtype=complex)
    for tt in times:
        if tt < prev_t - 1e-12:
            raise ValueError("times must be nondecreasing")
        if tt > prev_t:
            X = interaction_propagator(system, control, N, prev_t, tt, step_tol) @ X
            prev_t = tt
        out.append(X.copy())
    return out


def interaction_derivative_check(
    system: SystemModel,
    control: PiecewiseConstantControl,
    state: StateVector,
    t: float,
    h: float,
    probe: Optional[StateVector] = None,
) -> float:
    """Residual of the interaction-frame derivative identity at time t.

    Central difference of <psi, e^{-tA} U_t phi> against the closed form
    -<u(t) Theta(t) psi, e^{-tA} U_t phi>; second order in h by construction.
    """
    cutoff = state.cutoff
    bp = control.breakpoints()
    interior = [(lo, hi) for lo, hi in zip(bp[:-1], bp[1:])]
    if not any(lo + h < t < hi - h for lo, hi in interior):
        raise PreconditionError(f"t={t} with step h={h} is not interior to one control segment")
    psi = (probe.coefficients if probe is not None else state.coefficients).astype(complex)
    lam = system.eigenvalues(cutoff)

    def f(tt: float) -> complex:
        y = propagate(system, control.prefix(tt), cutoff, state).coefficients
        y = np.exp(1j * lam * tt) * y  # e^{-tA} with diagonal drift
        return complex(np.vdot(psi, y))

    numeric = (f(t + h) - f(t - h)) / (2.0 * h)
    y_t = propagate(system, control.prefix(t), cutoff, state).coefficients
    y_t = np.exp(1j * lam * t) * y_t
    rhs = -complex(np.vdot(control.value_at(t) * (theta(system, t, cutoff) @ psi), y_t))
    return abs(numeric - rhs)


def tail_scan(
    system: SystemModel,
    control: PiecewiseConstantControl,
    cutoffs: Sequence[int],
    observable_n: int,
    state: StateVector,
    two_value: bool = False,
) -> list[tuple[int, np.ndarray]]:
    """Projected final state at a ladder of cutoffs, for stabilization checks."""
    cutoffs = list(cutoffs)
    if any(b <= a for a, b in zip(cutoffs, cutoffs[1:])):
        raise PreconditionError("cutoffs must be strictly increasing")
    if cutoffs and cutoffs[0] <= observable_n:
        raise PreconditionError("minimum cutoff must exceed the observed level count")
    out = []
    for c in cutoffs:
        final = propagate(system, control, c, state.padded(c), two_value=two_value)
        out.append((c, final.coefficients[:observable_n].copy()))
    return out
