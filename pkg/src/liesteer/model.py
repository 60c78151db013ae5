"""System ingestion, Galerkin compressions, and the bilinear reduction.

A system is described by the eigenvalues of the free Hamiltonian together
with the matrix elements of the (bounded) coupling operator, i.e. the
difference between the Hamiltonian at control value one and at control
value zero.  Everything downstream (gap tables, selections, Lie closures,
propagators) reads that data through :class:`SystemModel`.

System description file (JSON, 1-based level indices)::

    {
      "eigenvalues": [1.0, 4.0, 9.0]        // or {"rule": "k^2"}
      "coupling":    [[j, k, re, im], ...],  // Hermitian part declared once or twice
      "polarizability": {"w1": [[j,k,re,im],...], "w2": [...]},   // optional
      "tail": {"monotone_from": 1}           // optional
    }

Eigenvalues may be given as an explicit nondecreasing list or as a
closed-form rule in the level index ``k`` (``"k^2"``, ``"2*k + 1"``, ...).
Coupling entries declared on one side of the diagonal are mirrored; entries
declared on both sides must agree with their mirror conjugate to 1e-12
(smaller contradictions are averaged, larger ones are rejected).
"""

from __future__ import annotations

import ast
import json
import math
import operator
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import SystemValidationError, TailUndecidableError

HERMITICITY_TOL = 1e-12

_RULE_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
    ast.Mod: operator.mod,
}
_RULE_UNARY = {ast.UAdd: operator.pos, ast.USub: operator.neg}
_RULE_FUNCS = {"sqrt": math.sqrt, "log": math.log, "exp": math.exp, "abs": abs}
_RULE_NAMES = {"pi": math.pi, "e": math.e}


def compile_eigenvalue_rule(text: str) -> Callable[[int], float]:
    """Compile a closed-form eigenvalue rule like ``"k^2"`` into a callable.

    Accepts an optional ``lambda_k =`` left-hand side and the operators
    ``+ - * / ** ^`` plus ``sqrt/log/exp/abs`` and the constants ``pi, e``.
    """
    expr = text.split("=", 1)[1] if "=" in text else text
    expr = expr.replace("^", "**").strip()
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as exc:
        raise SystemValidationError(f"cannot parse eigenvalue rule {text!r}: {exc}") from exc

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name):
            if node.id == "k":
                return k_value
            if node.id in _RULE_NAMES:
                return _RULE_NAMES[node.id]
            raise SystemValidationError(f"unknown name {node.id!r} in eigenvalue rule")
        if isinstance(node, ast.BinOp) and type(node.op) in _RULE_BINOPS:
            return _RULE_BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _RULE_UNARY:
            return _RULE_UNARY[type(node.op)](ev(node.operand))
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _RULE_FUNCS:
            return _RULE_FUNCS[node.func.id](*[ev(a) for a in node.args])
        raise SystemValidationError(f"unsupported construct in eigenvalue rule {text!r}")

    k_value = 1
    ev(tree)  # validate structure once

    def rule(k: int) -> float:
        nonlocal k_value
        k_value = k
        return float(ev(tree))

    return rule


def _merge_declared_entries(raw: Iterable[Sequence[float]]) -> dict[tuple[int, int], complex]:
    """Mirror one-sided declarations and reconcile double declarations."""
    declared: dict[tuple[int, int], complex] = {}
    for item in raw:
        if len(item) != 4:
            raise SystemValidationError(f"coupling entry {item!r} is not [j, k, re, im]")
        j, k, re, im = int(item[0]), int(item[1]), float(item[2]), float(item[3])
        if j < 1 or k < 1:
            raise SystemValidationError(f"coupling indices must be 1-based positive, got ({j}, {k})")
        value = complex(re, im)
        if (j, k) in declared and abs(declared[(j, k)] - value) > HERMITICITY_TOL:
            raise SystemValidationError(f"entry ({j}, {k}) declared twice with conflicting values")
        declared[(j, k)] = value

    entries: dict[tuple[int, int], complex] = {}
    for (j, k), value in declared.items():
        mirror = declared.get((k, j))
        if j == k:
            if abs(value.imag) > HERMITICITY_TOL:
                raise SystemValidationError(f"diagonal entry ({j}, {j}) = {value} is not real")
            entries[(j, k)] = complex(value.real, 0.0)
            continue
        if mirror is not None:
            defect = abs(value - mirror.conjugate())
            if defect > HERMITICITY_TOL:
                raise SystemValidationError(
                    f"non-Hermitian contradiction at ({j}, {k}): "
                    f"{value} vs conj({mirror}) differs by {defect:.3e}"
                )
            value = (value + mirror.conjugate()) / 2.0
        entries[(j, k)] = value
        entries[(k, j)] = value.conjugate()
    return entries


@dataclass(frozen=True, eq=False)
class Coupling:
    """Hermitian sparse matrix elements with decidable support.

    ``entries`` holds explicit values (both sides of the diagonal stored).
    ``bands`` optionally declares an infinite band pattern: offset ``d >= 0``
    maps to the value of every element ``(k, k+d)``; explicit entries
    override the band on their index pair.
    """

    entries: Mapping[tuple[int, int], complex] = field(default_factory=dict)
    bands: Mapping[int, complex] = field(default_factory=dict)

    def __post_init__(self):
        for d, v in self.bands.items():
            if d < 0:
                raise SystemValidationError(f"band offset {d} must be nonnegative")
            if d == 0 and abs(complex(v).imag) > HERMITICITY_TOL:
                raise SystemValidationError("diagonal band value must be real")

    def value(self, j: int, k: int) -> complex:
        if (j, k) in self.entries:
            return self.entries[(j, k)]
        d = abs(j - k)
        if d in self.bands:
            v = complex(self.bands[d])
            return v if k >= j else v.conjugate()
        return 0.0

    @property
    def max_declared_index(self) -> int:
        return max((max(j, k) for j, k in self.entries), default=0)

    @property
    def has_bands(self) -> bool:
        return any(abs(complex(v)) > 0 for v in self.bands.values())

    def row_support(self, j: int) -> set[int]:
        cols = {k for (jj, k) in self.entries if jj == j and abs(self.entries[(jj, k)]) > 0}
        for d, v in self.bands.items():
            if abs(complex(v)) > 0:
                cols.add(j + d)
                if j - d >= 1:
                    cols.add(j - d)
        return cols

    def support_pairs_upto(self, m: int) -> list[tuple[int, int]]:
        """Pairs (j, k) with j < k <= m and a potentially nonzero element."""
        pairs = set()
        for j in range(1, m + 1):
            for k in self.row_support(j):
                if j < k <= m:
                    pairs.add((j, k))
        return sorted(pairs)

    def crossing_support(self, n: int, l_max: int) -> list[tuple[int, int]]:
        """Pairs (k, l) with k <= n < l <= l_max and nonzero element."""
        pairs = []
        for l in range(n + 1, l_max + 1):
            for k in sorted(self.row_support(l)):
                if k <= n and abs(self.value(k, l)) > 0:
                    pairs.append((k, l))
        return pairs

    def bound(self) -> float:
        """Supremum of row 1-norms over the declared support (Assumption-style
        boundedness certificate). Finite by construction."""
        band_sum = 2.0 * sum(abs(complex(v)) for d, v in self.bands.items() if d > 0)
        band_sum += abs(complex(self.bands.get(0, 0.0)))
        rows = {j for (j, _k) in self.entries}
        best = band_sum
        for j in rows:
            total = 0.0
            for k in self.row_support(j):
                total += abs(self.value(j, k))
            best = max(best, total)
        return best

    def compression(self, n: int) -> np.ndarray:
        mat = np.zeros((n, n), dtype=complex)
        for j in range(1, n + 1):
            for k in self.row_support(j):
                if 1 <= k <= n:
                    mat[j - 1, k - 1] = self.value(j, k)
        return mat


@dataclass(frozen=True, eq=False)
class TailDeclaration:
    """Eigenvalues are strictly increasing and divergent from this 1-based index on."""

    monotone_from: int = 1


@dataclass(frozen=True, eq=False)
class SystemModel:
    """Validated system description: spectrum, coupling, optional quadratic split.

    Immutable after construction; all operations on it are pure.
    """

    eigenvalue_list: tuple[float, ...]
    eigenvalue_rule: Optional[Callable[[int], float]]
    rule_source: Optional[str]
    coupling: Coupling
    polarizability: Optional[tuple[Coupling, Coupling]]
    tail: Optional[TailDeclaration]
    coupling_bound: float
    name: str = "system"

    @property
    def has_rule(self) -> bool:
        return self.eigenvalue_rule is not None

    def max_eigenvalue_index(self) -> float:
        return math.inf if self.has_rule else len(self.eigenvalue_list)

    def eigenvalue(self, k: int) -> float:
        """Eigenvalue at 1-based level k. Rules override the list past its length."""
        if k < 1:
            raise ValueError("levels are 1-based")
        if k <= len(self.eigenvalue_list):
            return self.eigenvalue_list[k - 1]
        if self.eigenvalue_rule is not None:
            return self.eigenvalue_rule(k)
        raise TailUndecidableError(
            f"eigenvalue {k} requested but only {len(self.eigenvalue_list)} declared and no rule present"
        )

    def eigenvalues(self, n: int) -> np.ndarray:
        return np.array([self.eigenvalue(k) for k in range(1, n + 1)], dtype=float)


def _build_system(
    eigenvalues=None,
    rule: Optional[str] = None,
    coupling_entries: Iterable[Sequence[float]] = (),
    coupling_bands: Optional[Mapping[int, complex]] = None,
    polarizability=None,
    tail: Optional[int] = None,
    name: str = "system",
) -> SystemModel:
    ev_list = tuple(float(x) for x in (eigenvalues or ()))
    if any(b < a - 1e-15 for a, b in zip(ev_list, ev_list[1:])):
        raise SystemValidationError("eigenvalues must be nondecreasing")
    ev_rule = compile_eigenvalue_rule(rule) if rule else None
    if ev_rule is not None and ev_list:
        # a rule overrides the list only beyond its length; they should agree on it
        for k, lam in enumerate(ev_list, start=1):
            if abs(ev_rule(k) - lam) > 1e-9 * max(1.0, abs(lam)):
                raise SystemValidationError(
                    f"declared eigenvalue {lam} at level {k} contradicts rule value {ev_rule(k)}"
                )
    if ev_rule is None and not ev_list:
        raise SystemValidationError("no eigenvalues given (need a list or a rule)")

    if polarizability is not None:
        w1_entries, w2_entries, w1_bands, w2_bands = polarizability
        w1 = Coupling(_merge_declared_entries(w1_entries), dict(w1_bands or {}))
        w2 = Coupling(_merge_declared_entries(w2_entries), dict(w2_bands or {}))
        merged_bands = {}
        for d in set(w1.bands) | set(w2.bands):
            merged_bands[d] = complex(w1.bands.get(d, 0.0)) + complex(w2.bands.get(d, 0.0))
        merged_entries: dict[tuple[int, int], complex] = {}
        for key in set(w1.entries) | set(w2.entries):
            merged_entries[key] = w1.value(*key) + w2.value(*key)
        if coupling_entries or coupling_bands:
            declared = Coupling(_merge_declared_entries(coupling_entries), dict(coupling_bands or {}))
            check_upto = max(declared.max_declared_index, 1)
            for j, k in declared.support_pairs_upto(check_upto) + [(i, i) for i in range(1, check_upto + 1)]:
                lhs = declared.value(j, k)
                rhs = w1.value(j, k) + w2.value(j, k)
                if abs(lhs - rhs) > HERMITICITY_TOL:
                    raise SystemValidationError(
                        f"polarizability split does not sum to coupling at ({j}, {k}): {rhs} != {lhs}"
                    )
        coupling = Coupling(merged_entries, merged_bands)
        pol = (w1, w2)
    else:
        coupling = Coupling(_merge_declared_entries(coupling_entries), dict(coupling_bands or {}))
        pol = None

    tail_decl = TailDeclaration(int(tail)) if tail is not None else None
    return SystemModel(
        eigenvalue_list=ev_list,
        eigenvalue_rule=ev_rule,
        rule_source=rule,
        coupling=coupling,
        polarizability=pol,
        tail=tail_decl,
        coupling_bound=coupling.bound(),
        name=name,
    )


def system_from_document(doc: Mapping, name: str = "system") -> SystemModel:
    """Build a SystemModel from a parsed system description document."""
    if not isinstance(doc, Mapping):
        raise SystemValidationError("system description must be a JSON object")
    ev = doc.get("eigenvalues")
    rule = None
    ev_list = None
    if isinstance(ev, Mapping):
        rule = ev.get("rule")
        if not isinstance(rule, str):
            raise SystemValidationError('eigenvalues object must carry a string "rule"')
    elif isinstance(ev, Sequence):
        ev_list = ev
    else:
        raise SystemValidationError('missing or malformed "eigenvalues" field')

    pol = None
    if "polarizability" in doc and doc["polarizability"] is not None:
        p = doc["polarizability"]
        if not isinstance(p, Mapping) or "w1" not in p or "w2" not in p:
            raise SystemValidationError('"polarizability" must carry "w1" and "w2" entry lists')
        pol = (p["w1"], p["w2"], None, None)

    tail = None
    if "tail" in doc and doc["tail"] is not None:
        t = doc["tail"]
        if not isinstance(t, Mapping) or "monotone_from" not in t:
            raise SystemValidationError('"tail" must be {"monotone_from": index}')
        tail = t["monotone_from"]

    return _build_system(
        eigenvalues=ev_list,
        rule=rule,
        coupling_entries=doc.get("coupling", ()),
        polarizability=pol,
        tail=tail,
        name=name,
    )


def load_system(path) -> SystemModel:
    """Load and validate a system description file (JSON)."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise SystemValidationError(f"cannot read system file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SystemValidationError(f"system file {path} is not valid JSON: {exc}") from exc
    return system_from_document(doc, name=str(path))


@dataclass(frozen=True, eq=False)
class GalerkinPair:
    """Compressions of the free and coupled Hamiltonians at cutoff n, plus skew forms."""

    n: int
    h0: np.ndarray  # real diagonal, first n eigenvalues
    h1: np.ndarray  # h0 + coupling compression (Hermitian)
    a: np.ndarray   # -i h0
    b: np.ndarray   # -i (h1 - h0)

    def __post_init__(self):
        for arr in (self.h0, self.h1, self.a, self.b):
            arr.setflags(write=False)


def truncate(system: SystemModel, n: int) -> GalerkinPair:
    """Galerkin compression at cutoff n."""
    if n < 1:
        raise ValueError("cutoff must be >= 1")
    lam = system.eigenvalues(n)  # raises TailUndecidableError past declared data
    h0 = np.diag(lam).astype(float)
    comp = system.coupling.compression(n)
    h1 = h0 + comp
    return GalerkinPair(n=n, h0=h0, h1=h1, a=-1j * h0, b=-1j * comp)


@dataclass(frozen=True, eq=False)
class OperatorHandle:
    """Cutoff-indexed operator: truncations agree with GalerkinPair fields."""

    label: str
    matrix: Callable[[int], np.ndarray]
    norm_bound: Optional[float]


def bilinear_reduction(system: SystemModel) -> tuple[OperatorHandle, OperatorHandle]:
    """Drift and coupling operator handles of the control-linear form.

    The drift equals -i times the free Hamiltonian and the coupling handle
    equals -i times the coupling operator, so truncations reproduce
    ``truncate(system, n).a`` and ``.b`` at every cutoff.
    """
    drift = OperatorHandle(
        label="drift",
        matrix=lambda n: truncate(system, n).a,
        norm_bound=None,
    )
    coupling = OperatorHandle(
        label="coupling",
        matrix=lambda n: truncate(system, n).b,
        norm_bound=system.coupling_bound,
    )
    return drift, coupling


def builtin_family(name: str, **params) -> SystemModel:
    """Model gallery used throughout the tests and the docs.

    box_tridiagonal(c=1.0)
        lambda_k = k^2 with nearest-neighbour coupling of strength c.
    polarizability_toy(c1=1.0, c2=0.1)
        Same spectrum; linear term tridiagonal c1, quadratic term diagonal c2.
    custom_gaps(eigenvalues=[...], couplings=[[j,k,re,im],...])
        Finite explicit model for spectral corner cases.
    """
    if name == "box_tridiagonal":
        c = float(params.pop("c", 1.0))
        if params:
            raise SystemValidationError(f"unknown parameters {sorted(params)} for box_tridiagonal")
        return _build_system(rule="k^2", coupling_bands={1: c}, tail=1, name="box_tridiagonal")
    if name == "polarizability_toy":
        c1 = float(params.pop("c1", 1.0))
        c2 = float(params.pop("c2", 0.1))
        if params:
            raise SystemValidationError(f"unknown parameters {sorted(params)} for polarizability_toy")
        return _build_system(
            rule="k^2",
            polarizability=((), (), {1: c1}, {0: c2}),
            tail=1,
            name="polarizability_toy",
        )
    if name == "custom_gaps":
        eigenvalues = params.pop("eigenvalues", None)
        couplings = params.pop("couplings", None)
        tail = params.pop("tail", None)
        if params:
            raise SystemValidationError(f"unknown parameters {sorted(params)} for custom_gaps")
        if eigenvalues is None or couplings is None:
            raise SystemValidationError("custom_gaps needs eigenvalues=[...] and couplings=[[j,k,re,im],...]")
        return _build_system(
            eigenvalues=eigenvalues,
            coupling_entries=couplings,
            tail=tail,
            name="custom_gaps",
        )
    raise SystemValidationError(f"unknown builtin family {name!r}")
