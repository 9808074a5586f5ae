"""Problem data for constrained minimization with composite rows q + V(inner).

Each row k = 0..m (row 0 is the objective) is q_k(x) + V_k(inner_k(x)) with
q_k, inner_k quadratic and V_k a Legendre-type scalar function.  Rows flagged
as purely quadratic carry inner_k = 0 and the unit half-square V, so the
composite collapses to q_k exactly.  The index set J selects which
constraints are treated as equalities.
"""

from __future__ import annotations

import enum
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .canonical import (
    Interval,
    LegendreFunction,
    UNIT_HALF_SQUARE,
    legendre_from_spec,
    legendre_to_spec,
    quadratic_legendre,
)


class DomainExit(Exception):
    """An inner value left the domain of its V; the point is outside X."""

    def __init__(self, k: int, t: float):
        self.k = k
        self.t = t
        super().__init__(f"inner value of row {k} is {t!r}, outside dom V_{k}")


class ProblemFormatError(ValueError):
    """Malformed problem document; the message carries the field location."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class QuadraticFunction:
    """q(x) = <x, A x>/2 - <b, x> + c with A symmetric."""

    A: np.ndarray
    b: np.ndarray
    c: float

    @classmethod
    def build(cls, n: int, A=None, b=None, c: float = 0.0, where: str = "") -> "QuadraticFunction":
        A = np.zeros((n, n)) if A is None else np.asarray(A, dtype=float)
        b = np.zeros(n) if b is None else np.asarray(b, dtype=float)
        if A.shape != (n, n):
            raise ProblemFormatError(f"{where}: matrix must be {n}x{n}, got shape {A.shape}")
        if b.shape != (n,):
            raise ProblemFormatError(f"{where}: vector must have length {n}, got shape {b.shape}")
        if not np.array_equal(A, A.T):
            warnings.warn(f"{where or 'quadratic'}: matrix is not symmetric, using (A+A^T)/2")
            A = 0.5 * (A + A.T)
        return cls(_readonly(A), _readonly(b), float(c))

    @classmethod
    def zero(cls, n: int) -> "QuadraticFunction":
        return cls.build(n)

    @property
    def is_zero(self) -> bool:
        return not np.any(self.A) and not np.any(self.b) and self.c == 0.0

    def value(self, x: np.ndarray) -> float:
        return 0.5 * float(x @ self.A @ x) - float(self.b @ x) + self.c

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return self.A @ x - self.b

    def value_batch(self, X: np.ndarray) -> np.ndarray:
        """Evaluate on points stacked along the last axis of X."""
        quad = 0.5 * np.einsum("...i,ij,...j->...", X, self.A, X)
        return quad - X @ self.b + self.c


@dataclass(frozen=True)
class ConstraintTerm:
    """One row g_k = q + V(inner); `is_quadratic` marks g_k = q exactly."""

    q: QuadraticFunction
    inner: QuadraticFunction
    V: LegendreFunction
    is_quadratic: bool = False

    def __post_init__(self) -> None:
        if self.is_quadratic and not self.inner.is_zero:
            raise ProblemFormatError("quadratic rows must carry a zero inner map")


def quadratic_term(q: QuadraticFunction) -> ConstraintTerm:
    return ConstraintTerm(q=q, inner=QuadraticFunction.zero(len(q.b)), V=UNIT_HALF_SQUARE,
                          is_quadratic=True)


@dataclass(frozen=True)
class Problem:
    """Dimension n, m constraints, rows 0..m, and the equality index set J."""

    n: int
    m: int
    terms: tuple[ConstraintTerm, ...]
    J: frozenset[int] = frozenset()
    name: str = ""
    params: tuple[tuple[str, float], ...] = ()

    def __post_init__(self) -> None:
        if len(self.terms) != self.m + 1:
            raise ProblemFormatError(f"expected {self.m + 1} rows, got {len(self.terms)}")
        bad = [j for j in self.J if not (1 <= j <= self.m)]
        if bad:
            raise ProblemFormatError(f"equality indices out of range 1..{self.m}: {sorted(bad)}")

    # -- index bookkeeping ---------------------------------------------------
    @property
    def Q(self) -> frozenset[int]:
        """Rows (including 0) that are purely quadratic."""
        return frozenset(k for k, t in enumerate(self.terms) if t.is_quadratic)

    @property
    def Q0(self) -> frozenset[int]:
        return self.Q - {0}

    @property
    def Q0c(self) -> frozenset[int]:
        """Non-quadratic constraint indices; certificates need positive multipliers here."""
        return frozenset(range(1, self.m + 1)) - self.Q

    @property
    def Jc(self) -> frozenset[int]:
        return frozenset(range(1, self.m + 1)) - self.J

    def with_J(self, J) -> "Problem":
        return Problem(self.n, self.m, self.terms, frozenset(J), self.name, self.params)

    def param(self, key: str, default: float | None = None) -> float | None:
        return dict(self.params).get(key, default)

    # -- row evaluation -------------------------------------------------------
    def inner_value(self, k: int, x: np.ndarray) -> float:
        return self.terms[k].inner.value(x)

    def constraint_value(self, k: int, x: np.ndarray) -> float:
        """g_k(x); raises DomainExit when the inner value leaves dom V_k."""
        term = self.terms[k]
        if term.is_quadratic:
            return term.q.value(x)
        t = term.inner.value(x)
        if not term.V.dom.contains(t):
            raise DomainExit(k, t)
        return term.q.value(x) + float(term.V.value(t))

    def objective_value(self, x: np.ndarray) -> float:
        return self.constraint_value(0, x)


class DomainLocation(enum.Enum):
    INTERIOR = "interior"        # every inner value interior to its dom V
    BOUNDARY = "boundary"        # inside every dom V, some on the boundary
    OUTSIDE = "outside"


def domain_location(problem: Problem, x: np.ndarray) -> DomainLocation:
    on_boundary = False
    for k, term in enumerate(problem.terms):
        if term.is_quadratic:
            continue
        t = term.inner.value(x)
        if not term.V.dom.contains(t):
            return DomainLocation.OUTSIDE
        if not term.V.dom.interior_contains(t):
            on_boundary = True
    return DomainLocation.BOUNDARY if on_boundary else DomainLocation.INTERIOR


@dataclass(frozen=True)
class FeasibilityReport:
    feasible: bool
    values: np.ndarray                  # g_j(x) for j = 1..m (nan where undefined)
    constraint_ok: np.ndarray           # per-j verdict against the J/Jc rule
    in_equality_set: bool               # all g_j = 0 within tol
    in_inequality_set: bool             # all g_j <= tol
    reason: str | None = None


def check_feasibility(problem: Problem, x: np.ndarray, tol: float = 1e-8,
                      J: frozenset[int] | None = None) -> FeasibilityReport:
    """Feasibility of x for the problem with equality set J (default: problem.J)."""
    if tol < 0:
        raise ValueError("tol must be >= 0")
    J = problem.J if J is None else frozenset(J)
    m = problem.m
    values = np.full(m, math.nan)
    ok = np.zeros(m, dtype=bool)
    reason = None
    for j in range(1, m + 1):
        try:
            gj = problem.constraint_value(j, x)
        except DomainExit as exc:
            reason = str(exc)
            continue
        values[j - 1] = gj
        ok[j - 1] = abs(gj) <= tol if j in J else gj <= tol
    defined = ~np.isnan(values)
    feasible = bool(defined.all() and ok.all())
    in_eq = bool(defined.all() and np.all(np.abs(values) <= tol))
    in_ineq = bool(defined.all() and np.all(values <= tol))
    values.setflags(write=False)
    ok.setflags(write=False)
    return FeasibilityReport(feasible, values, ok, in_eq, in_ineq, reason)


# ---------------------------------------------------------------------------
# on-disk format

def _term_from_dict(data: dict, n: int, where: str) -> ConstraintTerm:
    if not isinstance(data, dict):
        raise ProblemFormatError(f"{where}: expected a mapping")
    known = {"A", "b", "c", "C", "d", "e", "V", "quadratic"}
    unknown = set(data) - known
    if unknown:
        raise ProblemFormatError(f"{where}: unknown fields {sorted(unknown)}")

    def matrix(key):
        raw = data.get(key)
        if raw is None:
            return None
        flat = np.asarray(raw, dtype=float).reshape(-1)
        if flat.size != n * n:
            raise ProblemFormatError(f"{where}.{key}: expected {n * n} entries, got {flat.size}")
        return flat.reshape(n, n)

    def vector(key):
        raw = data.get(key)
        if raw is None:
            return None
        vec = np.asarray(raw, dtype=float).reshape(-1)
        if vec.size != n:
            raise ProblemFormatError(f"{where}.{key}: expected {n} entries, got {vec.size}")
        return vec

    q = QuadraticFunction.build(n, matrix("A"), vector("b"), data.get("c", 0.0),
                                where=f"{where}.A")
    inner = QuadraticFunction.build(n, matrix("C"), vector("d"), data.get("e", 0.0),
                                    where=f"{where}.C")
    quadratic = bool(data.get("quadratic", False))
    if quadratic:
        if not inner.is_zero:
            raise ProblemFormatError(f"{where}: quadratic row carries a nonzero inner map")
        return quadratic_term(q)
    vspec = data.get("V")
    if vspec is None:
        raise ProblemFormatError(f"{where}: non-quadratic row needs a V spec")
    try:
        V = legendre_from_spec(vspec)
    except (ValueError, KeyError, TypeError) as exc:
        raise ProblemFormatError(f"{where}.V: {exc}") from exc
    return ConstraintTerm(q=q, inner=inner, V=V, is_quadratic=False)


def problem_from_dict(data: dict, name: str = "") -> Problem:
    if not isinstance(data, dict):
        raise ProblemFormatError("problem document must be a mapping")
    try:
        n = int(data["n"])
        m = int(data["m"])
    except KeyError as exc:
        raise ProblemFormatError(f"missing required field {exc.args[0]!r}") from None
    if n < 1:
        raise ProblemFormatError(f"n must be >= 1, got {n}")
    if m < 0:
        raise ProblemFormatError(f"m must be >= 0, got {m}")
    J = frozenset(int(j) for j in data.get("J", []))
    raw_terms = data.get("terms")
    if not isinstance(raw_terms, list) or len(raw_terms) != m + 1:
        found = len(raw_terms) if isinstance(raw_terms, list) else type(raw_terms).__name__
        raise ProblemFormatError(f"terms: expected a list of {m + 1} rows, found {found}")
    terms = tuple(_term_from_dict(t, n, where=f"terms[{k}]") for k, t in enumerate(raw_terms))
    return Problem(n=n, m=m, terms=terms, J=J, name=name or str(data.get("name", "")))


def problem_to_dict(problem: Problem) -> dict:
    rows = []
    for term in problem.terms:
        row: dict = {}
        if np.any(term.q.A):
            row["A"] = [float(v) for v in term.q.A.reshape(-1)]
        if np.any(term.q.b):
            row["b"] = [float(v) for v in term.q.b]
        if term.q.c:
            row["c"] = term.q.c
        if term.is_quadratic:
            row["quadratic"] = True
        else:
            if np.any(term.inner.A):
                row["C"] = [float(v) for v in term.inner.A.reshape(-1)]
            if np.any(term.inner.b):
                row["d"] = [float(v) for v in term.inner.b]
            if term.inner.c:
                row["e"] = term.inner.c
            row["V"] = legendre_to_spec(term.V)
        rows.append(row)
    return {"n": problem.n, "m": problem.m, "J": sorted(problem.J), "terms": rows}


def load_problem(path: str | Path) -> Problem:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ProblemFormatError(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ProblemFormatError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return problem_from_dict(data, name=path.stem)


def save_problem(problem: Problem, path: str | Path) -> None:
    Path(path).write_text(json.dumps(problem_to_dict(problem), indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# built-in instances

def double_well_problem(J=()) -> Problem:
    """1-d instance: convex quadratic objective, one double-well constraint.

    f(x) = x^2/2 - 6x and g_1(x) = ((x^2/2 - 4)^2)/2 - 2, so the feasible
    inequality region is [-2*sqrt(3), -2] union [2, 2*sqrt(3)].
    """
    objective = quadratic_term(QuadraticFunction.build(1, A=[[1.0]], b=[6.0]))
    well = ConstraintTerm(
        q=QuadraticFunction.zero(1),
        inner=QuadraticFunction.build(1, A=[[1.0]], b=[0.0], c=-4.0),
        V=quadratic_legendre(1.0, -2.0),
        is_quadratic=False,
    )
    return Problem(n=1, m=1, terms=(objective, well), J=frozenset(J), name="example1")


def morales_gao_problem(gamma: float, alpha: float = 1.0, eta: float = 1.0,
                        r: float = 1.0, c: float = 1.0) -> Problem:
    """Morales-Silva & Gao two-point instance in composite form.

    Minimizes (y - z)^2/2 over x = (y, z) subject to the sphere equality
    (y^2 - r^2)/2 = 0 and the surface equality
    alpha/2 ((z - c)^2/2 - eta)^2 - gamma (z - c) = 0, both in J.
    """
    objective = quadratic_term(
        QuadraticFunction.build(2, A=[[1.0, -1.0], [-1.0, 1.0]]))
    sphere = quadratic_term(
        QuadraticFunction.build(2, A=[[1.0, 0.0], [0.0, 0.0]], c=-0.5 * r * r))
    surface = ConstraintTerm(
        q=QuadraticFunction.build(2, b=[0.0, gamma], c=gamma * c),
        inner=QuadraticFunction.build(2, A=[[0.0, 0.0], [0.0, 1.0]], b=[0.0, c],
                                      c=0.5 * c * c - eta),
        V=quadratic_legendre(alpha, 0.0),
        is_quadratic=False,
    )
    return Problem(
        n=2, m=2, terms=(objective, sphere, surface), J=frozenset({1, 2}),
        name="msgao",
        params=(("gamma", float(gamma)), ("alpha", float(alpha)), ("eta", float(eta)),
                ("r", float(r)), ("c", float(c))),
    )


BUILTIN_NAMES = ("example1", "msgao")


def builtin_problem(name: str, **params) -> Problem:
    if name == "example1":
        return double_well_problem(**params)
    if name == "msgao":
        if "gamma" not in params:
            raise ValueError("msgao needs a gamma parameter")
        return morales_gao_problem(**params)
    raise KeyError(f"unknown builtin problem {name!r}; known: {', '.join(BUILTIN_NAMES)}")
