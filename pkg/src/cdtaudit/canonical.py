"""Scalar Legendre-type convex functions stored as explicit conjugate pairs.

A Legendre-type function V is strictly convex and differentiable on the
interior of its domain, and its derivative maps that interior bijectively
onto the interior of the conjugate's domain, with inverse the conjugate's
derivative.  Conjugates are supplied by the caller rather than computed
numerically, so every downstream evaluation of V* is exact; a validator
checks the Fenchel-Young equality and the derivative inversion on a
deterministic sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class InvalidLegendreError(ValueError):
    """A conjugate pair is structurally unusable (e.g. empty domain interior)."""


@dataclass(frozen=True)
class Interval:
    """Real interval with optionally infinite and optionally open endpoints."""

    lo: float = -math.inf
    hi: float = math.inf
    closed_lo: bool = True
    closed_hi: bool = True

    def __post_init__(self) -> None:
        if self.lo > self.hi:
            raise ValueError(f"empty interval: lo={self.lo} > hi={self.hi}")

    def contains(self, t: float) -> bool:
        if t < self.lo or t > self.hi:
            return False
        if t == self.lo and not (self.closed_lo and math.isfinite(self.lo)):
            return False
        if t == self.hi and not (self.closed_hi and math.isfinite(self.hi)):
            return False
        return True

    def contains_arr(self, t: np.ndarray) -> np.ndarray:
        lo_ok = t >= self.lo if (self.closed_lo and math.isfinite(self.lo)) else t > self.lo
        hi_ok = t <= self.hi if (self.closed_hi and math.isfinite(self.hi)) else t < self.hi
        return lo_ok & hi_ok

    def interior_contains(self, t: float) -> bool:
        return self.lo < t < self.hi

    @property
    def has_interior(self) -> bool:
        return self.lo < self.hi

    def interior_grid(self, count: int, margin: float = 1e-6, span: float = 10.0) -> np.ndarray:
        """Uniform grid in the interior, approaching finite endpoints to `margin`.

        Infinite endpoints are truncated at +-`span`.
        """
        if not self.has_interior:
            raise InvalidLegendreError(f"interval {self} has empty interior")
        lo = self.lo + margin if math.isfinite(self.lo) else -span
        hi = self.hi - margin if math.isfinite(self.hi) else span
        if lo >= hi:
            lo, hi = self.lo + 0.25 * (self.hi - self.lo), self.hi - 0.25 * (self.hi - self.lo)
        return np.linspace(lo, hi, count)


_REALS = Interval()


@dataclass(frozen=True)
class LegendreFunction:
    """Conjugate pair (V, V*) with derivative access.

    `value`/`deriv` act on dom, `conj_value`/`conj_deriv` on conj_dom.  All
    callables should accept floats (numpy scalars/arrays where possible).
    `conj_deriv2` is optional; solvers fall back to finite differences when
    it is absent.
    """

    dom: Interval
    conj_dom: Interval
    value: Callable
    deriv: Callable
    conj_value: Callable
    conj_deriv: Callable
    conj_deriv2: Callable | None = None
    label: str = ""
    spec: dict | None = field(default=None, compare=False)


def quadratic_legendre(a: float, shift: float = 0.0) -> LegendreFunction:
    """Scaled half-square t -> a t^2/2 + shift, conjugate s -> s^2/(2a) - shift."""
    if not (a > 0) or not math.isfinite(a):
        raise ValueError(f"curvature must be a positive finite number, got a={a}")
    a = float(a)
    shift = float(shift)
    return LegendreFunction(
        dom=_REALS,
        conj_dom=_REALS,
        value=lambda t: 0.5 * a * t * t + shift,
        deriv=lambda t: a * t,
        conj_value=lambda s: s * s / (2.0 * a) - shift,
        conj_deriv=lambda s: s / a,
        conj_deriv2=lambda s: 1.0 / a,
        label=f"quadratic(a={a:g}, shift={shift:g})",
        spec={"kind": "quadratic", "a": a, "shift": shift},
    )


#: the unit half-square used for purely quadratic constraint rows
UNIT_HALF_SQUARE = quadratic_legendre(1.0, 0.0)


@dataclass(frozen=True)
class ValidationReport:
    passed: bool
    max_fenchel_young: float
    max_inverse_residual: float
    samples: int

    def __str__(self) -> str:
        tag = "pass" if self.passed else "FAIL"
        return (
            f"legendre validation {tag}: fenchel-young={self.max_fenchel_young:.3e} "
            f"inverse-residual={self.max_inverse_residual:.3e} over {self.samples} samples"
        )


def validate_legendre(V: LegendreFunction, samples: int = 100, seed: int = 0) -> ValidationReport:
    """Check the conjugate pairing of V on a seeded interior sample.

    Passing requires both the Fenchel-Young equality residual
    V(t) + V*(V'(t)) - t V'(t) and the inversion residual (V*)'(V'(t)) - t
    to stay below 1e-9 in relative terms.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if not V.dom.has_interior:
        raise InvalidLegendreError(f"domain of {V.label or 'V'} has empty interior")
    grid = V.dom.interior_grid(samples)
    rng = np.random.default_rng(seed)
    if samples > 1:
        step = grid[1] - grid[0]
        jitter = rng.uniform(-0.25, 0.25, size=samples) * step
        pts = np.clip(grid + jitter, grid[0], grid[-1])
    else:
        pts = grid

    max_fy = 0.0
    max_inv = 0.0
    for t in pts:
        t = float(t)
        s = float(V.deriv(t))
        if not V.conj_dom.contains(s):
            return ValidationReport(False, math.inf, math.inf, samples)
        prod = t * s
        fy = abs(float(V.value(t)) + float(V.conj_value(s)) - prod) / (1.0 + abs(prod))
        inv = abs(float(V.conj_deriv(s)) - t) / (1.0 + abs(t))
        max_fy = max(max_fy, fy)
        max_inv = max(max_inv, inv)
    passed = max_fy <= 1e-9 and max_inv <= 1e-9
    return ValidationReport(passed, max_fy, max_inv, samples)


# ---------------------------------------------------------------------------
# plug-in registry: problem files may refer to named functions

_REGISTRY: dict[str, LegendreFunction] = {}


def register_legendre(name: str, V: LegendreFunction) -> LegendreFunction:
    if V.spec is None:
        V = LegendreFunction(
            dom=V.dom, conj_dom=V.conj_dom, value=V.value, deriv=V.deriv,
            conj_value=V.conj_value, conj_deriv=V.conj_deriv,
            conj_deriv2=V.conj_deriv2, label=V.label or name,
            spec={"kind": "plugin", "name": name},
        )
    _REGISTRY[name] = V
    return V


def resolve_legendre(name: str) -> LegendreFunction:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise InvalidLegendreError(f"no registered legendre function named {name!r}") from None


def legendre_from_spec(spec: dict) -> LegendreFunction:
    """Build a LegendreFunction from its serialized form."""
    kind = spec.get("kind")
    if kind == "quadratic":
        return quadratic_legendre(float(spec.get("a", 1.0)), float(spec.get("shift", 0.0)))
    if kind == "plugin":
        return resolve_legendre(str(spec["name"]))
    raise InvalidLegendreError(f"unknown legendre spec kind: {kind!r}")


def legendre_to_spec(V: LegendreFunction) -> dict:
    if V.spec is None:
        raise InvalidLegendreError(
            f"legendre function {V.label or '<anonymous>'} has no serializable form; "
            "register it to obtain one"
        )
    return dict(V.spec)
