"""Classical and extended Lagrangians with first-order derivatives.

The extended Lagrangian replaces each composite V_k(inner_k(x)) by
s_k inner_k(x) - V_k*(s_k), which makes it quadratic in x for fixed
multipliers: value = <x, G x>/2 - <F, x> + E - sum_k lam_k V_k*(s_k) with
(G, F, E) linear in the multipliers.  The multiplier of the objective row
is the constant 1 and is never stored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .problem import DomainExit, Problem


@dataclass(frozen=True)
class PrimalDualPoint:
    """(x, lam, sigma) with lam of length m and sigma of length m+1."""

    x: np.ndarray
    lam: np.ndarray
    sigma: np.ndarray

    @classmethod
    def of(cls, x, lam, sigma) -> "PrimalDualPoint":
        x = np.atleast_1d(np.asarray(x, dtype=float))
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
        for a in (x, lam, sigma):
            a.setflags(write=False)
        return cls(x, lam, sigma)

    def multiplier(self, j: int) -> float:
        """lam_j for j in 1..m (the objective multiplier is the constant 1)."""
        return float(self.lam[j - 1])

    @property
    def lam_full(self) -> np.ndarray:
        return np.concatenate(([1.0], self.lam))

    def nonzero_multipliers(self) -> frozenset[int]:
        """Indices j in 1..m with lam_j != 0 (exact test; snap beforehand)."""
        return frozenset(j for j in range(1, len(self.lam) + 1) if self.lam[j - 1] != 0.0)


@dataclass(frozen=True)
class AssembledQuadratic:
    """G, F, E of the multiplier-weighted quadratic part."""

    G: np.ndarray
    F: np.ndarray
    E: float


def assemble(problem: Problem, lam: np.ndarray, sigma: np.ndarray) -> AssembledQuadratic:
    lam_full = np.concatenate(([1.0], np.asarray(lam, dtype=float)))
    sigma = np.asarray(sigma, dtype=float)
    G = np.zeros((problem.n, problem.n))
    F = np.zeros(problem.n)
    E = 0.0
    for k, term in enumerate(problem.terms):
        w = lam_full[k]
        if w == 0.0:
            continue
        G += w * (term.q.A + sigma[k] * term.inner.A)
        F += w * (term.q.b + sigma[k] * term.inner.b)
        E += w * (term.q.c + sigma[k] * term.inner.c)
    for a in (G, F):
        a.setflags(write=False)
    return AssembledQuadratic(G, F, E)


def _check_sigma_domains(problem: Problem, sigma: np.ndarray) -> None:
    for k, term in enumerate(problem.terms):
        if not term.V.conj_dom.contains(float(sigma[k])):
            raise DomainExit(k, float(sigma[k]))


def _sigma_all_interior(problem: Problem, sigma: np.ndarray) -> bool:
    return all(term.V.conj_dom.interior_contains(float(sigma[k]))
               for k, term in enumerate(problem.terms))


def extended_lagrangian(problem: Problem, p: PrimalDualPoint) -> float:
    """Value of the extended Lagrangian at (x, lam, sigma)."""
    _check_sigma_domains(problem, p.sigma)
    asm = assemble(problem, p.lam, p.sigma)
    conj = sum(p.lam_full[k] * float(term.V.conj_value(float(p.sigma[k])))
               for k, term in enumerate(problem.terms))
    return 0.5 * float(p.x @ asm.G @ p.x) - float(asm.F @ p.x) + asm.E - conj


@dataclass(frozen=True)
class XiGradients:
    x: np.ndarray
    lam: np.ndarray
    sigma: np.ndarray | None   # None when some sigma_k sits on the boundary of dom V_k*


def extended_lagrangian_gradients(problem: Problem, p: PrimalDualPoint) -> XiGradients:
    """All three first-order blocks; the sigma block needs interior sigma."""
    _check_sigma_domains(problem, p.sigma)
    asm = assemble(problem, p.lam, p.sigma)
    gx = asm.G @ p.x - asm.F

    glam = np.empty(problem.m)
    for j in range(1, problem.m + 1):
        term = problem.terms[j]
        sj = float(p.sigma[j])
        glam[j - 1] = (term.q.value(p.x) + sj * term.inner.value(p.x)
                       - float(term.V.conj_value(sj)))

    if _sigma_all_interior(problem, p.sigma):
        lam_full = p.lam_full
        gsig = np.empty(problem.m + 1)
        for k, term in enumerate(problem.terms):
            gsig[k] = lam_full[k] * (term.inner.value(p.x)
                                     - float(term.V.conj_deriv(float(p.sigma[k]))))
        gsig.setflags(write=False)
    else:
        gsig = None
    gx.setflags(write=False)
    glam.setflags(write=False)
    return XiGradients(gx, glam, gsig)


@dataclass(frozen=True)
class LagrangianEval:
    value: float
    grad_x: np.ndarray | None   # None outside the open set where every V_k' exists
    grad_lam: np.ndarray


def lagrangian(problem: Problem, x: np.ndarray, lam: np.ndarray) -> LagrangianEval:
    """L(x, lam) = sum_k lam_k g_k(x) with lam_0 = 1, plus its gradients."""
    x = np.asarray(x, dtype=float)
    lam_full = np.concatenate(([1.0], np.asarray(lam, dtype=float)))
    gvals = np.array([problem.constraint_value(k, x) for k in range(problem.m + 1)])
    value = float(lam_full @ gvals)
    grad_lam = gvals[1:].copy()

    grad_x: np.ndarray | None = np.zeros(problem.n)
    for k, term in enumerate(problem.terms):
        t = term.inner.value(x)
        if not term.V.dom.interior_contains(t) and not term.is_quadratic:
            grad_x = None
            break
        slope = 0.0 if term.is_quadratic else float(term.V.deriv(t))
        grad_x = grad_x + lam_full[k] * (term.q.gradient(x) + slope * term.inner.gradient(x))
    if grad_x is not None:
        grad_x.setflags(write=False)
    grad_lam.setflags(write=False)
    return LagrangianEval(value, grad_x, grad_lam)


@dataclass(frozen=True)
class RelationReport:
    """How L and the extended Lagrangian relate at one point.

    `conjugate_pairing_ok[k]` records whether sigma_k = V_k'(inner_k(x)) with
    both sides interior, for the rows where a nonzero multiplier makes that
    pairing necessary for L to equal the extended value.
    """

    conjugate_pairing_ok: dict[int, bool]
    value_gap: float
    grad_x_gap: float | None
    lambda_slack: np.ndarray            # dL/dlam_j - dXi/dlam_j, each >= 0 up to tol
    slack_nonnegative: bool
    slack_zero_on_expected: bool        # zero for j with lam_j != 0 or j quadratic
    values_match: bool | None           # None when the pairing precondition fails
    passed: bool


def compare_lagrangians(problem: Problem, p: PrimalDualPoint,
                        tol: float = 1e-9) -> RelationReport:
    xi = extended_lagrangian(problem, p)
    grads = extended_lagrangian_gradients(problem, p)
    lag = lagrangian(problem, p.x, p.lam)

    pairing: dict[int, bool] = {}
    relevant = ({0} | p.nonzero_multipliers()) - problem.Q
    for k in sorted(relevant):
        term = problem.terms[k]
        t = term.inner.value(p.x)
        sk = float(p.sigma[k])
        ok = (term.V.dom.interior_contains(t)
              and term.V.conj_dom.interior_contains(sk)
              and abs(sk - float(term.V.deriv(t))) <= tol * (1.0 + abs(sk)))
        pairing[k] = ok

    value_gap = abs(lag.value - xi)
    grad_x_gap = (float(np.linalg.norm(lag.grad_x - grads.x))
                  if lag.grad_x is not None else None)
    slack = lag.grad_lam - grads.lam
    slack_nonneg = bool(np.all(slack >= -tol))
    expected_zero = sorted(p.nonzero_multipliers() | problem.Q0)
    slack_zero = all(abs(slack[j - 1]) <= max(tol, 1e-10) * (1.0 + abs(lag.grad_lam[j - 1]))
                     for j in expected_zero)

    sigma_q_zero = all(p.sigma[k] == 0.0 for k in problem.Q)
    applicable = sigma_q_zero and all(pairing.values())
    values_match: bool | None = None
    if applicable:
        scale = 1.0 + abs(lag.value)
        values_match = value_gap <= tol * scale and (
            grad_x_gap is None or grad_x_gap <= tol * scale)
    passed = slack_nonneg and slack_zero and (values_match is not False)
    slack.setflags(write=False)
    return RelationReport(pairing, value_gap, grad_x_gap, slack,
                          slack_nonneg, slack_zero, values_match, passed)
