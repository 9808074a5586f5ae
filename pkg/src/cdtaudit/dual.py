"""Dual function, dual gradients, and membership in the dual feasibility sets.

A dual point fixes the multipliers (lam, sigma); the induced quadratic has
matrix G and linear part F.  Where G is invertible the stationary primal
point is x = G^{-1} F and the dual value is the extended Lagrangian there.
Where G is singular but F stays in its range, the minimum-norm solution is
used and flagged.  Membership covers the corrected sets (nonsingular /
range-compatible, with sign conditions) and the historical sets used by the
published theorems this package audits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .lagrangians import AssembledQuadratic, PrimalDualPoint, assemble
from .problem import DomainExit, Problem

#: relative singular-value cutoff below which G counts as singular
RANK_RTOL = 1e-12
#: relative residual above which F is declared outside the range of G
RANGE_RTOL = 1e-8
#: eigenvalue tolerances: psd needs min eig >= -PSD_TOL, pd needs >= +PSD_TOL
PSD_TOL = 1e-10


class NotInRangeError(ValueError):
    """F is not in the range of G; the dual value is undefined here."""


class UndefinedGradientError(ValueError):
    """Dual gradients need an invertible G and interior sigma."""


def normalize_sigma(problem: Problem, sigma: np.ndarray) -> np.ndarray:
    """Zero the sigma entries of purely quadratic rows; idempotent."""
    out = np.array(sigma, dtype=float)
    for k in problem.Q:
        out[k] = 0.0
    out.setflags(write=False)
    return out


def normalize_point(problem: Problem, p: PrimalDualPoint) -> PrimalDualPoint:
    return PrimalDualPoint.of(p.x, p.lam, normalize_sigma(problem, p.sigma))


@dataclass(frozen=True)
class DualPoint:
    """Multipliers plus cached linear algebra for the induced quadratic."""

    lam: np.ndarray
    sigma: np.ndarray
    assembled: AssembledQuadratic
    eig_min: float
    eig_max: float
    singular: bool
    primal: np.ndarray          # solution of G x = F (minimum-norm when singular)
    solve_residual: float       # ||G x - F||
    used_min_norm: bool

    @property
    def in_T(self) -> bool:
        return not self.singular

    @property
    def in_T_col(self) -> bool:
        scale = 1.0 + float(np.linalg.norm(self.assembled.F))
        return self.solve_residual <= RANGE_RTOL * scale

    @property
    def G_psd(self) -> bool:
        return self.eig_min >= -PSD_TOL

    @property
    def G_pd(self) -> bool:
        return self.eig_min >= PSD_TOL


def make_dual_point(problem: Problem, lam, sigma) -> DualPoint:
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
    asm = assemble(problem, lam, sigma)
    eigs = np.linalg.eigvalsh(asm.G)
    svals = np.linalg.svd(asm.G, compute_uv=False)
    singular = bool(svals[0] == 0.0 or svals[-1] <= RANK_RTOL * svals[0])
    if singular:
        x, *_ = np.linalg.lstsq(asm.G, asm.F, rcond=RANK_RTOL)
        used_min_norm = True
    else:
        x = np.linalg.solve(asm.G, asm.F)
        used_min_norm = False
    residual = float(np.linalg.norm(asm.G @ x - asm.F))
    for a in (lam, sigma, x):
        a.setflags(write=False)
    return DualPoint(lam, sigma, asm, float(eigs[0]), float(eigs[-1]),
                     singular, x, residual, used_min_norm)


def dual_point_of(problem: Problem, p: PrimalDualPoint) -> DualPoint:
    return make_dual_point(problem, p.lam, p.sigma)


def primal_from_dual(problem: Problem, dp: DualPoint) -> np.ndarray:
    """Stationary primal point of the induced quadratic."""
    if not dp.in_T_col:
        raise NotInRangeError(
            f"F is outside the range of G (residual {dp.solve_residual:.3e})")
    return dp.primal


def _check_sigma(problem: Problem, sigma: np.ndarray) -> None:
    for k, term in enumerate(problem.terms):
        if not term.V.conj_dom.contains(float(sigma[k])):
            raise DomainExit(k, float(sigma[k]))


def dual_value(problem: Problem, dp: DualPoint) -> float:
    """-<F, x>/2 + E - sum_k lam_k V_k*(sigma_k) with G x = F."""
    _check_sigma(problem, dp.sigma)
    x = primal_from_dual(problem, dp)
    lam_full = np.concatenate(([1.0], dp.lam))
    conj = sum(lam_full[k] * float(term.V.conj_value(float(dp.sigma[k])))
               for k, term in enumerate(problem.terms))
    return -0.5 * float(dp.assembled.F @ x) + dp.assembled.E - conj


def dual_gradients(problem: Problem, dp: DualPoint) -> tuple[np.ndarray, np.ndarray]:
    """(d/dlam, d/dsigma) of the dual value; needs invertible G, interior sigma."""
    if not dp.in_T:
        raise UndefinedGradientError("G is singular; dual gradients undefined")
    for k, term in enumerate(problem.terms):
        if not term.V.conj_dom.interior_contains(float(dp.sigma[k])):
            raise UndefinedGradientError(f"sigma[{k}] not interior to dom V_{k}*")
    x = dp.primal
    glam = np.empty(problem.m)
    for j in range(1, problem.m + 1):
        term = problem.terms[j]
        sj = float(dp.sigma[j])
        glam[j - 1] = (term.q.value(x) + sj * term.inner.value(x)
                       - float(term.V.conj_value(sj)))
    lam_full = np.concatenate(([1.0], dp.lam))
    gsig = np.empty(problem.m + 1)
    for k, term in enumerate(problem.terms):
        gsig[k] = lam_full[k] * (term.inner.value(x)
                                 - float(term.V.conj_deriv(float(dp.sigma[k]))))
    glam.setflags(write=False)
    gsig.setflags(write=False)
    return glam, gsig


def in_gamma(problem: Problem, lam: np.ndarray, J: frozenset[int]) -> bool:
    """lam_j >= 0 for every j outside J."""
    return all(lam[j - 1] >= 0.0 for j in range(1, problem.m + 1) if j not in J)


@dataclass(frozen=True)
class MembershipVerdict:
    """Set memberships of a dual point, one flag per set of interest.

    Flags prefixed `hist_` reproduce the dual feasible sets of published
    theorems audited by this package; they exist so a report can show
    exactly which published statement would have accepted the point.
    """

    in_T: bool
    in_T_col: bool
    sigma_Q_zero: bool
    G_psd: bool
    G_pd: bool
    in_Gamma_J: bool
    in_Gamma_JQ: bool
    in_T_Q: bool
    in_T_Q_col: bool
    in_T_Q_plus: bool           # nonsingular, sigma_Q = 0, Gamma_{J cap Q}, G pd
    in_T_Q_col_plus: bool       # range-compatible analogue with G psd
    in_T_plus: bool             # nonsingular, lam >= 0, G pd
    in_T_col_plus: bool
    hist_latorre_gao: bool      # T_plus and J subset of the nonzero multipliers
    hist_ruan_gao: bool         # T_plus and every multiplier nonzero
    hist_morales_gao_Sa: bool   # G pd (blocked form of their S_a^+)
    hist_morales_gao_Sc: bool   # G pd and strictly positive multipliers
    eig_min: float
    solve_residual: float

    def lines(self) -> list[str]:
        def yn(b: bool) -> str:
            return "yes" if b else "no"
        return [
            f"T (G nonsingular)         : {yn(self.in_T)}",
            f"T_col (F in range G)      : {yn(self.in_T_col)}",
            f"sigma zero on Q           : {yn(self.sigma_Q_zero)}",
            f"G psd / pd                : {yn(self.G_psd)} / {yn(self.G_pd)} (min eig {self.eig_min:.6g})",
            f"Gamma_J / Gamma_(J&Q)     : {yn(self.in_Gamma_J)} / {yn(self.in_Gamma_JQ)}",
            f"T_Q / T_Q_col             : {yn(self.in_T_Q)} / {yn(self.in_T_Q_col)}",
            f"T_Q^J+ / T_Q,col^J+       : {yn(self.in_T_Q_plus)} / {yn(self.in_T_Q_col_plus)}",
            f"T+ / T_col+               : {yn(self.in_T_plus)} / {yn(self.in_T_col_plus)}",
            f"S_a+ (Latorre-Gao 2016)   : {yn(self.hist_latorre_gao)}",
            f"S_a+ (Ruan-Gao 2017)      : {yn(self.hist_ruan_gao)}",
            f"S_a+ (Morales-Gao 2017)   : {yn(self.hist_morales_gao_Sa)}",
            f"S_c+ (Morales-Gao 2016)   : {yn(self.hist_morales_gao_Sc)}",
        ]


def classify_membership(problem: Problem, dp: DualPoint,
                        J: frozenset[int] | None = None) -> MembershipVerdict:
    J = problem.J if J is None else frozenset(J)
    JQ = J & problem.Q
    sigma_q_zero = all(dp.sigma[k] == 0.0 for k in problem.Q)
    lam_nonneg = bool(np.all(dp.lam >= 0.0))
    lam_pos = bool(np.all(dp.lam > 0.0))
    nonzero = frozenset(j for j in range(1, problem.m + 1) if dp.lam[j - 1] != 0.0)
    gamma_J = in_gamma(problem, dp.lam, J)
    gamma_JQ = in_gamma(problem, dp.lam, JQ)
    in_T = dp.in_T
    in_T_col = dp.in_T_col
    return MembershipVerdict(
        in_T=in_T,
        in_T_col=in_T_col,
        sigma_Q_zero=sigma_q_zero,
        G_psd=dp.G_psd,
        G_pd=dp.G_pd,
        in_Gamma_J=gamma_J,
        in_Gamma_JQ=gamma_JQ,
        in_T_Q=in_T and sigma_q_zero,
        in_T_Q_col=in_T_col and sigma_q_zero,
        in_T_Q_plus=in_T and sigma_q_zero and gamma_JQ and dp.G_pd,
        in_T_Q_col_plus=in_T_col and sigma_q_zero and gamma_JQ and dp.G_psd,
        in_T_plus=in_T and lam_nonneg and dp.G_pd,
        in_T_col_plus=in_T_col and lam_nonneg and dp.G_psd,
        hist_latorre_gao=in_T and lam_nonneg and dp.G_pd and J <= nonzero,
        hist_ruan_gao=in_T and lam_nonneg and dp.G_pd
        and nonzero == frozenset(range(1, problem.m + 1)),
        hist_morales_gao_Sa=in_T and dp.G_pd,
        hist_morales_gao_Sc=in_T and dp.G_pd and lam_pos,
        eig_min=dp.eig_min,
        solve_residual=dp.solve_residual,
    )


def cholesky_pd(G: np.ndarray) -> bool:
    """Positive definiteness via Cholesky, the cross-check for the eig flag."""
    try:
        scipy.linalg.cholesky(G, lower=True)
        return True
    except scipy.linalg.LinAlgError:
        return False
