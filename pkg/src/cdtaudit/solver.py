"""Stationary-point search and corrected global-optimality certificates.

Candidates are found by enumerating active sets over the inequality indices:
inside a branch the inactive multipliers are pinned to zero, the remaining
multiplier equations are enforced as equalities, and the square residual
system (primal gradient; multiplier equations; sigma pairing equations) is
polished by damped Newton from seeded multistarts.  Certificates follow the
corrected hypotheses: a stationarity-plus-sign point whose non-quadratic
constraint multipliers are strictly positive and whose G is positive
(semi)definite solves the relaxation in which only the quadratic equality
constraints keep their equality status.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .dual import (
    DualPoint,
    MembershipVerdict,
    classify_membership,
    dual_gradients,
    dual_value,
    make_dual_point,
    normalize_sigma,
)
from .lagrangians import (
    PrimalDualPoint,
    assemble,
    extended_lagrangian,
    extended_lagrangian_gradients,
    lagrangian,
)
from .problem import DomainExit, Problem, check_feasibility

#: hard cap on the active-set enumeration
ENUMERATION_GUARD = 4096


class EnumerationGuardError(ValueError):
    """2^m exceeds the active-set enumeration budget."""


@dataclass(frozen=True)
class SolveConfig:
    seed: int = 0
    multistarts: int = 64
    newton_iters: int = 100
    tol: float = 1e-10              # Newton residual target (max-norm)
    box: tuple[float, float] = (-10.0, 10.0)
    snap_tol: float = 1e-10         # |lam_j| at or below this snaps to zero
    dedup_tol: float = 1e-6
    classify_tol: float = 1e-8
    feas_tol: float = 1e-8


class Verdict(enum.Enum):
    UNIQUE_GLOBAL_MIN = "UNIQUE_GLOBAL_MIN"
    GLOBAL_MIN = "GLOBAL_MIN"
    NO_CERTIFICATE = "NO_CERTIFICATE"


@dataclass(frozen=True)
class CriticalPoint:
    point: PrimalDualPoint
    J: frozenset[int]
    residual_x: float
    residual_sigma: float
    complementarity: float
    grad_lam: np.ndarray
    is_critical: bool
    is_KKT: bool
    is_J_LKKT: bool
    L_is_critical: bool
    membership: MembershipVerdict
    feasible: bool
    objective: float | None          # f(x), None when x is outside X
    classify_ok: bool = True
    note: str = ""

    @property
    def residual_total(self) -> float:
        return self.residual_x + self.residual_sigma + self.complementarity


@dataclass(frozen=True)
class Certificate:
    verdict: Verdict
    solved_problem: frozenset[int]           # equality indices of the certified problem
    active_equalities: frozenset[int]        # where the point is known to sit (J union Q0^c)
    failed_hypotheses: tuple[str, ...]
    wrongly_accepted_by: tuple[str, ...]
    value: float | None

    def summary(self) -> str:
        if self.verdict is Verdict.NO_CERTIFICATE:
            return "NO_CERTIFICATE (" + "; ".join(self.failed_hypotheses) + ")"
        eq = ",".join(str(j) for j in sorted(self.solved_problem)) or "-"
        return f"{self.verdict.value} for equality set {{{eq}}}"


# ---------------------------------------------------------------------------
# classification

def classify_point(problem: Problem, J, p: PrimalDualPoint,
                   tol: float = 1e-8) -> CriticalPoint:
    """Residuals, stationarity flags, memberships, and feasibility for a point."""
    J = frozenset(J)
    try:
        grads = extended_lagrangian_gradients(problem, p)
    except DomainExit as exc:
        dp = make_dual_point(problem, p.lam, p.sigma)
        return CriticalPoint(
            point=p, J=J, residual_x=math.inf, residual_sigma=math.inf,
            complementarity=math.inf, grad_lam=np.full(problem.m, math.nan),
            is_critical=False, is_KKT=False, is_J_LKKT=False, L_is_critical=False,
            membership=classify_membership(problem, dp, J), feasible=False,
            objective=None, classify_ok=False, note=str(exc))

    r_x = float(np.linalg.norm(grads.x))
    r_sigma = float(np.linalg.norm(grads.sigma)) if grads.sigma is not None else math.inf
    comp = float(abs(p.lam @ grads.lam))
    stationary = r_x <= tol and r_sigma <= tol

    is_critical = stationary and bool(np.all(np.abs(grads.lam) <= tol))
    kkt_signs = bool(np.all(p.lam >= -tol)) and bool(np.all(grads.lam <= tol)) \
        and bool(np.all(np.abs(p.lam * grads.lam) <= tol))
    is_kkt = stationary and kkt_signs

    lkkt = stationary
    for j in range(1, problem.m + 1):
        gj = grads.lam[j - 1]
        if j in J:
            lkkt = lkkt and abs(gj) <= tol
        else:
            lj = p.lam[j - 1]
            lkkt = lkkt and lj >= -tol and gj <= tol and abs(lj * gj) <= tol

    try:
        lag = lagrangian(problem, p.x, p.lam)
        l_critical = (lag.grad_x is not None
                      and float(np.linalg.norm(lag.grad_x)) <= tol
                      and float(np.linalg.norm(lag.grad_lam)) <= tol)
    except DomainExit:
        l_critical = False

    dp = make_dual_point(problem, p.lam, p.sigma)
    feas = check_feasibility(problem, p.x, tol=max(tol, 1e-8), J=J)
    try:
        objective = problem.objective_value(p.x)
    except DomainExit:
        objective = None
    return CriticalPoint(
        point=p, J=J, residual_x=r_x, residual_sigma=r_sigma, complementarity=comp,
        grad_lam=grads.lam, is_critical=is_critical, is_KKT=is_kkt, is_J_LKKT=lkkt,
        L_is_critical=l_critical, membership=classify_membership(problem, dp, J),
        feasible=feas.feasible, objective=objective)


# ---------------------------------------------------------------------------
# certification

_GRS09 = "Gao-Ruan-Sherali 2009 Th.2"
_LG16_T1 = "Latorre-Gao 2016 Th.1"
_LG16_T2 = "Latorre-Gao 2016 Th.2"
_RG17_T3 = "Ruan-Gao 2017 Th.3"


def _refuted_patterns(problem: Problem, cp: CriticalPoint) -> tuple[str, ...]:
    """Published acceptance patterns that would fire at this point."""
    fired: list[str] = []
    mv = cp.membership
    lam_nonneg = bool(np.all(cp.point.lam >= 0.0))
    if cp.is_critical and lam_nonneg and mv.G_psd:
        fired.append(_GRS09)
    if cp.is_critical and lam_nonneg and not cp.feasible:
        fired.append(_LG16_T1)
    if cp.is_critical and lam_nonneg and mv.hist_latorre_gao:
        fired.append(_LG16_T2)
    if cp.is_KKT and not cp.feasible:
        fired.append(_RG17_T3)
    return tuple(fired)


def certify_global(problem: Problem, J, cp: CriticalPoint,
                   lam_strict: float = 1e-10, feas_tol: float = 1e-8) -> Certificate:
    """Corrected certificate: strict multipliers on non-quadratic constraints,
    sign-stationarity for J, and a positive (semi)definite G."""
    J = frozenset(J)
    if J != cp.J:
        cp = classify_point(problem, J, cp.point)
    failed: list[str] = []
    mv = cp.membership
    if not cp.classify_ok:
        failed.append(f"point not classifiable ({cp.note})")
    if not cp.is_J_LKKT:
        failed.append("not a J-LKKT point of the extended Lagrangian")
    if not mv.sigma_Q_zero:
        failed.append("sigma not normalized to zero on the quadratic rows")
    for j in sorted(problem.Q0c):
        lj = cp.point.lam[j - 1]
        if lj <= 0.0:
            failed.append(f"lambda_{j} = {lj:.6g} but must be > 0 (non-quadratic constraint)")
        elif lj <= lam_strict:
            failed.append(f"lambda_{j} positivity indeterminate ({lj:.3e} <= {lam_strict:.0e})")
    if not mv.G_psd:
        failed.append(f"G not positive semidefinite (min eig {mv.eig_min:.6g})")

    active_eq = J | problem.Q0c
    solved = J & problem.Q
    value = cp.objective
    if not failed:
        feas = check_feasibility(problem, cp.point.x, tol=feas_tol, J=active_eq)
        if not feas.feasible:
            failed.append("x infeasible for the certified constraint pattern (numerical)")

    if failed:
        return Certificate(Verdict.NO_CERTIFICATE, solved, active_eq, tuple(failed),
                           _refuted_patterns(problem, cp), value)
    verdict = Verdict.UNIQUE_GLOBAL_MIN if mv.G_pd else Verdict.GLOBAL_MIN
    return Certificate(verdict, solved, active_eq, (), (), value)


@dataclass(frozen=True)
class PerfectDualityReport:
    applicable: bool
    value_primal: float | None
    value_extended: float | None
    value_dual: float | None
    max_gap: float
    passed: bool
    reason: str = ""


def perfect_duality_check(problem: Problem, cp: CriticalPoint,
                          tol: float = 1e-8) -> PerfectDualityReport:
    """Triple equality f(x) = extended value = dual value at stationary points.

    Applies whenever the primal gradient, the objective-row sigma equation,
    and the multiplier complementarity all vanish; feasibility of x is not
    required.
    """
    p = cp.point
    try:
        grads = extended_lagrangian_gradients(problem, p)
    except DomainExit as exc:
        return PerfectDualityReport(False, None, None, None, math.inf, False, str(exc))
    if grads.sigma is None:
        return PerfectDualityReport(False, None, None, None, math.inf, False,
                                    "sigma on conjugate-domain boundary")
    pre = (float(np.linalg.norm(grads.x)) <= tol
           and abs(float(grads.sigma[0])) <= tol
           and abs(float(p.lam @ grads.lam)) <= tol)
    if not pre:
        return PerfectDualityReport(False, None, None, None, math.inf, False,
                                    "point is not stationary enough for the check")
    try:
        f_val = problem.objective_value(p.x)
    except DomainExit as exc:
        return PerfectDualityReport(False, None, None, None, math.inf, False, str(exc))
    xi_val = extended_lagrangian(problem, p)
    dp = make_dual_point(problem, p.lam, p.sigma)
    d_val = dual_value(problem, dp)
    gap = max(abs(f_val - xi_val), abs(xi_val - d_val), abs(f_val - d_val))
    passed = gap <= tol * (1.0 + abs(f_val))
    return PerfectDualityReport(True, f_val, xi_val, d_val, gap, passed)


# ---------------------------------------------------------------------------
# Newton search over active-set branches

def _branch_system(problem: Problem, J: frozenset[int], inactive: frozenset[int]):
    """Residual and Jacobian for one active-set branch.

    Unknowns: x, the multipliers outside `inactive`, and the sigma entries of
    non-quadratic rows outside `inactive`.  Pinned: lam_j = 0 on `inactive`,
    sigma_k = 0 on quadratic rows.
    """
    n, m = problem.n, problem.m
    free_lam = [j for j in range(1, m + 1) if j not in inactive]
    free_sig = [k for k in range(m + 1) if k not in problem.Q and k not in inactive]
    dim = n + len(free_lam) + len(free_sig)
    sig_pos = {k: i for i, k in enumerate(free_sig)}

    def unpack(u):
        x = u[:n]
        lam = np.zeros(m)
        for i, j in enumerate(free_lam):
            lam[j - 1] = u[n + i]
        sigma = np.zeros(m + 1)
        for i, k in enumerate(free_sig):
            sigma[k] = u[n + len(free_lam) + i]
        return x, lam, sigma

    def residual(u):
        x, lam, sigma = unpack(u)
        for k in free_sig:
            if not problem.terms[k].V.conj_dom.contains(float(sigma[k])):
                return None
        asm = assemble(problem, lam, sigma)
        r = np.empty(dim)
        r[:n] = asm.G @ x - asm.F
        lam_full = np.concatenate(([1.0], lam))
        for i, j in enumerate(free_lam):
            term = problem.terms[j]
            sj = float(sigma[j])
            r[n + i] = (term.q.value(x) + sj * term.inner.value(x)
                        - float(term.V.conj_value(sj)))
        for i, k in enumerate(free_sig):
            term = problem.terms[k]
            r[n + len(free_lam) + i] = lam_full[k] * (
                term.inner.value(x) - float(term.V.conj_deriv(float(sigma[k]))))
        return r

    def jacobian(u):
        x, lam, sigma = unpack(u)
        asm = assemble(problem, lam, sigma)
        lam_full = np.concatenate(([1.0], lam))
        Jm = np.zeros((dim, dim))
        off_l = n
        off_s = n + len(free_lam)
        Jm[:n, :n] = asm.G
        for i, j in enumerate(free_lam):
            term = problem.terms[j]
            sj = float(sigma[j])
            Jm[:n, off_l + i] = (term.q.A + sj * term.inner.A) @ x - (term.q.b + sj * term.inner.b)
        for i, k in enumerate(free_sig):
            term = problem.terms[k]
            Jm[:n, off_s + i] = lam_full[k] * term.inner.gradient(x)
        for i, j in enumerate(free_lam):
            term = problem.terms[j]
            sj = float(sigma[j])
            Jm[off_l + i, :n] = term.q.gradient(x) + sj * term.inner.gradient(x)
            if j in sig_pos:
                Jm[off_l + i, off_s + sig_pos[j]] = (
                    term.inner.value(x) - float(term.V.conj_deriv(sj)))
        for i, k in enumerate(free_sig):
            term = problem.terms[k]
            sk = float(sigma[k])
            pairing = term.inner.value(x) - float(term.V.conj_deriv(sk))
            Jm[off_s + i, :n] = lam_full[k] * term.inner.gradient(x)
            if k >= 1 and k in set(free_lam):
                Jm[off_s + i, off_l + free_lam.index(k)] = pairing
            if term.V.conj_deriv2 is not None:
                d2 = float(term.V.conj_deriv2(sk))
            else:
                h = 1e-6 * (1.0 + abs(sk))
                d2 = (float(term.V.conj_deriv(sk + h))
                      - float(term.V.conj_deriv(sk - h))) / (2.0 * h)
            Jm[off_s + i, off_s + i] = -lam_full[k] * d2
        return Jm

    return dim, unpack, residual, jacobian


def _deflation_factor(u, known_roots):
    """Scalar deflation weight and the gradient of its logarithm.

    Multiplying the residual by prod (1/||u - r||^2 + 1) repels Newton from
    already-found roots while leaving the far field unchanged.
    """
    M = 1.0
    glog = np.zeros_like(u)
    for root in known_roots:
        d = u - root
        n2 = float(d @ d)
        if n2 < 1e-20:
            return None, None
        m = 1.0 / n2 + 1.0
        M *= m
        glog += (-2.0 / (n2 * n2)) * d / m
    return M, glog


def _damped_newton(residual, jacobian, u0, iters, tol, deflation=()):
    """Backtracking Newton on the (optionally deflated) residual system.

    Convergence is judged on the undeflated residual; the line search uses
    the deflated norm so known roots act as barriers.
    """
    u = np.asarray(u0, dtype=float)
    r = residual(u)
    if r is None:
        return None
    M, glog = _deflation_factor(u, deflation)
    if M is None:
        return None
    norm = M * float(np.linalg.norm(r))
    for _ in range(iters):
        if float(np.max(np.abs(r))) <= tol:
            return u
        Jm = jacobian(u)
        if deflation:
            # scalar deflation: deflated Jacobian is M (J + r glog^T), M cancels
            Jm = Jm + np.outer(r, glog)
        try:
            step = np.linalg.solve(Jm, -r)
        except np.linalg.LinAlgError:
            step, *_ = np.linalg.lstsq(Jm, -r, rcond=None)
        if not np.all(np.isfinite(step)):
            return None
        alpha = 1.0
        accepted = False
        while alpha >= 2.0 ** -30:
            cand = u + alpha * step
            rc = residual(cand)
            if rc is not None:
                Mc, glogc = _deflation_factor(cand, deflation)
                if Mc is not None:
                    nc = Mc * float(np.linalg.norm(rc))
                    if nc <= (1.0 - 1e-4 * alpha) * norm or float(np.max(np.abs(rc))) < tol:
                        u, r, norm, M, glog = cand, rc, nc, Mc, glogc
                        accepted = True
                        break
            alpha *= 0.5
        if not accepted:
            return None
    return u if float(np.max(np.abs(r))) <= tol else None


def _complete_point(problem: Problem, J, x, lam, sigma, inactive, snap_tol):
    """Fill free sigmas of inactive non-quadratic rows, snap, normalize."""
    sigma = np.array(sigma, dtype=float)
    for k in sorted(inactive - problem.Q):
        t = problem.terms[k].inner.value(x)
        if problem.terms[k].V.dom.interior_contains(t):
            sigma[k] = float(problem.terms[k].V.deriv(t))
    lam = np.where(np.abs(lam) <= snap_tol, 0.0, lam)
    sigma = normalize_sigma(problem, sigma)
    return PrimalDualPoint.of(x, lam, sigma)


def find_critical_points(problem: Problem, J=None,
                         config: SolveConfig = SolveConfig()) -> list[CriticalPoint]:
    """All stationary or sign-stationary points reachable from the multistarts.

    Returns classified points that are critical or J-LKKT; an empty list
    means no start converged anywhere (not an error).  Deterministic for a
    fixed config.
    """
    J = problem.J if J is None else frozenset(J)
    if 2 ** problem.m > ENUMERATION_GUARD:
        raise EnumerationGuardError(
            f"2^m = {2 ** problem.m} active-set branches exceed the {ENUMERATION_GUARD} guard")
    inequality = sorted(frozenset(range(1, problem.m + 1)) - J)

    raw: list[PrimalDualPoint] = []
    branch_list = []
    for size in range(len(inequality) + 1):
        branch_list.extend(frozenset(c) for c in itertools.combinations(inequality, size))
    lo, hi = config.box
    for branch_idx, inactive in enumerate(branch_list):
        dim, unpack, residual, jacobian = _branch_system(problem, J, inactive)
        rng = np.random.default_rng([config.seed, branch_idx])
        starts = rng.uniform(lo, hi, size=(config.multistarts, dim))
        branch_roots: list[np.ndarray] = []
        for u0 in starts:
            # incremental deflation: each start is repelled from roots already found
            u = _damped_newton(residual, jacobian, u0, config.newton_iters,
                               config.tol, deflation=branch_roots)
            if u is None:
                continue
            if any(float(np.linalg.norm(u - r)) < config.dedup_tol for r in branch_roots):
                continue
            branch_roots.append(u)
            x, lam, sigma = unpack(u)
            raw.append(_complete_point(problem, J, x, lam, sigma, inactive,
                                       config.snap_tol))

    classified = []
    for p in raw:
        cp = classify_point(problem, J, p, tol=config.classify_tol)
        if not cp.classify_ok:
            continue
        if cp.residual_total > config.classify_tol:
            continue
        if cp.is_critical or cp.is_J_LKKT:
            classified.append(cp)

    def key(cp: CriticalPoint):
        vec = np.concatenate([cp.point.x, cp.point.lam, cp.point.sigma])
        return tuple(round(float(v), 9) for v in vec)

    classified.sort(key=key)
    kept: list[CriticalPoint] = []
    for cp in classified:
        vec = np.concatenate([cp.point.x, cp.point.lam, cp.point.sigma])
        dup = any(np.linalg.norm(vec - np.concatenate(
            [q.point.x, q.point.lam, q.point.sigma])) < config.dedup_tol for q in kept)
        if not dup:
            kept.append(cp)
    return kept


def dual_side_lkkt(problem: Problem, J, dp: DualPoint, tol: float = 1e-8) -> bool:
    """J-LKKT test computed purely on the dual side (stationary sigma,
    sign/complementarity on the multiplier gradient)."""
    J = frozenset(J)
    glam, gsig = dual_gradients(problem, dp)
    ok = float(np.linalg.norm(gsig)) <= tol
    for j in range(1, problem.m + 1):
        if j in J:
            ok = ok and abs(glam[j - 1]) <= tol
        else:
            lj = dp.lam[j - 1]
            ok = ok and lj >= -tol and glam[j - 1] <= tol and abs(lj * glam[j - 1]) <= tol
    return ok
