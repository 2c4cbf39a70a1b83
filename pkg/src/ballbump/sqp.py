"""Dense sequential quadratic programming.

``solve_nlp`` minimizes a smooth cost under differentiable equality and
two-sided inequality constraints with variable bounds:

    min  f(x)
    s.t. c_eq(x) = 0
         lb <= c_in(x) <= ub
         x_lb <= x <= x_ub

Each major iteration solves a QP subproblem (damped-BFGS model of the
Lagrangian, linearized constraints) with the interior-point solver from
:mod:`ballbump.qp`, then line-searches an l1 exact-penalty merit function.
Constraint Jacobians are supplied analytically by the caller; finite
differences live here only as a test oracle.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .qp import INF, QpOptions, QpProblem, SolveStatus, solve_qp_full


@dataclass
class ConstraintBlock:
    """A vector constraint with its analytic Jacobian.

    ``kind`` is "eq" (fun(x) = 0) or "ineq" (lb <= fun(x) <= ub).
    """

    fun: Callable[[np.ndarray], np.ndarray]
    jac: Callable[[np.ndarray], np.ndarray]
    kind: str = "eq"
    lb: np.ndarray = None
    ub: np.ndarray = None
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("eq", "ineq"):
            raise ValueError(f"constraint kind must be 'eq' or 'ineq', got {self.kind!r}")
        if self.kind == "ineq" and (self.lb is None or self.ub is None):
            raise ValueError(f"inequality block {self.name!r} needs lb and ub")


@dataclass
class NlpProblem:
    """A differentiable program: cost with gradient, constraint blocks, bounds."""

    n: int
    cost: Callable[[np.ndarray], float]
    cost_grad: Callable[[np.ndarray], np.ndarray]
    constraints: list
    x_lb: np.ndarray = None
    x_ub: np.ndarray = None

    def __post_init__(self):
        self.x_lb = (np.full(self.n, -INF) if self.x_lb is None
                     else np.asarray(self.x_lb, dtype=float).ravel())
        self.x_ub = (np.full(self.n, INF) if self.x_ub is None
                     else np.asarray(self.x_ub, dtype=float).ravel())
        if self.x_lb.size != self.n or self.x_ub.size != self.n:
            raise ValueError("bound size mismatch with n")


@dataclass
class SqpOptions:
    tol: float = 1e-6
    max_iter: int = 200
    qp_opts: QpOptions = field(default_factory=lambda: QpOptions(tol=1e-8, max_iter=50))
    x_scale: np.ndarray = None      # per-variable scaling (solver works in x/scale)
    cost_scale: float = 1.0         # internal multiplier on f; argmin unchanged
    scale_constraints: bool = False  # downscale rows with large Jacobian norms
    hess_init: np.ndarray = None    # initial Hessian diagonal (scaled space)
    penalty_init: float = 1.0
    armijo: float = 1e-4
    alpha_min: float = 1e-12
    stall_iters: int = 30           # abort after this many non-improving iterations
    log: Optional[Callable[[str], None]] = None


def solve_nlp(nlp: NlpProblem, x0: np.ndarray,
              opts: SqpOptions = None) -> tuple[np.ndarray, SolveStatus]:
    """SQP solve from ``x0`` (clamped into the variable bounds)."""
    opts = opts or SqpOptions()
    t0 = time.perf_counter()
    n = nlp.n

    sx = np.ones(n) if opts.x_scale is None else np.asarray(opts.x_scale, dtype=float)
    if np.any(sx <= 0):
        raise ValueError("x_scale entries must be > 0")
    cs = float(opts.cost_scale)
    x = np.clip(np.asarray(x0, dtype=float).ravel(), nlp.x_lb, nlp.x_ub)
    y = x / sx
    # scaling must not turn infinite bounds into finite ones
    y_lb = np.where(nlp.x_lb <= -INF / 2, -INF, nlp.x_lb / sx)
    y_ub = np.where(nlp.x_ub >= INF / 2, INF, nlp.x_ub / sx)

    eq_blocks = [b for b in nlp.constraints if b.kind == "eq"]
    in_blocks = [b for b in nlp.constraints if b.kind == "ineq"]
    in_lb = (np.concatenate([np.asarray(b.lb, dtype=float).ravel() for b in in_blocks])
             if in_blocks else np.zeros(0))
    in_ub = (np.concatenate([np.asarray(b.ub, dtype=float).ravel() for b in in_blocks])
             if in_blocks else np.zeros(0))

    def eval_all(yv):
        xv = sx * yv
        f = cs * float(nlp.cost(xv))
        g = cs * nlp.cost_grad(xv) * sx
        cE = (np.concatenate([np.asarray(b.fun(xv), dtype=float).ravel() for b in eq_blocks])
              if eq_blocks else np.zeros(0))
        JE = (np.vstack([np.atleast_2d(b.jac(xv)) for b in eq_blocks]) * sx
              if eq_blocks else np.zeros((0, n)))
        cI = (np.concatenate([np.asarray(b.fun(xv), dtype=float).ravel() for b in in_blocks])
              if in_blocks else np.zeros(0))
        JI = (np.vstack([np.atleast_2d(b.jac(xv)) for b in in_blocks]) * sx
              if in_blocks else np.zeros((0, n)))
        return f, g, cE, JE, cI, JI

    f, g, cE, JE, cI, JI = eval_all(y)

    # Optional row scaling keeps badly scaled constraint blocks from
    # dominating the merit function; violations are still reported unscaled.
    if opts.scale_constraints:
        eq_scale = 1.0 / np.maximum(1.0, np.max(np.abs(JE), axis=1)) if cE.size else np.zeros(0)
        in_scale = 1.0 / np.maximum(1.0, np.max(np.abs(JI), axis=1)) if cI.size else np.zeros(0)
    else:
        eq_scale = np.ones(cE.size)
        in_scale = np.ones(cI.size)

    def viol_l1(cEv, cIv):
        v = float(np.sum(np.abs(cEv * eq_scale))) if cEv.size else 0.0
        if cIv.size:
            v += float(np.sum(np.maximum(in_lb - cIv, 0.0) * in_scale))
            v += float(np.sum(np.maximum(cIv - in_ub, 0.0) * in_scale))
        return v

    def viol_inf(cEv, cIv):
        v = float(np.max(np.abs(cEv))) if cEv.size else 0.0
        if cIv.size:
            v = max(v, float(np.max(np.maximum(in_lb - cIv, 0.0))),
                    float(np.max(np.maximum(cIv - in_ub, 0.0))))
        return v

    B = np.eye(n) if opts.hess_init is None else np.diag(np.asarray(opts.hess_init, dtype=float))
    nu = opts.penalty_init
    reason = "max_iterations"
    kkt = np.inf
    viol = viol_inf(cE, cI)
    best_merit = np.inf
    best_score = np.inf
    stall = 0
    it = 0

    for it in range(1, opts.max_iter + 1):
        # infinite sides must stay sentinels, not be scaled into huge finites
        qp_lb = np.where(in_lb <= -INF / 2, -INF, (in_lb - cI) * in_scale)
        qp_ub = np.where(in_ub >= INF / 2, INF, (in_ub - cI) * in_scale)
        qp = QpProblem(
            H=B, c=g,
            A_eq=JE * eq_scale[:, None] if cE.size else None,
            b_eq=-(cE * eq_scale) if cE.size else None,
            A_in=JI * in_scale[:, None] if cI.size else None,
            lb=qp_lb if cI.size else None,
            ub=qp_ub if cI.size else None,
            x_lb=np.where(y_lb <= -INF / 2, -INF, y_lb - y),
            x_ub=np.where(y_ub >= INF / 2, INF, y_ub - y))
        sol = solve_qp_full(qp, opts.qp_opts)
        elastic_resid = 0.0
        if not sol.status.converged and sol.status.reason == "primal_infeasible":
            sol, elastic_resid = _elastic_qp(qp, nu, opts.qp_opts)
            if sol is None:
                reason = "qp_infeasible"
                break
        elif not sol.status.converged and sol.status.constraint_violation > 1e-6:
            sol2, elastic_resid = _elastic_qp(qp, nu, opts.qp_opts)
            if sol2 is not None:
                sol = sol2

        d = sol.x
        lam_eq = sol.y_eq
        z_in = sol.z_rows

        # Exact-penalty weight must dominate the multipliers.
        dual_norm = max(np.max(np.abs(lam_eq)) if lam_eq.size else 0.0,
                        np.max(np.abs(z_in)) if z_in.size else 0.0,
                        np.max(np.abs(sol.z_bounds)) if n else 0.0)
        if nu < 1.2 * dual_norm:
            nu = 2.0 * dual_norm + 1e-3
            best_merit = np.inf  # merit values before a penalty bump are incomparable

        v0 = viol_l1(cE, cI)
        merit0 = f + nu * v0
        ddir = float(g @ d) - nu * (v0 - elastic_resid)

        # Convergence is measured on the true iterate, not the model.
        r_stat = (g - (JE * eq_scale[:, None]).T @ lam_eq
                  - (JI * in_scale[:, None]).T @ z_in - sol.z_bounds)
        kkt = float(np.max(np.abs(r_stat))) / (1.0 + float(np.max(np.abs(g))))
        viol = viol_inf(cE, cI)
        step_norm = float(np.max(np.abs(d))) if n else 0.0
        if viol <= opts.tol and (kkt <= opts.tol or step_norm <= 1e-12):
            reason = ""
            break

        # Armijo backtracking on the l1 merit, with one second-order
        # correction attempt when the full step is blocked by curvature.
        y_old, g_old, JE_old, JI_old = y, g, JE, JI
        alpha, accepted, tried_soc = 1.0, False, False
        while alpha >= opts.alpha_min:
            y_trial = np.clip(y_old + alpha * d, y_lb, y_ub)
            f_t, g_t, cE_t, JE_t, cI_t, JI_t = eval_all(y_trial)
            merit_t = f_t + nu * viol_l1(cE_t, cI_t)
            if merit_t <= merit0 + opts.armijo * alpha * min(ddir, 0.0) + 1e-12 * abs(merit0):
                y, f, g, cE, JE, cI, JI = y_trial, f_t, g_t, cE_t, JE_t, cI_t, JI_t
                accepted = True
                break
            if (alpha == 1.0 and not tried_soc and cE.size
                    and float(np.max(np.abs(cE_t))) > 10.0 * max(viol, opts.tol)):
                tried_soc = True
                dc = _soc_step(JE_old, cE_t)
                if dc is not None:
                    y_soc = np.clip(y_old + d + dc, y_lb, y_ub)
                    f_s, g_s, cE_s, JE_s, cI_s, JI_s = eval_all(y_soc)
                    if f_s + nu * viol_l1(cE_s, cI_s) <= merit0 + opts.armijo * min(ddir, 0.0):
                        y, f, g, cE, JE, cI, JI = y_soc, f_s, g_s, cE_s, JE_s, cI_s, JI_s
                        accepted = True
                        break
            alpha *= 0.5

        if opts.log is not None:
            opts.log(f"iter {it:4d}  merit {merit0: .6e}  step {alpha:.3e}  "
                     f"kkt {kkt:.3e}  viol {viol:.3e}")

        if not accepted:
            reason = "line_search_failure"
            break

        # Progress is either a materially better merit value or a materially
        # better KKT score; only when both flatline is the solve truly stuck.
        merit_now = f + nu * viol_l1(cE, cI)
        score_now = kkt + 10.0 * viol
        improved = (not np.isfinite(best_merit)
                    or merit_now < best_merit - 1e-14 * (1.0 + abs(best_merit)))
        if score_now < 0.97 * best_score:
            best_score = score_now
            improved = True
        if improved:
            best_merit = min(best_merit, merit_now) if np.isfinite(best_merit) else merit_now
            stall = 0
        else:
            stall += 1
            if stall >= opts.stall_iters:
                reason = "stalled"
                break

        # Damped BFGS update with the new multipliers at both endpoints.
        s_step = y - y_old
        JEs, JIs = JE * eq_scale[:, None], JI * in_scale[:, None]
        JEs_old, JIs_old = JE_old * eq_scale[:, None], JI_old * in_scale[:, None]
        gL_new = g - JEs.T @ lam_eq - JIs.T @ z_in
        gL_old = g_old - JEs_old.T @ lam_eq - JIs_old.T @ z_in
        B = _damped_bfgs(B, s_step, gL_new - gL_old)

    # final measures
    viol = viol_inf(cE, cI)
    status = SolveStatus(converged=(reason == ""), iterations=it,
                         kkt_residual=float(kkt), constraint_violation=viol,
                         wall_time=time.perf_counter() - t0, reason=reason)
    return sx * y, status


def _soc_step(JE: np.ndarray, cE_trial: np.ndarray):
    """Least-squares correction pulling the trial point back to the constraints."""
    try:
        dc, *_ = np.linalg.lstsq(JE, -cE_trial, rcond=None)
        return dc
    except np.linalg.LinAlgError:
        return None


def _damped_bfgs(B: np.ndarray, s: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Powell-damped BFGS update; keeps the model positive definite."""
    Bs = B @ s
    sBs = float(s @ Bs)
    if sBs <= 1e-16:
        return B
    sy = float(s @ y)
    if sy < 0.2 * sBs:
        theta = 0.8 * sBs / (sBs - sy)
        y = theta * y + (1.0 - theta) * Bs
        sy = float(s @ y)
    if sy <= 1e-16:
        return B
    B = B - np.outer(Bs, Bs) / sBs + np.outer(y, y) / sy
    return 0.5 * (B + B.T)


def _elastic_qp(qp: QpProblem, nu: float, qp_opts: QpOptions):
    """Retry an infeasible subproblem with l1-relaxed equality rows.

    Returns (solution-with-original-variable-layout, residual of the relaxed
    equalities) or (None, 0.0) when even the relaxation fails.
    """
    n = qp.n
    me = qp.A_eq.shape[0]
    if me == 0:
        return None, 0.0
    rho = 10.0 * max(nu, 1.0)
    n2 = n + 2 * me
    H2 = np.zeros((n2, n2))
    H2[:n, :n] = qp.H
    H2[n:, n:] = np.eye(2 * me) * 1e-8
    c2 = np.concatenate([qp.c, np.full(2 * me, rho)])
    A2 = np.hstack([qp.A_eq, -np.eye(me), np.eye(me)])
    mi = qp.A_in.shape[0]
    Ain2 = np.hstack([qp.A_in, np.zeros((mi, 2 * me))]) if mi else None
    x_lb2 = np.concatenate([qp.x_lb, np.zeros(2 * me)])
    x_ub2 = np.concatenate([qp.x_ub, np.full(2 * me, INF)])
    qp2 = QpProblem(H=H2, c=c2, A_eq=A2, b_eq=qp.b_eq,
                    A_in=Ain2, lb=qp.lb if mi else None, ub=qp.ub if mi else None,
                    x_lb=x_lb2, x_ub=x_ub2)
    sol = solve_qp_full(qp2, qp_opts)
    if not sol.status.converged:
        return None, 0.0
    slack = sol.x[n:]
    resid = float(np.sum(slack))
    sol.x = sol.x[:n]
    sol.z_bounds = sol.z_bounds[:n]
    return sol, resid


def finite_diff_jacobian(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray,
                         h: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian; column i is df/dx_i.  Test oracle only."""
    if not h > 0:
        raise ValueError(f"h must be > 0, got {h}")
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(np.asarray(f(x), dtype=float))
    J = np.empty((f0.size, x.size))
    for i in range(x.size):
        dx = np.zeros_like(x)
        dx[i] = h
        J[:, i] = (np.atleast_1d(np.asarray(f(x + dx), dtype=float)).ravel()
                   - np.atleast_1d(np.asarray(f(x - dx), dtype=float)).ravel()) / (2.0 * h)
    return J
