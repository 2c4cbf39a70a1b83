"""Dense convex quadratic programming.

Solves

    min  1/2 x'Hx + c'x
    s.t. A_eq x = b_eq
         lb <= A_in x <= ub
         x_lb <= x <= x_ub

with a primal-dual interior point method using a Mehrotra-style
predictor-corrector on dense LU factorizations.  Finite variable bounds are
folded into the inequality rows internally; rows with lb == ub are promoted
to equalities.  Intended for the small dense problems produced by the SQP
loop and the tracking controller (a few hundred variables).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

INF = 1e20


@dataclass
class SolveStatus:
    """Outcome of a QP or NLP solve."""

    converged: bool
    iterations: int
    kkt_residual: float
    constraint_violation: float
    wall_time: float
    reason: str = ""  # "", "max_iterations", "primal_infeasible", ...


@dataclass
class QpProblem:
    """Convex QP data.  ``H`` must be symmetric PSD (symmetry checked)."""

    H: np.ndarray
    c: np.ndarray
    A_eq: np.ndarray = None
    b_eq: np.ndarray = None
    A_in: np.ndarray = None
    lb: np.ndarray = None
    ub: np.ndarray = None
    x_lb: np.ndarray = None
    x_ub: np.ndarray = None

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=float)
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        if self.H.shape != (n, n):
            raise ValueError(f"H shape {self.H.shape} inconsistent with c size {n}")
        sym_err = np.max(np.abs(self.H - self.H.T)) if n else 0.0
        if sym_err > 1e-10:
            raise ValueError(f"H not symmetric (max asymmetry {sym_err:.3e})")
        if self.A_eq is None:
            self.A_eq = np.zeros((0, n))
            self.b_eq = np.zeros(0)
        else:
            self.A_eq = np.asarray(self.A_eq, dtype=float).reshape(-1, n)
            self.b_eq = np.asarray(self.b_eq, dtype=float).ravel()
            if self.b_eq.size != self.A_eq.shape[0]:
                raise ValueError("A_eq/b_eq row mismatch")
        if self.A_in is None:
            self.A_in = np.zeros((0, n))
            self.lb = np.zeros(0)
            self.ub = np.zeros(0)
        else:
            self.A_in = np.asarray(self.A_in, dtype=float).reshape(-1, n)
            self.lb = np.asarray(self.lb, dtype=float).ravel()
            self.ub = np.asarray(self.ub, dtype=float).ravel()
            if not (self.lb.size == self.ub.size == self.A_in.shape[0]):
                raise ValueError("A_in/lb/ub row mismatch")
            if np.any(self.lb > self.ub + 1e-14):
                raise ValueError("inequality lb > ub")
        self.x_lb = (np.full(n, -INF) if self.x_lb is None
                     else np.asarray(self.x_lb, dtype=float).ravel())
        self.x_ub = (np.full(n, INF) if self.x_ub is None
                     else np.asarray(self.x_ub, dtype=float).ravel())
        if self.x_lb.size != n or self.x_ub.size != n:
            raise ValueError("variable bound size mismatch")

    @property
    def n(self) -> int:
        return self.c.size


@dataclass
class QpOptions:
    tol: float = 1e-8
    max_iter: int = 60
    step_fraction: float = 0.995


@dataclass
class QpSolution:
    """Primal-dual result.  ``z_rows``/``z_bounds`` are net duals (lo - up)."""

    x: np.ndarray
    y_eq: np.ndarray
    z_rows: np.ndarray
    z_bounds: np.ndarray
    status: SolveStatus
    certificate: np.ndarray = None


def solve_qp(qp: QpProblem, opts: QpOptions = None) -> tuple[np.ndarray, SolveStatus]:
    """Solve the QP; returns the primal solution and a status record."""
    sol = solve_qp_full(qp, opts)
    return sol.x, sol.status


def solve_qp_full(qp: QpProblem, opts: QpOptions = None) -> QpSolution:
    opts = opts or QpOptions()
    t0 = time.perf_counter()
    n = qp.n

    # Fold finite variable bounds into rows; split exact-equality rows out.
    eye = np.eye(n)
    bnd_mask = (qp.x_lb > -INF / 2) | (qp.x_ub < INF / 2)
    row_is_eq = qp.ub - qp.lb < 1e-14 if qp.A_in.shape[0] else np.zeros(0, dtype=bool)

    A = np.vstack([qp.A_eq, qp.A_in[row_is_eq]])
    b = np.concatenate([qp.b_eq, qp.lb[row_is_eq]])
    C = np.vstack([qp.A_in[~row_is_eq], eye[bnd_mask]])
    lo = np.concatenate([qp.lb[~row_is_eq], qp.x_lb[bnd_mask]])
    up = np.concatenate([qp.ub[~row_is_eq], qp.x_ub[bnd_mask]])

    me, m = A.shape[0], C.shape[0]
    n_in_rows = int(np.sum(~row_is_eq))

    if m == 0:
        return _solve_eq_qp(qp, A, b, me, row_is_eq, t0, opts.tol)

    has_lo = lo > -INF / 2
    has_up = up < INF / 2
    n_sides = max(1, int(np.sum(has_lo) + np.sum(has_up)))

    H, c = qp.H, qp.c
    scale = 1.0 + max(np.max(np.abs(c)) if n else 0.0,
                      np.max(np.abs(b)) if me else 0.0,
                      np.max(np.abs(lo[has_lo])) if has_lo.any() else 0.0,
                      np.max(np.abs(up[has_up])) if has_up.any() else 0.0)

    # Starting point: regularized equality-constrained solve, slacks centered.
    x, y = _kkt_start(H, c, A, b)
    s = C @ x
    span = np.where(has_lo & has_up, np.maximum(up - lo, 1e-3), 1.0)
    margin = np.minimum(1.0, 0.1 * span)
    s = np.where(has_lo, np.maximum(s, lo + margin), s)
    s = np.where(has_up, np.minimum(s, up - margin), s)
    z_lo = np.where(has_lo, 1.0, 0.0)
    z_up = np.where(has_up, 1.0, 0.0)

    reason = "max_iterations"
    certificate = None
    c_pattern = _row_pattern(C)
    K = np.zeros((n + me, n + me))
    if me:
        K[:n, n:] = -A.T
        K[n:, :n] = A
    it = 0
    for it in range(1, opts.max_iter + 1):
        # tiny floors keep barrier terms finite when a slack rounds onto its bound
        sl = np.where(has_lo, np.maximum(s - lo, 1e-14 * (1.0 + np.abs(lo))), 1.0)
        su = np.where(has_up, np.maximum(up - s, 1e-14 * (1.0 + np.abs(up))), 1.0)
        r_d = H @ x + c - A.T @ y - C.T @ (z_lo - z_up)
        r_p = A @ x - b
        r_s = C @ x - s
        mu = (float(z_lo @ (sl * has_lo)) + float(z_up @ (su * has_up))) / n_sides

        kkt = max(np.max(np.abs(r_d)) / scale,
                  np.max(np.abs(r_p)) / scale if me else 0.0,
                  np.max(np.abs(r_s)) / scale,
                  mu / scale)
        if kkt <= opts.tol:
            reason = ""
            break

        cert = _farkas_certificate(A, b, C, lo, up, y, z_lo, z_up, has_lo, has_up)
        if cert is not None:
            reason = "primal_infeasible"
            certificate = cert
            break

        d = z_lo / sl * has_lo + z_up / su * has_up
        K[:n, :n] = H
        _add_normal_matrix(K, C, d, c_pattern)
        idx = np.arange(n)
        K[idx, idx] += 1e-12 * scale
        if me:
            jdx = np.arange(n, n + me)
            K[jdx, jdx] = -1e-12 * scale
        try:
            lu = scipy.linalg.lu_factor(K)
        except scipy.linalg.LinAlgError:
            K[idx, idx] += 1e-8 * scale
            lu = scipy.linalg.lu_factor(K)

        def solve_step(sigma_mu, ds_aff=None, dz_lo_aff=None, dz_up_aff=None):
            w_lo = np.where(has_lo, (sigma_mu - sl * z_lo) / sl, 0.0)
            w_up = np.where(has_up, (sigma_mu - su * z_up) / su, 0.0)
            if ds_aff is not None:
                w_lo -= np.where(has_lo, ds_aff * dz_lo_aff / sl, 0.0)
                w_up += np.where(has_up, ds_aff * dz_up_aff / su, 0.0)
            rhs = np.concatenate([-r_d + C.T @ (w_lo - w_up) - C.T @ (d * r_s),
                                  -r_p])
            sol = scipy.linalg.lu_solve(lu, rhs)
            dx, dy = sol[:n], sol[n:]
            ds = C @ dx + r_s
            dz_lo = np.where(has_lo, w_lo - z_lo / sl * ds, 0.0)
            dz_up = np.where(has_up, w_up + z_up / su * ds, 0.0)
            return dx, dy, ds, dz_lo, dz_up

        # Predictor (affine scaling) step.
        dx_a, dy_a, ds_a, dzl_a, dzu_a = solve_step(0.0)
        a_p = _max_step(sl, su, ds_a, has_lo, has_up)
        a_d = _dual_step(z_lo, z_up, dzl_a, dzu_a, has_lo, has_up)
        sl_a = sl + a_p * ds_a * has_lo
        su_a = su - a_p * ds_a * has_up
        mu_aff = (float((z_lo + a_d * dzl_a) @ (sl_a * has_lo))
                  + float((z_up + a_d * dzu_a) @ (su_a * has_up))) / n_sides
        sigma = min(1.0, (mu_aff / max(mu, 1e-300)) ** 3)

        # Corrector step.
        dx, dy, ds, dz_lo, dz_up = solve_step(sigma * mu, ds_a, dzl_a, dzu_a)
        tau = min(max(opts.step_fraction, 1.0 - mu), 1.0 - 1e-12)
        a_p = tau * _max_step(sl, su, ds, has_lo, has_up)
        a_d = tau * _dual_step(z_lo, z_up, dz_lo, dz_up, has_lo, has_up)

        x = x + a_p * dx
        s = s + a_p * ds
        y = y + a_d * dy
        z_lo = np.where(has_lo, np.maximum(z_lo + a_d * dz_lo, 1e-300), 0.0)
        z_up = np.where(has_up, np.maximum(z_up + a_d * dz_up, 1e-300), 0.0)

    viol = _primal_violation(qp, x)
    status = SolveStatus(converged=(reason == ""), iterations=it,
                         kkt_residual=float(kkt), constraint_violation=viol,
                         wall_time=time.perf_counter() - t0, reason=reason)
    z = z_lo - z_up
    z_rows = np.zeros(qp.A_in.shape[0])
    z_rows[~row_is_eq] = z[:n_in_rows]
    # Equality-promoted rows carry their dual from the y block.
    z_rows[row_is_eq] = y[qp.A_eq.shape[0]:]
    z_bounds = np.zeros(n)
    z_bounds[bnd_mask] = z[n_in_rows:]
    return QpSolution(x=x, y_eq=y[:qp.A_eq.shape[0]], z_rows=z_rows,
                      z_bounds=z_bounds, status=status, certificate=certificate)


def _row_pattern(C: np.ndarray):
    """Sparsity pattern of C'diag(d)C as flat scatter indices, or None if dense.

    Inequality rows from friction pyramids and variable bounds touch at most
    a couple of variables each, so the normal-matrix update is a handful of
    scatter-adds instead of a dense m x n x n product.
    """
    m, n = C.shape
    if m == 0:
        return None
    nz_rows = [np.nonzero(C[i])[0] for i in range(m)]
    pair_count = sum(len(j) ** 2 for j in nz_rows)
    if pair_count > 16 * m or max((len(j) for j in nz_rows), default=0) > 8:
        return None
    pair_row, pair_a, pair_b, pair_val = [], [], [], []
    for i, j in enumerate(nz_rows):
        for a in j:
            for b in j:
                pair_row.append(i)
                pair_a.append(a)
                pair_b.append(b)
                pair_val.append(C[i, a] * C[i, b])
    return (np.array(pair_row), np.array(pair_a), np.array(pair_b),
            np.array(pair_val))


def _add_normal_matrix(K, C, d, pattern):
    n = C.shape[1]
    if pattern is None:
        if C.shape[0]:
            K[:n, :n] += (C.T * d) @ C
        return
    pair_row, pair_a, pair_b, pair_val = pattern
    np.add.at(K, (pair_a, pair_b), d[pair_row] * pair_val)


def _kkt_start(H, c, A, b):
    n, me = c.size, b.size
    K = np.zeros((n + me, n + me))
    K[:n, :n] = H + np.eye(n) * (1.0 + np.trace(H) / max(n, 1)) * 1e-8
    K[:n, :n] += np.eye(n)
    if me:
        K[:n, n:] = -A.T
        K[n:, :n] = A
        K[n:, n:] = -np.eye(me) * 1e-8
    rhs = np.concatenate([-c, b])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
    return sol[:n], sol[n:]


def _max_step(sl, su, ds, has_lo, has_up) -> float:
    alpha = 1.0
    neg = has_lo & (ds < 0)
    if np.any(neg):
        alpha = min(alpha, float(np.min(-sl[neg] / ds[neg])))
    pos = has_up & (ds > 0)
    if np.any(pos):
        alpha = min(alpha, float(np.min(su[pos] / ds[pos])))
    return alpha


def _dual_step(z_lo, z_up, dz_lo, dz_up, has_lo, has_up) -> float:
    alpha = 1.0
    neg = has_lo & (dz_lo < 0)
    if np.any(neg):
        alpha = min(alpha, float(np.min(-z_lo[neg] / dz_lo[neg])))
    neg = has_up & (dz_up < 0)
    if np.any(neg):
        alpha = min(alpha, float(np.min(-z_up[neg] / dz_up[neg])))
    return alpha


def _farkas_certificate(A, b, C, lo, up, y, z_lo, z_up, has_lo, has_up):
    """Detect primal infeasibility via an approximate Farkas direction.

    A certificate is (y, z_lo, z_up >= 0) with A'y + C'(z_lo - z_up) ~ 0 and
    b'y + lo'z_lo - up'z_up > 0.  Returns the stacked direction or None.
    """
    norm = max(np.max(np.abs(y)) if y.size else 0.0,
               np.max(z_lo) if z_lo.size else 0.0,
               np.max(z_up) if z_up.size else 0.0)
    if norm < 1e2:  # duals only diverge on infeasible problems
        return None
    yn, zln, zun = y / norm, z_lo / norm, z_up / norm
    res = A.T @ yn + C.T @ (zln - zun)
    gain = (float(b @ yn) + float(lo[has_lo] @ zln[has_lo])
            - float(up[has_up] @ zun[has_up]))
    if np.max(np.abs(res)) < 1e-8 and gain > 1e-8:
        return np.concatenate([yn, zln - zun])
    return None


def _primal_violation(qp: QpProblem, x: np.ndarray) -> float:
    viol = 0.0
    if qp.A_eq.shape[0]:
        viol = max(viol, float(np.max(np.abs(qp.A_eq @ x - qp.b_eq))))
    if qp.A_in.shape[0]:
        r = qp.A_in @ x
        viol = max(viol, float(np.max(np.maximum(qp.lb - r, 0.0))),
                   float(np.max(np.maximum(r - qp.ub, 0.0))))
    viol = max(viol, float(np.max(np.maximum(qp.x_lb - x, 0.0))),
               float(np.max(np.maximum(x - qp.x_ub, 0.0))))
    return viol


def _solve_eq_qp(qp, A, b, me, row_is_eq, t0, tol) -> QpSolution:
    """Direct KKT solve when no inequality side is present."""
    n = qp.n
    K = np.zeros((n + me, n + me))
    K[:n, :n] = qp.H
    if me:
        K[:n, n:] = -A.T
        K[n:, :n] = A
    rhs = np.concatenate([-qp.c, b])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
    x, y = sol[:n], sol[n:]
    r_d = qp.H @ x + qp.c - A.T @ y
    viol = _primal_violation(qp, x)
    kkt = max(float(np.max(np.abs(r_d))) if n else 0.0, viol)
    scale = 1.0 + max(np.max(np.abs(qp.c)) if n else 0.0,
                      np.max(np.abs(b)) if me else 0.0)
    ok = kkt <= max(tol * scale, 1e-9 * scale)
    status = SolveStatus(converged=ok, iterations=1, kkt_residual=kkt,
                         constraint_violation=viol,
                         wall_time=time.perf_counter() - t0,
                         reason="" if ok else "primal_infeasible")
    z_rows = np.zeros(qp.A_in.shape[0])
    if row_is_eq.size:
        z_rows[row_is_eq] = y[qp.A_eq.shape[0]:]
    return QpSolution(x=x, y_eq=y[:qp.A_eq.shape[0]], z_rows=z_rows,
                      z_bounds=np.zeros(n), status=status)
