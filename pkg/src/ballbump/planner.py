"""Joint time/collision/trajectory optimization for the jump.

The planner transcribes the stance trajectory on ``N`` knots with forward
Euler and a knot spacing that is itself a decision variable through the
takeoff time, and couples it to the ball through three algebraic maps: the
free flight of the torso from takeoff to the hit, the restitution collision,
and the descent of the ball to the landing plane.  The landing point is a
hard constraint; the objective is a plain weighted input norm, so any
feasible solution is an acceptable jump.

Decision vector layout (N knots):

    [t_t, t_h, l_h, theta_h, w (3: twist at the hit),
     x[0..N-1] (6 each: x, z, pitch, vx, vz, pitch_rate),
     u[0..N-2] (4 each: ffx, ffz, frx, frz)]

All constraint Jacobians are analytic; finite differences are test-only.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import fileio
from .dynamics import (BallState, BallNeverLandsError, CollisionConfig, FootGeometry,
                       GrfPair, PhysParams, RobotState, integrate_step, landing_point,
                       landing_time, rot2)
from .qp import INF, QpOptions, SolveStatus
from .sqp import ConstraintBlock, NlpProblem, SqpOptions, solve_nlp

J2 = np.array([[0.0, -1.0], [1.0, 0.0]])  # d/dtheta of rot2 is J2 @ rot2

COLD_START_T = (0.2, 0.4)     # (t_t, t_h) offsets from the ball release
COLD_START_FZ = 175.0         # per-foot vertical force guess, N
FORCE_SCALE = 200.0           # characteristic force for internal scaling, N


class PlanningError(RuntimeError):
    """Raised when the jump program cannot be solved; carries the status."""

    def __init__(self, message: str, status: SolveStatus = None):
        super().__init__(message)
        self.status = status


@dataclass(frozen=True)
class BumpTask:
    """One ball-bumping assignment.

    ``ball0`` is the ball state at release time ``t_s``; the robot starts its
    jump at ``t_j`` from state ``q0``.  ``target`` is the desired landing
    point of the ball on the plane ``ground_z`` (its z component).
    """

    ball0: BallState
    target: np.ndarray          # (2,) desired landing point, target[1] == ground_z
    q0: RobotState              # robot state at t_j
    t_s: float = 0.0            # ball release time
    t_j: float = None           # jump start; defaults to t_s + 0.08
    ground_z: float = None      # landing plane height; defaults to target z

    def __post_init__(self):
        object.__setattr__(self, "target", np.asarray(self.target, dtype=float).reshape(2))
        if self.t_j is None:
            object.__setattr__(self, "t_j", self.t_s + 0.08)
        if self.ground_z is None:
            object.__setattr__(self, "ground_z", float(self.target[1]))
        if self.t_j < self.t_s:
            raise ValueError(f"BumpTask.t_j ({self.t_j}) must be >= t_s ({self.t_s})")
        if abs(self.target[1] - self.ground_z) > 1e-9:
            raise ValueError("BumpTask.target z must equal ground_z")


@dataclass
class PlannerConfig:
    """Transcription and bound settings for the jump program.

    ``takeoff_lb``/``takeoff_ub`` bound the final stance knot
    [x, z, pitch, vx, vz, pitch_rate]; when omitted they default to a
    stance-reachable window around the initial COM.  ``stance_feet`` defaults
    to +-0.24 m from the initial COM at ground height.
    """

    N: int = 20
    l_bounds: tuple = (-0.15, 0.15)
    takeoff_lb: np.ndarray = None
    takeoff_ub: np.ndarray = None
    t_min_offset: float = 0.1       # earliest takeoff/hit after t_j
    t_bounds: tuple = None          # ((tt_lo, tt_hi), (th_lo, th_hi)) override
    omega: np.ndarray = 1.0         # per-knot input weights
    grf_max: float = 500.0          # per-foot vertical force bound, N
    stance_feet: FootGeometry = None

    def validate(self):
        if self.N < 3:
            raise ValueError(f"PlannerConfig.N must be >= 3, got {self.N}")
        if not self.l_bounds[0] <= self.l_bounds[1]:
            raise ValueError("PlannerConfig.l_bounds must satisfy lo <= hi")
        if np.any(np.asarray(self.omega) <= 0):
            raise ValueError("PlannerConfig.omega entries must be > 0")
        if not self.grf_max > 0:
            raise ValueError("PlannerConfig.grf_max must be > 0")
        if self.takeoff_lb is not None and self.takeoff_ub is not None:
            lb = np.asarray(self.takeoff_lb, dtype=float).reshape(6)
            ub = np.asarray(self.takeoff_ub, dtype=float).reshape(6)
            if np.any(lb > ub):
                raise ValueError("PlannerConfig.takeoff box must satisfy lb <= ub")

    def omega_array(self) -> np.ndarray:
        w = np.asarray(self.omega, dtype=float)
        if w.ndim == 0:
            return np.full(self.N - 1, float(w))
        if w.size != self.N - 1:
            raise ValueError(f"PlannerConfig.omega needs {self.N - 1} entries, got {w.size}")
        return w


def default_takeoff_box(q0: RobotState) -> tuple[np.ndarray, np.ndarray]:
    """Stance-reachable takeoff window around the initial COM."""
    x0 = q0.pos[0]
    lb = np.array([x0 - 0.3, 0.35, -0.6, -2.0, 1.0, -4.0])
    ub = np.array([x0 + 0.3, 0.55, 0.6, 2.0, 3.5, 4.0])
    return lb, ub


def default_stance_feet(q0: RobotState, params: PhysParams) -> FootGeometry:
    x0 = q0.pos[0]
    return FootGeometry(p_front_world=(x0 + 0.24, params.ground_z),
                        p_rear_world=(x0 - 0.24, params.ground_z))


@dataclass
class JumpPlan:
    """A solved jump: optimized times, collision configuration, and knots."""

    t_j: float
    t_t: float
    t_h: float
    cfg: CollisionConfig
    hit_twist: np.ndarray       # (3,) torso twist at the hit
    states: np.ndarray          # (N, 6) stance knots
    inputs: np.ndarray          # (N-1, 4) GRF knots [ffx, ffz, frx, frz]
    dt_knot: float
    t_s: float = 0.0            # ball release time (epoch of the ball clock)

    def __post_init__(self):
        self.hit_twist = np.asarray(self.hit_twist, dtype=float).reshape(3)
        self.states = np.asarray(self.states, dtype=float).reshape(-1, 6)
        self.inputs = np.asarray(self.inputs, dtype=float).reshape(-1, 4)
        if self.inputs.shape[0] != self.states.shape[0] - 1:
            raise ValueError("JumpPlan needs N states and N-1 inputs")
        if not self.t_j <= self.t_t <= self.t_h:
            raise ValueError("JumpPlan times must satisfy t_j <= t_t <= t_h")

    @property
    def n_knots(self) -> int:
        return self.states.shape[0]

    def takeoff_state(self) -> RobotState:
        return RobotState.from_vector(self.states[-1])

    def knot_times(self) -> np.ndarray:
        return self.t_j + self.dt_knot * np.arange(self.n_knots)


@dataclass
class ValidationReport:
    """Consistency report for a plan against its task."""

    max_dynamics_defect: float
    landing_error: float
    min_normal_force: float
    min_cone_slack: float       # min over knots of mu*f_z - |f_x|
    max_normal_force: float
    time_ordering_ok: bool
    issues: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues


# ---------------------------------------------------------------------------
# Decision-vector layout
# ---------------------------------------------------------------------------

class Layout:
    """Index bookkeeping for the packed decision vector."""

    IDX_TT, IDX_TH, IDX_LH, IDX_THETA = 0, 1, 2, 3
    W = slice(4, 7)

    def __init__(self, n_knots: int):
        self.N = n_knots
        self.x0 = 7
        self.u0 = 7 + 6 * n_knots
        self.size = self.u0 + 4 * (n_knots - 1)

    def x(self, k: int) -> slice:
        return slice(self.x0 + 6 * k, self.x0 + 6 * (k + 1))

    def u(self, k: int) -> slice:
        return slice(self.u0 + 4 * k, self.u0 + 4 * (k + 1))

    def states(self, z: np.ndarray) -> np.ndarray:
        return z[self.x0:self.u0].reshape(self.N, 6)

    def inputs(self, z: np.ndarray) -> np.ndarray:
        return z[self.u0:].reshape(self.N - 1, 4)


def initial_guess(task: BumpTask, config: PlannerConfig) -> np.ndarray:
    """Cold-start decision vector: fixed generic times, zero states, hover-ish forces.

    The time block is (t_s + 0.2, t_s + 0.4) so the guess translates with the
    task clock; every input knot gets 175 N vertical per foot.
    """
    lay = Layout(config.N)
    z = np.zeros(lay.size)
    z[Layout.IDX_TT] = task.t_s + COLD_START_T[0]
    z[Layout.IDX_TH] = task.t_s + COLD_START_T[1]
    u = lay.inputs(z)
    u[:, 1] = COLD_START_FZ
    u[:, 3] = COLD_START_FZ
    return z


# ---------------------------------------------------------------------------
# Landing-point chain with analytic gradient
# ---------------------------------------------------------------------------

def _landing_x_grad(th_rel: float, ball0: BallState, w: np.ndarray, l_h: float,
                    theta: float, params: PhysParams, plane_z: float):
    """Landing x and its gradient w.r.t. [t_h, l_h, theta, w0, w1, w2].

    ``th_rel`` is the hit time measured from the ball epoch.  Mirrors
    :func:`ballbump.dynamics.landing_point` composition exactly.
    """
    g = params.g
    gvec = params.gvec
    e = params.e
    r_h = params.r_h_offset

    p_hit = ball0.pos + ball0.vel * th_rel + 0.5 * gvec * th_rel ** 2
    v_hit = ball0.vel + gvec * th_rel

    R = rot2(theta)
    lever = np.array([r_h, l_h])
    Rlev = R @ lever
    v_p = w[0:2] + w[2] * Rlev

    M = np.diag([1.0, -e])
    E = np.diag([0.0, e])
    PM = R @ M @ R.T
    PE = R @ E @ R.T
    v_post = PM @ v_hit + PE @ v_p

    # Floored discriminant keeps the merit function finite while the line
    # search backs an iterate out of the no-landing region; the time bounds
    # keep converged solutions away from the floor.
    disc = max(v_post[1] ** 2 - 2.0 * g * (p_hit[1] - plane_z), 1e-12)
    sq = np.sqrt(disc)
    tau = (v_post[1] + sq) / (-g)
    x_e = p_hit[0] + v_post[0] * tau

    # partials of tau
    dtau_dvz = (1.0 + v_post[1] / sq) / (-g)
    dtau_dpz = 1.0 / sq

    # v_post partials
    dPM = J2 @ PM - PM @ J2
    dPE = J2 @ PE - PE @ J2
    dvp_dtheta = w[2] * (J2 @ Rlev)
    dvpost_dtheta = dPM @ v_hit + dPE @ v_p + PE @ dvp_dtheta
    dvpost_dth = PM @ gvec                       # through v_hit only
    dvpost_dl = PE @ (w[2] * (R @ np.array([0.0, 1.0])))
    dvpost_dw = np.hstack([PE[:, 0:2], (PE @ Rlev)[:, None]])  # (2, 3)

    grad = np.zeros(6)

    def chain(dp_x, dp_z, dv):  # d(x_e) given d(p_hit) and d(v_post)
        return dp_x + tau * dv[0] + v_post[0] * (dtau_dvz * dv[1] + dtau_dpz * dp_z)

    grad[0] = chain(v_hit[0], v_hit[1], dvpost_dth)
    grad[1] = chain(0.0, 0.0, dvpost_dl)
    grad[2] = chain(0.0, 0.0, dvpost_dtheta)
    for j in range(3):
        grad[3 + j] = chain(0.0, 0.0, dvpost_dw[:, j])
    return x_e, grad


# ---------------------------------------------------------------------------
# NLP construction
# ---------------------------------------------------------------------------

def build_nlp(task: BumpTask, config: PlannerConfig, params: PhysParams) -> NlpProblem:
    """Assemble the jump program as a generic differentiable NLP."""
    config.validate()
    lay = Layout(config.N)
    N = config.N
    omega = config.omega_array()

    feet = config.stance_feet or default_stance_feet(task.q0, params)
    if config.takeoff_lb is None or config.takeoff_ub is None:
        box_lb, box_ub = default_takeoff_box(task.q0)
        if config.takeoff_lb is not None:
            box_lb = np.asarray(config.takeoff_lb, dtype=float).reshape(6)
        if config.takeoff_ub is not None:
            box_ub = np.asarray(config.takeoff_ub, dtype=float).reshape(6)
    else:
        box_lb = np.asarray(config.takeoff_lb, dtype=float).reshape(6)
        box_ub = np.asarray(config.takeoff_ub, dtype=float).reshape(6)
    if np.any(box_lb > box_ub):
        raise ValueError("PlannerConfig.takeoff box must satisfy lb <= ub")

    pf, pr = feet.p_front_world, feet.p_rear_world
    m, I, g = params.m, params.I, params.g
    gvec = params.gvec
    t_j, t_s = task.t_j, task.t_s
    x_init = task.q0.as_vector()
    plane = task.ground_z

    # time bounds: the hit must happen while the un-hit ball is still above
    # the landing plane, otherwise the post-hit root can vanish
    if config.t_bounds is not None:
        (tt_lo, tt_hi), (th_lo, th_hi) = config.t_bounds
    else:
        try:
            t_free = landing_time(task.ball0.pos, task.ball0.vel, t_s, plane, params)
        except BallNeverLandsError as exc:
            raise ValueError(f"BumpTask.ball0 never reaches the landing plane: {exc}")
        tt_lo = th_lo = t_j + config.t_min_offset
        tt_hi = th_hi = t_free - 1e-3
        if th_hi <= th_lo:
            raise ValueError(
                "BumpTask: ball reaches the landing plane before the earliest "
                f"allowed hit time ({t_free:.4f} s <= {th_lo:.4f} s)")

    # ----- cost -----
    def cost(z):
        u = lay.inputs(z)
        return float(np.sum(omega * np.sum(u * u, axis=1)))

    def cost_grad(z):
        grad = np.zeros(lay.size)
        grad[lay.u0:] = (2.0 * omega[:, None] * lay.inputs(z)).ravel()
        return grad

    # ----- dynamics defects -----
    def _drift(X, U):
        F = np.empty((N - 1, 6))
        F[:, 0:3] = X[:-1, 3:6]
        F[:, 3] = (U[:, 0] + U[:, 2]) / m
        F[:, 4] = (U[:, 1] + U[:, 3]) / m + g
        F[:, 5] = ((pf[0] - X[:-1, 0]) * U[:, 1] - (pf[1] - X[:-1, 1]) * U[:, 0]
                   + (pr[0] - X[:-1, 0]) * U[:, 3] - (pr[1] - X[:-1, 1]) * U[:, 2]) / I
        return F

    def dyn_fun(z):
        X, U = lay.states(z), lay.inputs(z)
        delta = (z[Layout.IDX_TT] - t_j) / (N - 1)
        return (X[1:] - X[:-1] - delta * _drift(X, U)).ravel()

    def dyn_jac(z):
        X, U = lay.states(z), lay.inputs(z)
        delta = (z[Layout.IDX_TT] - t_j) / (N - 1)
        F = _drift(X, U)
        Jm = np.zeros((6 * (N - 1), lay.size))
        for k in range(N - 1):
            r = slice(6 * k, 6 * k + 6)
            xk, xk1, uk = lay.x(k), lay.x(k + 1), lay.u(k)
            A = np.zeros((6, 6))
            A[0:3, 3:6] = np.eye(3)
            A[5, 0] = -(U[k, 1] + U[k, 3]) / I
            A[5, 1] = (U[k, 0] + U[k, 2]) / I
            B = np.zeros((6, 4))
            B[3, 0] = B[3, 2] = 1.0 / m
            B[4, 1] = B[4, 3] = 1.0 / m
            B[5, :] = [-(pf[1] - X[k, 1]) / I, (pf[0] - X[k, 0]) / I,
                       -(pr[1] - X[k, 1]) / I, (pr[0] - X[k, 0]) / I]
            Jm[r, xk] = -np.eye(6) - delta * A
            Jm[r, xk1] = np.eye(6)
            Jm[r, uk] = -delta * B
            Jm[r, Layout.IDX_TT] = -F[k] / (N - 1)
        return Jm

    # ----- initial condition -----
    def init_fun(z):
        return z[lay.x(0)] - x_init

    def init_jac(z):
        Jm = np.zeros((6, lay.size))
        Jm[:, lay.x(0)] = np.eye(6)
        return Jm

    # ----- contact geometry at the hit -----
    def _hit_pose(z):
        xN = z[lay.x(N - 1)]
        dt_f = z[Layout.IDX_TH] - z[Layout.IDX_TT]
        pos_h = xN[0:2] + xN[3:5] * dt_f + 0.5 * gvec * dt_f ** 2
        pitch_h = xN[2] + xN[5] * dt_f
        return xN, dt_f, pos_h, pitch_h

    def geom_fun(z):
        xN, dt_f, pos_h, pitch_h = _hit_pose(z)
        th_rel = z[Layout.IDX_TH] - t_s
        b_hit = (task.ball0.pos + task.ball0.vel * th_rel + 0.5 * gvec * th_rel ** 2)
        R = rot2(z[Layout.IDX_THETA])
        offset = np.array([z[Layout.IDX_LH], params.r_h_offset])
        res = np.empty(3)
        res[0:2] = pos_h + R @ offset - b_hit
        res[2] = pitch_h - z[Layout.IDX_THETA]
        return res

    def geom_jac(z):
        xN, dt_f, pos_h, pitch_h = _hit_pose(z)
        th_rel = z[Layout.IDX_TH] - t_s
        b_vel = task.ball0.vel + gvec * th_rel
        R = rot2(z[Layout.IDX_THETA])
        offset = np.array([z[Layout.IDX_LH], params.r_h_offset])
        Jm = np.zeros((3, lay.size))
        xNs = lay.x(N - 1)
        vel_h = xN[3:5] + gvec * dt_f
        # position rows
        Jm[0:2, xNs.start + 0] = [1.0, 0.0]
        Jm[0:2, xNs.start + 1] = [0.0, 1.0]
        Jm[0:2, xNs.start + 3] = [dt_f, 0.0]
        Jm[0:2, xNs.start + 4] = [0.0, dt_f]
        Jm[0:2, Layout.IDX_TT] = -vel_h
        Jm[0:2, Layout.IDX_TH] = vel_h - b_vel
        Jm[0:2, Layout.IDX_LH] = R @ np.array([1.0, 0.0])
        Jm[0:2, Layout.IDX_THETA] = J2 @ (R @ offset)
        # pitch row
        Jm[2, xNs.start + 2] = 1.0
        Jm[2, xNs.start + 5] = dt_f
        Jm[2, Layout.IDX_TT] = -xN[5]
        Jm[2, Layout.IDX_TH] = xN[5]
        Jm[2, Layout.IDX_THETA] = -1.0
        return Jm

    # ----- flight consistency: decision twist equals induced twist -----
    g3 = np.array([0.0, g, 0.0])

    def flight_fun(z):
        xN = z[lay.x(N - 1)]
        dt_f = z[Layout.IDX_TH] - z[Layout.IDX_TT]
        return z[Layout.W] - (xN[3:6] + g3 * dt_f)

    def flight_jac(z):
        Jm = np.zeros((3, lay.size))
        xNs = lay.x(N - 1)
        Jm[:, Layout.W] = np.eye(3)
        Jm[0, xNs.start + 3] = -1.0
        Jm[1, xNs.start + 4] = -1.0
        Jm[2, xNs.start + 5] = -1.0
        Jm[:, Layout.IDX_TT] = g3
        Jm[:, Layout.IDX_TH] = -g3
        return Jm

    # ----- landing point -----
    def land_fun(z):
        x_e, _ = _landing_x_grad(z[Layout.IDX_TH] - t_s, task.ball0, z[Layout.W],
                                 z[Layout.IDX_LH], z[Layout.IDX_THETA], params, plane)
        return np.array([x_e - task.target[0]])

    def land_jac(z):
        _, grad = _landing_x_grad(z[Layout.IDX_TH] - t_s, task.ball0, z[Layout.W],
                                  z[Layout.IDX_LH], z[Layout.IDX_THETA], params, plane)
        Jm = np.zeros((1, lay.size))
        Jm[0, Layout.IDX_TH] = grad[0]
        Jm[0, Layout.IDX_LH] = grad[1]
        Jm[0, Layout.IDX_THETA] = grad[2]
        Jm[0, Layout.W] = grad[3:6]
        return Jm

    # ----- friction cone rows (linear) -----
    mu = params.mu
    n_cone = 6 * (N - 1)
    A_cone = np.zeros((n_cone, lay.size))
    cone_lb = np.empty(n_cone)
    cone_ub = np.empty(n_cone)
    for k in range(N - 1):
        u = lay.u(k)
        for foot, (ix, iz) in enumerate(((0, 1), (2, 3))):
            r = 6 * k + 3 * foot
            A_cone[r, u.start + iz] = 1.0                      # 0 <= f_z <= grf_max
            cone_lb[r], cone_ub[r] = 0.0, config.grf_max
            A_cone[r + 1, u.start + ix] = 1.0                  # f_x - mu f_z <= 0
            A_cone[r + 1, u.start + iz] = -mu
            cone_lb[r + 1], cone_ub[r + 1] = -INF, 0.0
            A_cone[r + 2, u.start + ix] = 1.0                  # f_x + mu f_z >= 0
            A_cone[r + 2, u.start + iz] = mu
            cone_lb[r + 2], cone_ub[r + 2] = 0.0, INF

    def cone_fun(z):
        return A_cone @ z

    def cone_jac(z):
        return A_cone

    # ----- hit-after-takeoff ordering -----
    A_order = np.zeros((1, lay.size))
    A_order[0, Layout.IDX_TH] = 1.0
    A_order[0, Layout.IDX_TT] = -1.0

    # ----- bounds -----
    x_lb = np.full(lay.size, -INF)
    x_ub = np.full(lay.size, INF)
    x_lb[Layout.IDX_TT], x_ub[Layout.IDX_TT] = tt_lo, tt_hi
    x_lb[Layout.IDX_TH], x_ub[Layout.IDX_TH] = th_lo, th_hi
    x_lb[Layout.IDX_LH], x_ub[Layout.IDX_LH] = config.l_bounds
    x_lb[Layout.IDX_THETA], x_ub[Layout.IDX_THETA] = -np.pi / 2, np.pi / 2
    x_lb[lay.x(N - 1)] = box_lb
    x_ub[lay.x(N - 1)] = box_ub

    constraints = [
        ConstraintBlock(fun=dyn_fun, jac=dyn_jac, kind="eq", name="dynamics"),
        ConstraintBlock(fun=init_fun, jac=init_jac, kind="eq", name="initial_condition"),
        ConstraintBlock(fun=geom_fun, jac=geom_jac, kind="eq", name="contact_geometry"),
        ConstraintBlock(fun=flight_fun, jac=flight_jac, kind="eq", name="flight_consistency"),
        ConstraintBlock(fun=land_fun, jac=land_jac, kind="eq", name="landing_point"),
        ConstraintBlock(fun=cone_fun, jac=cone_jac, kind="ineq",
                        lb=cone_lb, ub=cone_ub, name="friction_cone"),
        ConstraintBlock(fun=lambda z: A_order @ z, jac=lambda z: A_order, kind="ineq",
                        lb=np.array([0.0]), ub=np.array([INF]), name="time_order"),
    ]
    return NlpProblem(n=lay.size, cost=cost, cost_grad=cost_grad,
                      constraints=constraints, x_lb=x_lb, x_ub=x_ub)


# ---------------------------------------------------------------------------
# Solving and validation
# ---------------------------------------------------------------------------

def solve_plan(task: BumpTask, config: PlannerConfig, params: PhysParams,
               solver_opts: SqpOptions = None) -> JumpPlan:
    """Cold-start solve of the jump program; raises :class:`PlanningError` on failure."""
    nlp = build_nlp(task, config, params)
    lay = Layout(config.N)
    z0 = initial_guess(task, config)

    if solver_opts is None:
        solver_opts = default_solver_options(config)

    z, status = solve_nlp(nlp, z0, solver_opts)
    if not status.converged or status.constraint_violation > 1e-6:
        raise PlanningError(
            f"jump program did not converge ({status.reason or 'tolerance'}; "
            f"violation {status.constraint_violation:.2e}, "
            f"{status.iterations} iterations)", status=status)
    plan = plan_from_decision(z, task, config)
    plan.solve_status = status
    return plan


def default_solver_options(config: PlannerConfig) -> SqpOptions:
    """Scaling and tolerances tuned for the jump program."""
    lay = Layout(config.N)
    x_scale = np.ones(lay.size)
    x_scale[lay.u0:] = FORCE_SCALE
    omega = config.omega_array()
    cost_scale = 1.0 / (2.0 * FORCE_SCALE ** 2 * float(np.mean(omega)))
    # Start the BFGS model at the exact (scaled) cost curvature on the input
    # block and a deliberately small value elsewhere: the update grows
    # underestimated curvature quickly but shrinks overestimates slowly.
    hess = np.full(lay.size, 1e-2)
    hess[lay.u0:] = np.repeat(omega / np.mean(omega), 4)
    return SqpOptions(tol=1e-6, max_iter=200, x_scale=x_scale, cost_scale=cost_scale,
                      scale_constraints=True, hess_init=hess,
                      qp_opts=QpOptions(tol=1e-9, max_iter=40))


def plan_from_decision(z: np.ndarray, task: BumpTask, config: PlannerConfig) -> JumpPlan:
    lay = Layout(config.N)
    t_t, t_h = float(z[Layout.IDX_TT]), float(z[Layout.IDX_TH])
    return JumpPlan(
        t_j=task.t_j, t_t=t_t, t_h=max(t_h, t_t),
        cfg=CollisionConfig(l_h=float(z[Layout.IDX_LH]), theta_h=float(z[Layout.IDX_THETA])),
        hit_twist=z[Layout.W].copy(),
        states=lay.states(z).copy(),
        inputs=lay.inputs(z).copy(),
        dt_knot=(t_t - task.t_j) / (config.N - 1),
        t_s=task.t_s)


def validate_plan(plan: JumpPlan, task: BumpTask, params: PhysParams,
                  feet: FootGeometry = None) -> ValidationReport:
    """Re-derive the plan's promises: dynamics, cone margins, landing, ordering."""
    feet = feet or default_stance_feet(task.q0, params)
    issues = []

    # Euler re-integration defect, one knot at a time
    max_defect = 0.0
    for k in range(plan.n_knots - 1):
        state = RobotState.from_vector(plan.states[k])
        grf = GrfPair.from_vector(plan.inputs[k])
        x = integrate_step(state, grf, feet, params, plan.dt_knot, "euler").as_vector()
        max_defect = max(max_defect, float(np.max(np.abs(x - plan.states[k + 1]))))
    if max_defect > 1e-6:
        issues.append(f"dynamics defect {max_defect:.3e} exceeds 1e-6")

    # friction margins
    fz = plan.inputs[:, [1, 3]]
    fx = plan.inputs[:, [0, 2]]
    min_fz = float(np.min(fz))
    cone_slack = float(np.min(params.mu * fz - np.abs(fx)))
    if min_fz < -1e-9:
        issues.append(f"negative normal force {min_fz:.3e}")
    if cone_slack < -1e-9:
        issues.append(f"friction cone violated by {-cone_slack:.3e}")

    # landing error through the analytic composition
    try:
        point = landing_point(plan.t_h - plan.t_s, task.ball0, plan.hit_twist,
                              plan.cfg, params, plane_z=task.ground_z)
        landing_error = float(abs(point[0] - task.target[0]))
    except BallNeverLandsError:
        landing_error = np.inf
        issues.append("post-hit ball never reaches the landing plane")
    if landing_error > 1e-4:
        issues.append(f"landing error {landing_error:.3e} exceeds 1e-4")

    ordering = plan.t_j <= plan.t_t <= plan.t_h
    if not ordering:
        issues.append("time ordering violated (t_j <= t_t <= t_h)")

    return ValidationReport(max_dynamics_defect=max_defect,
                            landing_error=landing_error,
                            min_normal_force=min_fz,
                            min_cone_slack=cone_slack,
                            max_normal_force=float(np.max(fz)),
                            time_ordering_ok=ordering,
                            issues=issues)


# ---------------------------------------------------------------------------
# Plan files
# ---------------------------------------------------------------------------

PLAN_SCHEMA = "jump-plan/1"


def save_plan(plan: JumpPlan, path, params: PhysParams) -> None:
    """Write a plan document (YAML, 17 significant digits per float)."""
    doc = {
        "schema": PLAN_SCHEMA,
        "physics_hash": fileio.physics_hash(params),
        "t_s": float(plan.t_s),
        "t_j": float(plan.t_j),
        "t_t": float(plan.t_t),
        "t_h": float(plan.t_h),
        "dt_knot": float(plan.dt_knot),
        "collision": {"l_h": float(plan.cfg.l_h), "theta_h": float(plan.cfg.theta_h)},
        "hit_twist": [float(v) for v in plan.hit_twist],
        "states": [[float(v) for v in row] for row in plan.states],
        "inputs": [[float(v) for v in row] for row in plan.inputs],
    }
    fileio.dump_yaml(doc, path)


def load_plan(path) -> tuple[JumpPlan, str]:
    """Read a plan document; returns the plan and its physics hash."""
    doc = fileio.load_yaml(path)
    if not isinstance(doc, dict) or doc.get("schema") != PLAN_SCHEMA:
        raise ValueError(f"{path}: not a {PLAN_SCHEMA} document")
    plan = JumpPlan(
        t_j=float(doc["t_j"]), t_t=float(doc["t_t"]), t_h=float(doc["t_h"]),
        cfg=CollisionConfig(l_h=float(doc["collision"]["l_h"]),
                            theta_h=float(doc["collision"]["theta_h"])),
        hit_twist=np.array(doc["hit_twist"], dtype=float),
        states=np.array(doc["states"], dtype=float),
        inputs=np.array(doc["inputs"], dtype=float),
        dt_knot=float(doc["dt_knot"]),
        t_s=float(doc["t_s"]))
    return plan, str(doc["physics_hash"])
