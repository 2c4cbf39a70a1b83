"""Planar physics shared by the planner, tracking controller, and simulator.

Everything lives in the x-z (sagittal) plane with z up.  The robot torso is a
single rigid body driven by ground reaction forces at two pinned feet; the
ball is a drag-free projectile.  The collision between the torso back surface
and the ball is an instantaneous restitution map that leaves the torso state
untouched (the mass ratio is treated as infinite).

All functions are pure; states and parameter sets are immutable values.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

GRAVITY = -9.81  # m/s^2, signed (z up, so gravity vectors are [0, g])

INF = 1e20


class BallNeverLandsError(ValueError):
    """Raised when a ballistic arc never reaches the requested height."""


def rot2(theta: float) -> np.ndarray:
    """Counter-clockwise planar rotation matrix."""
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def cross2(a: np.ndarray, b: np.ndarray) -> float:
    """Planar cross product a1*b2 - a2*b1 (torque about the pitch axis)."""
    return a[0] * b[1] - a[1] * b[0]


@dataclass(frozen=True)
class PhysParams:
    """Physical parameters of the torso, ball contact, and environment.

    ``g`` is the signed gravitational acceleration (negative, z up).
    ``r_h_offset`` is the normal distance from the COM to the collision
    surface on the torso back; it defaults to ``h_body`` when omitted.
    """

    m: float = 35.0          # torso mass, kg
    I: float = 1.4           # pitch-axis inertia, kg m^2
    g: float = GRAVITY       # signed gravity, m/s^2
    h_body: float = 0.3      # torso height, m
    r_h_offset: float = None  # COM -> collision surface normal offset, m
    e: float = 0.8           # coefficient of restitution
    mu: float = 0.5          # foot friction coefficient
    ground_z: float = 0.0    # ground height under the feet, m

    def __post_init__(self):
        if self.r_h_offset is None:
            object.__setattr__(self, "r_h_offset", self.h_body)
        if not self.m > 0:
            raise ValueError(f"PhysParams.m must be > 0, got {self.m}")
        if not self.I > 0:
            raise ValueError(f"PhysParams.I must be > 0, got {self.I}")
        if not self.g < 0:
            raise ValueError(f"PhysParams.g must be < 0, got {self.g}")
        if not 0.0 <= self.e <= 1.0:
            raise ValueError(f"PhysParams.e must be in [0, 1], got {self.e}")
        if not self.mu > 0:
            raise ValueError(f"PhysParams.mu must be > 0, got {self.mu}")
        if not self.h_body > 0:
            raise ValueError(f"PhysParams.h_body must be > 0, got {self.h_body}")

    @property
    def gvec(self) -> np.ndarray:
        return np.array([0.0, self.g])

    @property
    def hover_force(self) -> float:
        """Vertical force per foot that exactly cancels gravity."""
        return self.m * abs(self.g) / 2.0


@dataclass(frozen=True)
class RobotState:
    """Torso pose and twist: COM position, pitch, and their rates."""

    pos: np.ndarray          # (2,) COM position, m
    pitch: float = 0.0       # rad
    vel: np.ndarray = None   # (2,) COM velocity, m/s
    pitch_rate: float = 0.0  # rad/s

    def __post_init__(self):
        object.__setattr__(self, "pos", np.asarray(self.pos, dtype=float).reshape(2))
        vel = np.zeros(2) if self.vel is None else np.asarray(self.vel, dtype=float).reshape(2)
        object.__setattr__(self, "vel", vel)
        if not (np.all(np.isfinite(self.pos)) and np.all(np.isfinite(self.vel))
                and np.isfinite(self.pitch) and np.isfinite(self.pitch_rate)):
            raise ValueError("RobotState entries must be finite")

    def as_vector(self) -> np.ndarray:
        """Pack as [x, z, pitch, vx, vz, pitch_rate]."""
        return np.array([self.pos[0], self.pos[1], self.pitch,
                         self.vel[0], self.vel[1], self.pitch_rate])

    @staticmethod
    def from_vector(x: np.ndarray) -> "RobotState":
        x = np.asarray(x, dtype=float).reshape(6)
        return RobotState(pos=x[0:2], pitch=float(x[2]), vel=x[3:5], pitch_rate=float(x[5]))

    @property
    def twist(self) -> np.ndarray:
        """[vx, vz, pitch_rate]."""
        return np.array([self.vel[0], self.vel[1], self.pitch_rate])


@dataclass(frozen=True)
class BallState:
    """Ball position and velocity in the x-z plane."""

    pos: np.ndarray  # (2,) m
    vel: np.ndarray = None  # (2,) m/s

    def __post_init__(self):
        object.__setattr__(self, "pos", np.asarray(self.pos, dtype=float).reshape(2))
        vel = np.zeros(2) if self.vel is None else np.asarray(self.vel, dtype=float).reshape(2)
        object.__setattr__(self, "vel", vel)
        if not (np.all(np.isfinite(self.pos)) and np.all(np.isfinite(self.vel))):
            raise ValueError("BallState entries must be finite")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.pos, self.vel])


@dataclass(frozen=True)
class GrfPair:
    """Ground reaction forces applied at the front and rear feet."""

    f_front: np.ndarray  # (2,) N
    f_rear: np.ndarray   # (2,) N

    def __post_init__(self):
        object.__setattr__(self, "f_front", np.asarray(self.f_front, dtype=float).reshape(2))
        object.__setattr__(self, "f_rear", np.asarray(self.f_rear, dtype=float).reshape(2))
        if not (np.all(np.isfinite(self.f_front)) and np.all(np.isfinite(self.f_rear))):
            raise ValueError("GrfPair entries must be finite")

    def as_vector(self) -> np.ndarray:
        """Pack as [ffx, ffz, frx, frz]."""
        return np.concatenate([self.f_front, self.f_rear])

    @staticmethod
    def from_vector(u: np.ndarray) -> "GrfPair":
        u = np.asarray(u, dtype=float).reshape(4)
        return GrfPair(f_front=u[0:2], f_rear=u[2:4])


@dataclass(frozen=True)
class FootGeometry:
    """World-frame foot positions; fixed while the feet are in stance."""

    p_front_world: np.ndarray  # (2,) m
    p_rear_world: np.ndarray   # (2,) m

    def __post_init__(self):
        object.__setattr__(self, "p_front_world",
                           np.asarray(self.p_front_world, dtype=float).reshape(2))
        object.__setattr__(self, "p_rear_world",
                           np.asarray(self.p_rear_world, dtype=float).reshape(2))


@dataclass(frozen=True)
class CollisionConfig:
    """Where on the torso back the ball is struck, and at what pitch.

    ``l_h`` is the tangential offset of the contact point from the COM along
    the torso axis; ``theta_h`` is the torso pitch at the hit instant.
    """

    l_h: float = 0.0
    theta_h: float = 0.0


# ---------------------------------------------------------------------------
# Rigid-body stance dynamics
# ---------------------------------------------------------------------------

def srbm_derivative(state: RobotState, grf: GrfPair, feet: FootGeometry,
                    params: PhysParams) -> np.ndarray:
    """Time derivative of the 6-vector torso state under foot forces.

    Returns [vx, vz, pitch_rate, ax, az, pitch_accel] with lever arms taken
    from the COM to the world-frame foot positions.
    """
    return _derivative_vec(state.as_vector(), grf.as_vector(), feet, params)


def _derivative_vec(x: np.ndarray, u: np.ndarray, feet: FootGeometry,
                    params: PhysParams) -> np.ndarray:
    r_f = feet.p_front_world - x[0:2]
    r_r = feet.p_rear_world - x[0:2]
    f_f, f_r = u[0:2], u[2:4]
    out = np.empty(6)
    out[0:3] = x[3:6]
    out[3:5] = (f_f + f_r) / params.m + params.gvec
    out[5] = (cross2(r_f, f_f) + cross2(r_r, f_r)) / params.I
    return out


def integrate_step(state: RobotState, grf: GrfPair, feet: FootGeometry,
                   params: PhysParams, dt: float, scheme: str = "rk4") -> RobotState:
    """One discrete step of the stance dynamics.

    ``euler`` matches the planner transcription exactly; ``rk4`` is the
    simulator's higher-accuracy scheme.  Forces and foot positions are held
    constant over the step.
    """
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    x = state.as_vector()
    u = grf.as_vector()
    if scheme == "euler":
        x_next = x + dt * _derivative_vec(x, u, feet, params)
    elif scheme == "rk4":
        k1 = _derivative_vec(x, u, feet, params)
        k2 = _derivative_vec(x + 0.5 * dt * k1, u, feet, params)
        k3 = _derivative_vec(x + 0.5 * dt * k2, u, feet, params)
        k4 = _derivative_vec(x + dt * k3, u, feet, params)
        x_next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    else:
        raise ValueError(f"unknown integration scheme {scheme!r}")
    return RobotState.from_vector(x_next)


# ---------------------------------------------------------------------------
# Ballistic propagation
# ---------------------------------------------------------------------------

def ballistic_propagate_ball(b0: BallState, t: float, params: PhysParams) -> BallState:
    """Propagate the ball along its drag-free parabola for duration ``t``."""
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    g = params.gvec
    return BallState(pos=b0.pos + b0.vel * t + 0.5 * g * t * t, vel=b0.vel + g * t)


def ballistic_propagate_torso(q0: RobotState, t: float, params: PhysParams) -> RobotState:
    """Free-flight torso: parabolic COM, constant pitch rate."""
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    g = params.gvec
    return RobotState(pos=q0.pos + q0.vel * t + 0.5 * g * t * t,
                      pitch=q0.pitch + q0.pitch_rate * t,
                      vel=q0.vel + g * t,
                      pitch_rate=q0.pitch_rate)


def hit_state_from_takeoff(q_takeoff: RobotState, dt_flight: float,
                           params: PhysParams) -> RobotState:
    """Torso state at the hit induced from the takeoff state.

    Named mapping for the planner's flight-consistency constraint; identical
    to :func:`ballistic_propagate_torso`.
    """
    return ballistic_propagate_torso(q_takeoff, dt_flight, params)


# ---------------------------------------------------------------------------
# Collision model
# ---------------------------------------------------------------------------

def contact_point_velocity(q_hit: RobotState, cfg: CollisionConfig,
                           params: PhysParams) -> np.ndarray:
    """World-frame velocity of the torso contact point at the hit instant.

    v_p = vel + pitch_rate * R(theta_h) @ [r_h_offset, l_h].
    """
    lever = np.array([params.r_h_offset, cfg.l_h])
    return q_hit.vel + q_hit.pitch_rate * (rot2(cfg.theta_h) @ lever)


def collision_post_velocity(ball_pre: np.ndarray, q_hit: RobotState,
                            cfg: CollisionConfig, params: PhysParams) -> np.ndarray:
    """Ball velocity just after the torso strike.

    In the hit frame (rotated by theta_h) the tangential component is
    preserved and the normal component obeys the restitution law
    n_out = -e * n_in + e * (v_p . n).  The torso state is unchanged.
    """
    R = rot2(cfg.theta_h)
    v_p = contact_point_velocity(q_hit, cfg, params)
    ball_local = R.T @ np.asarray(ball_pre, dtype=float)
    vp_local = R.T @ v_p
    out_local = np.array([ball_local[0],
                          -params.e * ball_local[1] + params.e * vp_local[1]])
    return R @ out_local


# ---------------------------------------------------------------------------
# Landing of the ball
# ---------------------------------------------------------------------------

def landing_time(ball_post_pos: np.ndarray, ball_post_vel: np.ndarray, t_h: float,
                 ground_z: float, params: PhysParams) -> float:
    """Absolute time at which the post-hit parabola descends through ``ground_z``.

    Returns the later (descending-branch) root; raises
    :class:`BallNeverLandsError` when the arc stays below the requested
    height for all future times (apex under the plane).
    """
    z, vz = float(ball_post_pos[1]), float(ball_post_vel[1])
    g = params.g
    disc = vz * vz - 2.0 * g * (z - ground_z)
    if disc < 0:
        raise BallNeverLandsError(
            f"ball never reaches ground height {ground_z} (apex below plane)")
    return t_h + (vz + np.sqrt(disc)) / (-g)


def landing_point(t_h: float, ball0: BallState, hit_twist: np.ndarray,
                  cfg: CollisionConfig, params: PhysParams,
                  plane_z: float = None) -> np.ndarray:
    """Ball landing point given a hit at time ``t_h`` after the ball epoch.

    Composes the free fall of the ball to the hit, the restitution map with
    the torso twist ``hit_twist`` = [vx, vz, pitch_rate], and the descent to
    the landing plane (``params.ground_z`` unless ``plane_z`` is given).
    The returned z component equals the plane height by construction.
    """
    if plane_z is None:
        plane_z = params.ground_z
    hit_twist = np.asarray(hit_twist, dtype=float).reshape(3)
    b_hit = ballistic_propagate_ball(ball0, t_h, params)
    q_hit = RobotState(pos=np.zeros(2), pitch=cfg.theta_h,
                       vel=hit_twist[0:2], pitch_rate=hit_twist[2])
    v_post = collision_post_velocity(b_hit.vel, q_hit, cfg, params)
    t_e = landing_time(b_hit.pos, v_post, t_h, plane_z, params)
    tau = t_e - t_h
    return b_hit.pos + v_post * tau + 0.5 * params.gvec * tau * tau


def contact_geometry_constraint(q_hit: RobotState, ball_at_hit: np.ndarray,
                                cfg: CollisionConfig, params: PhysParams) -> np.ndarray:
    """Residual pinning the ball onto the torso contact point at the hit.

    Rows: COM + R(theta_h) @ [l_h, r_h_offset] - ball position (2), and
    pitch - theta_h (1).  Zero residual means the ball sits exactly on the
    collision point with the torso at the specified pitch.
    """
    offset = np.array([cfg.l_h, params.r_h_offset])
    res = np.empty(3)
    res[0:2] = q_hit.pos + rot2(cfg.theta_h) @ offset - np.asarray(ball_at_hit, dtype=float)
    res[2] = q_hit.pitch - cfg.theta_h
    return res


def torso_energy(state: RobotState, params: PhysParams) -> float:
    """Mechanical energy of the free-flying torso (kinetic + gravitational)."""
    v2 = float(state.vel @ state.vel)
    return (0.5 * params.m * v2 + 0.5 * params.I * state.pitch_rate ** 2
            + params.m * abs(params.g) * state.pos[1])
