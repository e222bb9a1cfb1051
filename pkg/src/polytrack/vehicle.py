"""Lateral-error vehicle dynamics and the polytopic LPV model.

The continuous-time single-track error dynamics are linear in the state
(e_y, e_y_dot, e_psi, e_psi_dot) for a frozen longitudinal speed v_x.  The
entries depend affinely on theta1 = 1/v_x; the curvature-disturbance column
additionally depends on theta2 = v_x.  Embedding (theta1, theta2) in the box
[1/v_max, 1/v_min] x [v_min, v_max] (a conservative cover of the hyperbola
theta1*theta2 = 1) and, optionally, the cornering stiffnesses in their
uncertainty intervals yields a polytope of 4 or 16 vertex systems whose
convex hull contains every admissible plant.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger("polytrack.vehicle")

NX = 4  # error-state dimension


class InvalidParameterError(ValueError):
    """A physical parameter violates its admissible range."""


@dataclass(frozen=True)
class VehicleParams:
    """Single-track parameters with cornering-stiffness uncertainty bounds.

    Cf and Cr are per-axle nominal cornering stiffnesses divided by two,
    i.e. the dynamics use axle forces 2*Cf*alpha_f and 2*Cr*alpha_r.  dCf
    and dCr are fractional half-widths of the stiffness intervals
    [Cf*(1-dCf), Cf*(1+dCf)] and likewise for the rear.
    """

    m: float = 1500.0          # mass, kg
    Iz: float = 2500.0         # yaw inertia, kg m^2
    lf: float = 1.2            # CoG to front axle, m
    lr: float = 1.4            # CoG to rear axle, m
    Cf: float = 80000.0        # front cornering stiffness, N/rad
    Cr: float = 80000.0        # rear cornering stiffness, N/rad
    dCf: float = 0.2           # fractional front stiffness uncertainty
    dCr: float = 0.2           # fractional rear stiffness uncertainty
    delta_max: float = 0.5     # steering angle limit, rad
    delta_rate_max: float = 1.0  # steering rate limit, rad/s

    def __post_init__(self):
        for name in ("m", "Iz", "lf", "lr", "Cf", "Cr", "delta_max"):
            if not getattr(self, name) > 0.0:
                raise InvalidParameterError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("dCf", "dCr"):
            val = getattr(self, name)
            if not 0.0 <= val < 1.0:
                raise InvalidParameterError(f"{name} must lie in [0, 1), got {val}")
        if not self.delta_rate_max > 0.0:
            raise InvalidParameterError("delta_rate_max must be positive")

    @property
    def wheelbase(self):
        return self.lf + self.lr


def wrap_angle(angle):
    """Wrap an angle to (-pi, pi]."""
    wrapped = -((-angle + math.pi) % (2.0 * math.pi) - math.pi)
    return wrapped


@dataclass
class ErrorState:
    """Lateral path-tracking error state.

    e_y is the signed lateral offset (positive to the left of the path),
    e_psi the heading error against the path tangent, wrapped to (-pi, pi].
    """

    e_y: float = 0.0
    e_y_dot: float = 0.0
    e_psi: float = 0.0
    e_psi_dot: float = 0.0

    def __post_init__(self):
        vec = (self.e_y, self.e_y_dot, self.e_psi, self.e_psi_dot)
        if not all(math.isfinite(v) for v in vec):
            raise InvalidParameterError(f"error state must be finite, got {vec}")
        self.e_psi = wrap_angle(self.e_psi)

    def as_array(self):
        return np.array([self.e_y, self.e_y_dot, self.e_psi, self.e_psi_dot])

    @classmethod
    def from_array(cls, x):
        x = np.asarray(x, dtype=float).reshape(NX)
        return cls(*x)


def as_error_vector(x):
    """Coerce an ErrorState or a length-4 array to a flat ndarray."""
    if isinstance(x, ErrorState):
        return x.as_array()
    return np.asarray(x, dtype=float).reshape(NX)


@dataclass(frozen=True)
class SchedulingPoint:
    """A speed sample with its scheduling coordinates theta1 = 1/v, theta2 = v."""

    v_x: float
    theta1: float
    theta2: float

    @classmethod
    def from_speed(cls, v_x):
        if not v_x > 0.0:
            raise InvalidParameterError(f"speed must be positive, got {v_x}")
        return cls(v_x=v_x, theta1=1.0 / v_x, theta2=v_x)


def _error_dynamics_theta(params, theta1, theta2, Cf, Cr):
    """Continuous error dynamics at independent scheduling coordinates.

    Used for vertex enumeration, where (theta1, theta2) range over box
    corners and are not tied by theta1*theta2 = 1.  A_c and B_c depend on
    theta1 only; the curvature column mixes both coordinates.
    """
    m, Iz, lf, lr = params.m, params.Iz, params.lf, params.lr
    c0 = 2.0 * Cf + 2.0 * Cr
    c1 = -2.0 * Cf * lf + 2.0 * Cr * lr
    c2 = 2.0 * Cf * lf ** 2 + 2.0 * Cr * lr ** 2

    A_c = np.array([
        [0.0, 1.0, 0.0, 0.0],
        [0.0, -c0 / m * theta1, c0 / m, c1 / m * theta1],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, c1 / Iz * theta1, -c1 / Iz, -c2 / Iz * theta1],
    ])
    B_c = np.array([[0.0], [2.0 * Cf / m], [0.0], [2.0 * Cf * lf / Iz]])
    # column multiplying the desired yaw rate psi_dot_des = v_x * kappa
    B_kappa = np.array([[0.0], [c1 / m * theta1 - theta2], [0.0], [-c2 / Iz * theta1]])
    return A_c, B_c, B_kappa


def build_error_dynamics(params, v_x, Cf_eff=None, Cr_eff=None):
    """Continuous-time lateral-error dynamics at speed v_x.

    Returns (A_c, B_c, B_kappa): the 4x4 state matrix, the 4x1 steering
    input column, and the 4x1 column multiplying the desired yaw rate
    v_x * kappa_ref of the reference path.

    Rows 1 and 3 are the integrator rows [0,1,0,0] and [0,0,0,1]; the
    remaining entries are the standard closed forms, e.g.
    A_c[1][1] = -(2Cf + 2Cr) / (m v_x).
    """
    if not v_x > 0.0:
        raise InvalidParameterError(f"speed must be positive, got {v_x}")
    Cf = params.Cf if Cf_eff is None else Cf_eff
    Cr = params.Cr if Cr_eff is None else Cr_eff
    if not (Cf > 0.0 and Cr > 0.0):
        raise InvalidParameterError(f"stiffnesses must be positive, got {Cf}, {Cr}")
    return _error_dynamics_theta(params, 1.0 / v_x, v_x, Cf, Cr)


def discretize_euler(A_c, B_c, B_kappa, Ts):
    """Forward-Euler discretization: A_d = I + Ts*A_c, B_d = Ts*B_c.

    Euler (rather than zero-order hold) preserves the affine dependence of
    the matrices on the scheduling parameters, so the discrete vertex
    polytope reconstructs interior models exactly.  The O(Ts^2) local error
    is guarded by a step-halving test against the matrix exponential.
    """
    if not Ts > 0.0:
        raise InvalidParameterError(f"sampling period must be positive, got {Ts}")
    A_d = np.eye(A_c.shape[0]) + Ts * A_c
    return A_d, Ts * B_c, Ts * B_kappa


def box_corners(v_range):
    """The four (theta1, theta2) corners of the scheduling box, theta1-major.

    Order: (th1_lo, th2_lo), (th1_lo, th2_hi), (th1_hi, th2_lo),
    (th1_hi, th2_hi) with th1_lo = 1/v_max and th2_lo = v_min.
    """
    v_min, v_max = v_range
    if not 0.0 < v_min <= v_max:
        raise InvalidParameterError(f"need 0 < v_min <= v_max, got {v_range}")
    th1 = (1.0 / v_max, 1.0 / v_min)
    th2 = (v_min, v_max)
    return [(t1, t2) for t1 in th1 for t2 in th2]


def stiffness_corners(params):
    """The four (Cf, Cr) interval corners, Cf-major: (-,-), (-,+), (+,-), (+,+)."""
    cf = (params.Cf * (1.0 - params.dCf), params.Cf * (1.0 + params.dCf))
    cr = (params.Cr * (1.0 - params.dCr), params.Cr * (1.0 + params.dCr))
    return [(f, r) for f in cf for r in cr]


def scheduling_weights(v_x, v_range):
    """Bilinear interpolation weights over the scheduling-box corners.

    The weights are the tensor product of the 1-D interpolations in theta1
    and theta2, ordered like box_corners.  They are nonnegative, sum to 1,
    and reproduce the model at v_x exactly because A_c, B_c are affine in
    theta1 and B_kappa is affine in (theta1, theta2).

    Speeds outside [v_min, v_max] are clamped with a warning; in closed loop
    the supervisor keeps v_x in range.
    """
    v_min, v_max = v_range
    if not 0.0 < v_min <= v_max:
        raise InvalidParameterError(f"need 0 < v_min <= v_max, got {v_range}")
    if v_x < v_min or v_x > v_max:
        log.warning("speed %.3f outside scheduling range [%.3f, %.3f]; clamping",
                    v_x, v_min, v_max)
        v_x = min(max(v_x, v_min), v_max)
    th1_lo, th1_hi = 1.0 / v_max, 1.0 / v_min
    th2_lo, th2_hi = v_min, v_max
    if th1_hi > th1_lo:
        a = (1.0 / v_x - th1_lo) / (th1_hi - th1_lo)
    else:
        a = 0.0
    if th2_hi > th2_lo:
        b = (v_x - th2_lo) / (th2_hi - th2_lo)
    else:
        b = 0.0
    w = np.array([(1.0 - a) * (1.0 - b), (1.0 - a) * b, a * (1.0 - b), a * b])
    return w


# default worst-case lateral wind force represented by a unit disturbance
DEFAULT_WIND_FORCE = 1500.0


@dataclass(frozen=True)
class PolytopicModel:
    """Discrete-time vertex systems covering the LPV/uncertainty envelope.

    vertices[i] = (A_i, B_i); b_kappa[i] is the matching curvature column
    (input: desired yaw rate).  E_w maps a unit-magnitude disturbance signal
    to the state; by default one unit represents `wind_force` newtons of
    lateral force at the CoG, so E_w = Ts * [0, F_w/m, 0, 0]^T.

    Vertex order is deterministic: theta-major (box_corners order),
    stiffness-minor (stiffness_corners order).
    """

    vertices: tuple
    b_kappa: tuple
    E_w: np.ndarray
    Ts: float
    v_range: tuple
    uncertainty_enabled: bool
    params: VehicleParams
    wind_force: float = DEFAULT_WIND_FORCE

    @property
    def n_vertices(self):
        return len(self.vertices)

    def distinct_vertices(self):
        """Unique (A_i, B_i) pairs, preserving first-occurrence order.

        theta2 does not enter A or B, so the 4 scheduling corners carry at
        most 2 distinct pairs; LMI constraints over duplicates are redundant
        and may safely be deduplicated.
        """
        seen = []
        for A, B in self.vertices:
            if not any(np.array_equal(A, A2) and np.array_equal(B, B2) for A2, B2 in seen):
                seen.append((A, B))
        return seen

    def evaluate(self, v_x):
        """Interpolated (A_d, B_d, B_kappa_d) at speed v_x via the vertex hull."""
        w = scheduling_weights(v_x, self.v_range)
        # stiffness corners at a common theta corner share the scheduling weight
        if self.uncertainty_enabled:
            full = np.repeat(w, 4) / 4.0
        else:
            full = w
        A = sum(wi * V[0] for wi, V in zip(full, self.vertices))
        B = sum(wi * V[1] for wi, V in zip(full, self.vertices))
        Bk = sum(wi * bk for wi, bk in zip(full, self.b_kappa))
        return A, B, Bk


def build_polytope(params, v_range, Ts, uncertainty_enabled=True,
                   wind_force=DEFAULT_WIND_FORCE):
    """Enumerate and discretize the vertex systems of the LPV envelope.

    4 vertices at the scheduling-box corners; 16 when stiffness uncertainty
    is enabled (4 box corners x 4 stiffness corners, theta-major order).
    """
    corners = box_corners(v_range)
    if uncertainty_enabled:
        stiff = stiffness_corners(params)
    else:
        stiff = [(params.Cf, params.Cr)]
    vertices = []
    b_kappa = []
    for th1, th2 in corners:
        for cf, cr in stiff:
            A_c, B_c, Bk_c = _error_dynamics_theta(params, th1, th2, cf, cr)
            A_d, B_d, Bk_d = discretize_euler(A_c, B_c, Bk_c, Ts)
            vertices.append((A_d, B_d))
            b_kappa.append(Bk_d)
    E_w = Ts * np.array([[0.0], [wind_force / params.m], [0.0], [0.0]])
    return PolytopicModel(
        vertices=tuple(vertices),
        b_kappa=tuple(b_kappa),
        E_w=E_w,
        Ts=Ts,
        v_range=(float(v_range[0]), float(v_range[1])),
        uncertainty_enabled=uncertainty_enabled,
        params=params,
        wind_force=wind_force,
    )
