"""Closed-loop simulation: global-frame single-track plant, error projection,
longitudinal speed tracking, disturbance injection, episode runner, metrics.

The true plant is richer than the controller's error model: the dynamic
single-track with linear tires at (possibly perturbed) stiffness, integrated
with RK4 in the global frame, plus the projection nonlinearity onto the
reference path.  The perturbation stays inside the declared uncertainty set,
which is exactly the mismatch the robust designs are supposed to absorb.
"""

from __future__ import annotations

import hashlib
import io
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .mpc import ControllerFailureError, StepDiag
from .paths import (ArcSpec, DoubleLaneChangeSpec, ReferencePath, SineSpec,
                    StraightSpec, generate_path)
from .vehicle import DEFAULT_WIND_FORCE, ErrorState, wrap_angle

log = logging.getLogger("polytrack.sim")

OFF_PATH_LIMIT = 20.0  # m; beyond this the episode fails

# longitudinal PI defaults: ~0.25 s time constant, zero lag on ramps
LON_KP = 4.0
LON_KI = 1.0
AX_MIN, AX_MAX = -4.0, 3.0


class OffPathError(RuntimeError):
    """Vehicle left the corridor around the reference path."""


class PlantAbortError(RuntimeError):
    """Plant integration became invalid (speed underflow)."""


@dataclass
class PlantState:
    """Global-frame single-track state."""

    X: float = 0.0
    Y: float = 0.0
    psi: float = 0.0
    v_x: float = 15.0
    v_y: float = 0.0
    r: float = 0.0

    def as_array(self):
        return np.array([self.X, self.Y, self.psi, self.v_x, self.v_y, self.r])

    @classmethod
    def from_array(cls, arr):
        return cls(*np.asarray(arr, dtype=float).reshape(6))


# --- speed profiles ---------------------------------------------------------

@dataclass(frozen=True)
class ConstantSpeed:
    v: float = 15.0

    def __call__(self, t):
        return self.v

    @property
    def v_max(self):
        return self.v


@dataclass(frozen=True)
class RampSpeed:
    v0: float = 5.0
    v1: float = 25.0
    duration: float = 20.0

    def __call__(self, t):
        frac = min(max(t / self.duration, 0.0), 1.0)
        return self.v0 + (self.v1 - self.v0) * frac

    @property
    def v_max(self):
        return max(self.v0, self.v1)


@dataclass(frozen=True)
class SineSpeed:
    v_mean: float = 15.0
    amplitude: float = 5.0
    period: float = 10.0

    def __call__(self, t):
        return self.v_mean + self.amplitude * math.sin(2.0 * math.pi * t / self.period)

    @property
    def v_max(self):
        return self.v_mean + abs(self.amplitude)


# --- disturbances -----------------------------------------------------------

@dataclass(frozen=True)
class NoDisturbance:
    def force(self, t, rng, wind_force):
        return 0.0


@dataclass(frozen=True)
class GustDisturbance:
    """Rectangular lateral gust, magnitude as a fraction of the design force."""

    start: float = 2.0
    duration: float = 1.0
    fraction: float = 0.8

    def force(self, t, rng, wind_force):
        if self.start <= t < self.start + self.duration:
            return self.fraction * wind_force
        return 0.0


@dataclass(frozen=True)
class RandomDisturbance:
    """Bounded uniform force per step; seeded via the episode RNG."""

    fraction: float = 0.5
    seed: int | None = None

    def force(self, t, rng, wind_force):
        return float(rng.uniform(-1.0, 1.0)) * self.fraction * wind_force


@dataclass(frozen=True)
class Scenario:
    """Everything one episode needs apart from the controller."""

    path: object = field(default_factory=StraightSpec)
    speed: object = field(default_factory=ConstantSpeed)
    disturbance: object = field(default_factory=NoDisturbance)
    cf_scale: float = 1.0
    cr_scale: float = 1.0
    duration: float = 20.0
    initial_offset: float = 0.0
    initial_heading_error: float = 0.0
    name: str = "scenario"
    # controller parametrization: override the MPC disturbance bound for this
    # scenario (negative = inherit the [mpc] setting)
    mpc_w_max: float = -1.0

    def validate(self, params, v_range):
        v_min, v_max = v_range
        for t in np.linspace(0.0, self.duration, 101):
            v = self.speed(t)
            if not v_min - 1e-9 <= v <= v_max + 1e-9:
                raise ValueError(
                    f"scenario {self.name}: speed profile leaves "
                    f"[{v_min}, {v_max}] at t={t:.2f} (v={v:.3f})")
        lo_f, hi_f = 1.0 - params.dCf, 1.0 + params.dCf
        lo_r, hi_r = 1.0 - params.dCr, 1.0 + params.dCr
        if not (lo_f - 1e-12 <= self.cf_scale <= hi_f + 1e-12):
            raise ValueError(f"cf_scale {self.cf_scale} outside [{lo_f}, {hi_f}]")
        if not (lo_r - 1e-12 <= self.cr_scale <= hi_r + 1e-12):
            raise ValueError(f"cr_scale {self.cr_scale} outside [{lo_r}, {hi_r}]")
        return self


# --- plant ------------------------------------------------------------------

def _plant_rhs(state, delta, a_x, w_force, p):
    X, Y, psi, v_x, v_y, r = state
    alpha_f = delta - (v_y + p.lf * r) / v_x
    alpha_r = -(v_y - p.lr * r) / v_x
    F_yf = 2.0 * p.Cf * alpha_f
    F_yr = 2.0 * p.Cr * alpha_r
    return np.array([
        v_x * math.cos(psi) - v_y * math.sin(psi),
        v_x * math.sin(psi) + v_y * math.cos(psi),
        r,
        a_x,
        (F_yf + F_yr + w_force) / p.m - v_x * r,
        (p.lf * F_yf - p.lr * F_yr) / p.Iz,
    ])


def plant_step(state, delta, a_x, w_force, true_params, Ts):
    """One RK4 step of the dynamic single-track model with linear tires.

    true_params carries the (possibly perturbed) stiffness actually acting
    on the vehicle.  Steering and acceleration are held over the step.
    """
    s = state.as_array()
    if s[3] <= 0.5:
        raise PlantAbortError(f"longitudinal speed underflow: v_x={s[3]:.3f}")
    k1 = _plant_rhs(s, delta, a_x, w_force, true_params)
    k2 = _plant_rhs(s + 0.5 * Ts * k1, delta, a_x, w_force, true_params)
    k3 = _plant_rhs(s + 0.5 * Ts * k2, delta, a_x, w_force, true_params)
    k4 = _plant_rhs(s + Ts * k3, delta, a_x, w_force, true_params)
    out = s + Ts / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise PlantAbortError("plant state became non-finite")
    return PlantState.from_array(out)


# --- projection -------------------------------------------------------------

def project_error(state, path):
    """Project the pose onto the path; return (ErrorState, kappa_ref, s*).

    The foot point is the exact orthogonal projection onto the sampled
    polyline (nearest vertex, then its adjacent segments), so reconstructing
    the global position from (s*, e_y) is exact.  e_y is positive to the
    left of the path; e_psi uses the interpolated heading.
    """
    px = np.asarray(path.X)
    py = np.asarray(path.Y)
    dx = state.X - px
    dy = state.Y - py
    i = int(np.argmin(dx * dx + dy * dy))

    best = None
    for j in (i - 1, i):
        if j < 0 or j + 1 >= len(px):
            continue
        ex, ey = px[j + 1] - px[j], py[j + 1] - py[j]
        seg2 = ex * ex + ey * ey
        t = ((state.X - px[j]) * ex + (state.Y - py[j]) * ey) / seg2
        t = min(max(t, 0.0), 1.0)
        fx, fy = px[j] + t * ex, py[j] + t * ey
        d2 = (state.X - fx) ** 2 + (state.Y - fy) ** 2
        if best is None or d2 < best[0]:
            best = (d2, j, t, fx, fy, ex, ey)
    if best is None:  # single-sample path
        raise OffPathError("path too short to project onto")
    d2, j, t, fx, fy, ex, ey = best

    seg_len = math.hypot(ex, ey)
    # signed offset via the segment's left normal
    e_y = (-(state.X - fx) * ey + (state.Y - fy) * ex) / seg_len
    if math.sqrt(d2) > OFF_PATH_LIMIT:
        raise OffPathError(
            f"vehicle {math.sqrt(d2):.2f} m from path (limit {OFF_PATH_LIMIT} m)")

    s_star = path.s[j] + t * (path.s[j + 1] - path.s[j])
    dh = wrap_angle(path.heading[j + 1] - path.heading[j])
    heading = path.heading[j] + t * dh
    kappa_ref = path.kappa[j] + t * (path.kappa[j + 1] - path.kappa[j])

    e_psi = wrap_angle(state.psi - heading)
    err = ErrorState(
        e_y=e_y,
        e_y_dot=state.v_y + state.v_x * e_psi,
        e_psi=e_psi,
        e_psi_dot=state.r - state.v_x * kappa_ref,
    )
    return err, float(kappa_ref), float(s_star)


def reconstruct_position(path, s_star, e_y):
    """Inverse of the projection: global (X, Y) from (s*, e_y)."""
    j = int(np.searchsorted(path.s, s_star, side="right") - 1)
    j = min(max(j, 0), len(path.s) - 2)
    span = path.s[j + 1] - path.s[j]
    t = (s_star - path.s[j]) / span
    ex, ey = path.X[j + 1] - path.X[j], path.Y[j + 1] - path.Y[j]
    seg_len = math.hypot(ex, ey)
    fx = path.X[j] + t * ex
    fy = path.Y[j] + t * ey
    return fx - e_y * ey / seg_len, fy + e_y * ex / seg_len


# --- longitudinal control ---------------------------------------------------

def longitudinal_step(v_x, v_ref, integrator, Ts, kp=LON_KP, ki=LON_KI):
    """PI speed tracking with clamped anti-windup integrator."""
    err = v_ref - v_x
    integrator = integrator + err * Ts
    if ki > 0.0:
        integrator = min(max(integrator, AX_MIN / ki), AX_MAX / ki)
    a_x = kp * err + ki * integrator
    return min(max(a_x, AX_MIN), AX_MAX), integrator


# --- episode log ------------------------------------------------------------

CSV_COLUMNS = ("t", "X", "Y", "psi", "v_x", "v_y", "r", "e_y", "e_y_dot",
               "e_psi", "e_psi_dot", "delta", "a_x", "mode", "gamma",
               "status", "w")


@dataclass
class SimLog:
    """Fixed-step per-episode record; one row per sample time."""

    t: list = field(default_factory=list)
    plant: list = field(default_factory=list)       # PlantState
    error: list = field(default_factory=list)       # ErrorState
    delta: list = field(default_factory=list)
    a_x: list = field(default_factory=list)
    mode: list = field(default_factory=list)
    gamma: list = field(default_factory=list)
    status: list = field(default_factory=list)
    w: list = field(default_factory=list)
    diags: list = field(default_factory=list)       # StepDiag
    seed: int = 0
    config_hash: str = ""
    failed: bool = False
    failure_reason: str = ""

    def records(self):
        return len(self.t)

    def e_y(self):
        return np.array([e.e_y for e in self.error])

    def e_psi(self):
        return np.array([e.e_psi for e in self.error])

    def to_csv(self):
        """Serialize with 9 significant digits; one header row."""
        buf = io.StringIO()
        buf.write(",".join(CSV_COLUMNS) + "\n")
        for k in range(self.records()):
            p = self.plant[k]
            e = self.error[k]
            vals = [self.t[k], p.X, p.Y, p.psi, p.v_x, p.v_y, p.r,
                    e.e_y, e.e_y_dot, e.e_psi, e.e_psi_dot,
                    self.delta[k], self.a_x[k]]
            row = [f"{v:.9g}" for v in vals]
            row.append(str(self.mode[k]))
            g = self.gamma[k]
            row.append("" if g is None or math.isnan(g) else f"{g:.9g}")
            row.append(self.status[k])
            row.append(f"{self.w[k]:.9g}")
            buf.write(",".join(row) + "\n")
        return buf.getvalue()

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


# --- episode runner ---------------------------------------------------------

def initial_plant_state(path, scenario):
    """Pose at the path start, offset by the scenario's initial errors.

    Starts at the on-path cornering equilibrium (r = v * kappa) so a
    zero-error start stays a zero-error trajectory on any path.
    """
    v0 = scenario.speed(0.0)
    heading = float(path.heading[0])
    nx, ny = -math.sin(heading), math.cos(heading)
    return PlantState(
        X=float(path.X[0]) + scenario.initial_offset * nx,
        Y=float(path.Y[0]) + scenario.initial_offset * ny,
        psi=heading + scenario.initial_heading_error,
        v_x=v0,
        v_y=0.0,
        r=v0 * float(path.kappa[0]),
    )


def run_closed_loop(scenario, controller, seed=0, Ts=None, config_hash=""):
    """Deterministic fixed-step closed loop; returns the episode log.

    Controllers expose .step(error, kappa_ref, v_x) -> (delta, StepDiag),
    .params and .Ts.  Controller failure or leaving the path corridor
    truncates the log and sets the failure flag.
    """
    params = controller.params
    Ts = Ts or controller.Ts
    true_params = replace(params,
                          Cf=params.Cf * scenario.cf_scale,
                          Cr=params.Cr * scenario.cr_scale)
    path = generate_path(scenario.path)
    rng = np.random.default_rng(
        seed if getattr(scenario.disturbance, "seed", None) is None
        else scenario.disturbance.seed)
    n_steps = int(round(scenario.duration / Ts))
    state = initial_plant_state(path, scenario)
    integrator = 0.0
    delta_prev = 0.0
    logbook = SimLog(seed=seed, config_hash=config_hash)

    for k in range(n_steps + 1):
        t = k * Ts
        try:
            err, kappa_ref, _ = project_error(state, path)
            delta_cmd, diag = controller.step(err, kappa_ref, state.v_x)
        except (OffPathError, ControllerFailureError) as exc:
            logbook.failed = True
            logbook.failure_reason = f"{type(exc).__name__}: {exc}"
            log.warning("episode failed at t=%.2f: %s", t, exc)
            break
        # steering actuator: rate and angle limits
        rate = params.delta_rate_max * Ts
        delta = min(max(delta_cmd, delta_prev - rate), delta_prev + rate)
        delta = min(max(delta, -params.delta_max), params.delta_max)
        a_x, integrator = longitudinal_step(state.v_x, scenario.speed(t),
                                            integrator, Ts)
        w_force = scenario.disturbance.force(t, rng, DEFAULT_WIND_FORCE)

        logbook.t.append(t)
        logbook.plant.append(state)
        logbook.error.append(err)
        logbook.delta.append(delta)
        logbook.a_x.append(a_x)
        logbook.mode.append(diag.mode)
        logbook.gamma.append(diag.gamma)
        logbook.status.append(diag.status)
        logbook.w.append(w_force)
        logbook.diags.append(diag)

        if k == n_steps:
            break
        delta_prev = delta
        try:
            state = plant_step(state, delta, a_x, w_force, true_params, Ts)
        except PlantAbortError as exc:
            logbook.failed = True
            logbook.failure_reason = f"PlantAbortError: {exc}"
            log.warning("episode aborted at t=%.2f: %s", t, exc)
            break
    return logbook


def metrics(log_):
    """Summary metrics of one episode."""
    if log_.records() == 0:
        return {"rms_ey": math.nan, "max_ey": math.nan, "rms_epsi": math.nan,
                "max_delta": math.nan, "control_energy": math.nan,
                "switch_count": 0, "infeasible_steps": 0, "failed": True}
    e_y = log_.e_y()
    e_psi = log_.e_psi()
    delta = np.asarray(log_.delta)
    Ts = log_.t[1] - log_.t[0] if log_.records() > 1 else 0.0
    modes = [m for m in log_.mode if m >= 0]
    switches = sum(1 for a, b in zip(modes, modes[1:]) if a != b)
    infeasible = sum(1 for s in log_.status if s in ("fallback", "infeasible",
                                                     "numerical-failure",
                                                     "iteration-limit"))
    return {
        "rms_ey": float(np.sqrt(np.mean(e_y ** 2))),
        "max_ey": float(np.abs(e_y).max()),
        "rms_epsi": float(np.sqrt(np.mean(e_psi ** 2))),
        "max_delta": float(np.abs(delta).max()),
        "control_energy": float(np.sum(delta ** 2) * Ts),
        "switch_count": switches,
        "infeasible_steps": infeasible,
        "failed": log_.failed,
    }
