"""Offline switched LPV synthesis and the dwell-time switching supervisor.

The speed range is covered by overlapping regions; each gets its own
Lyapunov shape Q_j and per-corner gain variables certified, vertex by
vertex, for a common decay rate rho under the steering bound.  Because the
same Y variable serves every stiffness corner at a given scheduling corner,
the certified decay extends to the online scheduled gain
K_j(v) = (sum_c w_c Y_jc) Q_j^{-1} for any stiffness in the uncertainty
hull.  Across regions the Lyapunov jump bound mu yields the average-dwell-
time condition dwell >= ln(mu) / ln(1/rho); the supervisor enforces it with
hysteresis switching.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .lmi import (AffineMatrixExpr, SdpProblem, SolveStatus, block_expr,
                  psd_check, solve)
from .mpc import StepDiag, curvature_feedforward
from .vehicle import NX, VehicleParams, as_error_vector, build_polytope, \
    scheduling_weights

log = logging.getLogger("polytrack.switched")

N_CORNERS = 4  # scheduling-box corners per region


class RegionSynthesisError(RuntimeError):
    """Region synthesis failed; carries the binding constraint class."""

    def __init__(self, region_index, rho, binding, status):
        self.region_index = region_index
        self.rho = rho
        self.binding = binding
        self.status = status
        super().__init__(
            f"region {region_index} infeasible at rho={rho} "
            f"(binding: {binding}, status: {status.value})")


@dataclass(frozen=True)
class SpeedRegion:
    index: int
    v_lo: float
    v_hi: float
    hysteresis: float = 1.0

    def __post_init__(self):
        if not self.v_lo < self.v_hi:
            raise ValueError(f"region {self.index}: need v_lo < v_hi")
        if self.hysteresis < 0.0:
            raise ValueError(f"region {self.index}: hysteresis must be >= 0")

    def contains(self, v):
        return self.v_lo <= v <= self.v_hi


def make_regions(v_range, n_regions=3, hysteresis=1.0):
    """Uniform core partition of [v_min, v_max] with the given overlap."""
    v_min, v_max = v_range
    edges = np.linspace(v_min, v_max, n_regions + 1)
    regions = []
    for j in range(n_regions):
        lo = edges[j] - (hysteresis if j > 0 else 0.0)
        regions.append(SpeedRegion(index=j, v_lo=float(lo),
                                   v_hi=float(edges[j + 1]), hysteresis=hysteresis))
    return validate_regions(regions, v_range, hysteresis)


def validate_regions(regions, v_range, hysteresis):
    """Check coverage of the speed range and exact pairwise overlap."""
    v_min, v_max = v_range
    regions = sorted(regions, key=lambda r: r.v_lo)
    if abs(regions[0].v_lo - v_min) > 1e-9 or abs(regions[-1].v_hi - v_max) > 1e-9:
        raise ValueError(f"regions do not span [{v_min}, {v_max}]")
    for a, b in zip(regions, regions[1:]):
        overlap = a.v_hi - b.v_lo
        if abs(overlap - hysteresis) > 1e-9:
            raise ValueError(
                f"regions {a.index}/{b.index} overlap {overlap:.6g} != "
                f"hysteresis {hysteresis:.6g}")
    return regions


DEFAULT_REGIONS = (
    SpeedRegion(0, 5.0, 12.0, 1.0),
    SpeedRegion(1, 11.0, 19.0, 1.0),
    SpeedRegion(2, 18.0, 25.0, 1.0),
)


@dataclass(frozen=True)
class SwitchedSynthConfig:
    """Decay rate and bounds of the per-region synthesis.

    S and R are accepted for interface parity with the MPC weights but the
    per-region channel is pure decay certification; they are unused.
    trace_cap bounds the ellipsoid-volume objective so near-infeasible
    problems stay numerically well posed; it is far from binding at the
    default rho.
    """

    rho: float = 0.985
    u_max: float = 0.5
    Ts: float = 0.01
    uncertainty: bool = True
    trace_cap: float = 1e5
    S: np.ndarray | None = None
    R: float | None = None

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")
        if not self.u_max > 0.0:
            raise ValueError("u_max must be positive")
        if not self.Ts > 0.0:
            raise ValueError("Ts must be positive")
        if not self.trace_cap > 0.0:
            raise ValueError("trace_cap must be positive")


@dataclass
class RegionGains:
    """Per-region Lyapunov shape and scheduling-corner gain variables.

    Y_corners[c] pairs with the c-th scheduling-box corner of the region's
    sub-polytope (theta-major order); the online gain interpolates them with
    the region-local bilinear weights.  P_j = Q_j^{-1}.
    """

    region: SpeedRegion
    Q: np.ndarray
    Y_corners: tuple
    rho: float

    @property
    def P(self):
        return np.linalg.inv(self.Q)

    def gain_at(self, v_x):
        # clamp silently: during a dwell-pending stretch the supervisor
        # intentionally rides the boundary-frozen gain of the old mode
        v = min(max(v_x, self.region.v_lo), self.region.v_hi)
        w = scheduling_weights(v, (self.region.v_lo, self.region.v_hi))
        Y = sum(wi * Yi for wi, Yi in zip(w, self.Y_corners))
        return np.linalg.solve(self.Q, Y.T).T


@dataclass(frozen=True)
class AdtCertificate:
    """Average-dwell-time certificate: P_j <= mu * P_l for all pairs."""

    mu: float
    rho: float
    dwell_steps: int
    arbitrary_switching_ok: bool


@dataclass(frozen=True)
class SupervisorState:
    mode: int
    steps_since_switch: int
    pending: int | None = None


def _region_polytope(region, params, cfg):
    return build_polytope(params, (region.v_lo, region.v_hi), cfg.Ts,
                          uncertainty_enabled=cfg.uncertainty)


def _add_region_constraints(prob, Q, Ys, model, rho, u_max, include_input=True):
    """Decay and input LMIs of one region over its sub-polytope."""
    I4 = np.eye(NX)
    eQ = AffineMatrixExpr.zeros(NX).add_product(I4, Q, I4)
    n_stiff = max(1, model.n_vertices // N_CORNERS)
    for i, (A, B) in enumerate(model.vertices):
        c = i // n_stiff
        acl = AffineMatrixExpr(np.zeros((NX, NX)))
        acl.add_product(A, Q, I4)
        acl.add_product(B, Ys[c], I4)
        prob.add_psd(block_expr([
            [_scaled_Q(Q, rho ** 2), acl.transposed()],
            [acl, eQ],
        ]))
    if include_input:
        for c in range(N_CORNERS):
            eY = AffineMatrixExpr(np.zeros((1, NX))).add_product(np.eye(1), Ys[c], I4)
            prob.add_psd(block_expr([
                [np.array([[u_max ** 2]]), eY],
                [eY.transposed(), eQ],
            ]))


def _scaled_Q(Q, scale):
    return AffineMatrixExpr.zeros(NX).add_product(scale * np.eye(NX), Q, np.eye(NX))


def _trace_expr(Q):
    expr = AffineMatrixExpr(np.zeros((1, 1)))
    for i in range(NX):
        e = np.zeros((1, NX))
        e[0, i] = 1.0
        expr.add_product(e, Q, e.T)
    return expr


def _trace_objective(prob, Q, tracevar, cap):
    """t <= trace(Q) <= cap; maximizing t maximizes the trace."""
    lower = _trace_expr(Q)
    lower.add_product(np.array([[-1.0]]), tracevar, np.eye(1))
    prob.add_psd(lower)
    upper = AffineMatrixExpr(np.array([[cap]]))
    for t in _trace_expr(Q).terms:
        upper.add_product(-t.left, t.var, t.right)
    prob.add_psd(upper)
    prob.minimize({tracevar.name: -1.0})


def _classify_infeasibility(prob_builder, settings):
    """Name the binding constraint class of a failed synthesis.

    Heuristic: re-solve the decay constraints alone as a feasibility
    problem; if that succeeds the steering bound was binding, otherwise the
    decay requirement itself is unattainable.
    """
    relaxed = prob_builder(include_input=False, objective=False)
    sol = solve(relaxed, settings)
    return "input" if sol.ok else "decay"


def synthesize_region(region, params, cfg, settings=None):
    """Synthesize one region's Lyapunov shape and corner gains.

    Feasibility SDP with variables Q_j and Y_jc: a decay LMI per vertex of
    the region sub-polytope (stiffness corners included), a steering-bound
    LMI per scheduling corner, and trace(Q_j) maximization so the certified
    invariant ellipsoid is as large as possible.
    """
    model = _region_polytope(region, params, cfg)

    def build(include_input=True, objective=True):
        prob = SdpProblem()
        Q = prob.new_symmetric("Q", NX)
        Ys = [prob.new_rect(f"Y{c}", 1, NX) for c in range(N_CORNERS)]
        prob.add_psd(AffineMatrixExpr.zeros(NX).add_product(np.eye(NX), Q, np.eye(NX)),
                     strict=True)
        _add_region_constraints(prob, Q, Ys, model, cfg.rho, cfg.u_max,
                                include_input=include_input)
        if objective:
            t = prob.new_scalar("t")
            _trace_objective(prob, Q, t, cfg.trace_cap)
        return prob

    sol = solve(build(), settings)
    if not sol.ok:
        binding = _classify_infeasibility(build, settings)
        raise RegionSynthesisError(region.index, cfg.rho, binding, sol.status)

    Q = sol.values["Q"]
    Ys = tuple(sol.values[f"Y{c}"].reshape(1, NX) for c in range(N_CORNERS))
    gains = RegionGains(region=region, Q=Q, Y_corners=Ys, rho=cfg.rho)
    _certify(gains, model, cfg)
    return gains


def _certify(gains, model, cfg, eps=1e-7):
    """Post-solve check of the defining vertex LMIs."""
    n_stiff = max(1, model.n_vertices // N_CORNERS)
    Q = gains.Q
    for i, (A, B) in enumerate(model.vertices):
        c = i // n_stiff
        acl = A @ Q + B @ gains.Y_corners[c]
        blk = np.block([[cfg.rho ** 2 * Q, acl.T], [acl, Q]])
        if not psd_check(blk, eps):
            raise RegionSynthesisError(gains.region.index, cfg.rho, "decay",
                                       SolveStatus.NUMERICAL_FAILURE)
    for c in range(N_CORNERS):
        Yc = gains.Y_corners[c]
        blk = np.block([[np.array([[cfg.u_max ** 2]]), Yc], [Yc.T, Q]])
        if not psd_check(blk, eps):
            raise RegionSynthesisError(gains.region.index, cfg.rho, "input",
                                       SolveStatus.NUMERICAL_FAILURE)


def compute_mu(Qs, rho):
    """Lyapunov jump bound and dwell time from the region shapes.

    mu is the smallest scalar with P_j <= mu * P_l for every ordered pair,
    computed as max over pairs of lambda_max(Q_l^{1/2} Q_j^{-1} Q_l^{1/2});
    dwell_steps = ceil(ln mu / ln(1/rho)).  mu = 1 (within tolerance) means
    a common Lyapunov function exists and arbitrary switching is allowed.
    """
    if not 0.0 < rho < 1.0:
        raise ValueError("rho must lie in (0, 1)")
    roots = []
    invs = []
    for Q in Qs:
        w, V = np.linalg.eigh(np.asarray(Q, dtype=float))
        if w[0] <= 0.0:
            raise ValueError("all Q_j must be positive definite")
        roots.append(V @ np.diag(np.sqrt(w)) @ V.T)
        invs.append(V @ np.diag(1.0 / w) @ V.T)
    mu = 1.0
    for j in range(len(Qs)):
        for l in range(len(Qs)):
            if j == l:
                continue
            M = roots[l] @ invs[j] @ roots[l]
            mu = max(mu, float(np.linalg.eigvalsh(0.5 * (M + M.T))[-1]))
    arbitrary = mu <= 1.0 + 1e-9
    dwell = 0 if arbitrary else int(math.ceil(math.log(mu) / math.log(1.0 / rho)))
    return AdtCertificate(mu=mu, rho=rho, dwell_steps=dwell,
                          arbitrary_switching_ok=arbitrary)


@dataclass
class GainSchedule:
    """Everything the online switched controller needs, serializable."""

    regions: tuple
    gains: tuple
    cert: AdtCertificate
    u_max: float
    Ts: float
    params: VehicleParams
    uncertainty: bool = True


def synthesize_schedule(params, cfg, regions=DEFAULT_REGIONS, arbitrary=False,
                        settings=None):
    """Synthesize all regions and the ADT certificate.

    With arbitrary=True a single shared Q is solved across every region's
    vertex set, which forces mu = 1 by construction (feasibility permitting)
    and licenses arbitrary switching.
    """
    regions = tuple(sorted(regions, key=lambda r: r.v_lo))
    if arbitrary:
        prob = SdpProblem()
        Q = prob.new_symmetric("Q", NX)
        t = prob.new_scalar("t")
        prob.add_psd(AffineMatrixExpr.zeros(NX).add_product(np.eye(NX), Q, np.eye(NX)),
                     strict=True)
        all_Ys = []
        models = []
        for region in regions:
            model = _region_polytope(region, params, cfg)
            models.append(model)
            Ys = [prob.new_rect(f"Y_{region.index}_{c}", 1, NX)
                  for c in range(N_CORNERS)]
            all_Ys.append(Ys)
            _add_region_constraints(prob, Q, Ys, model, cfg.rho, cfg.u_max)
        _trace_objective(prob, Q, t, cfg.trace_cap)
        sol = solve(prob, settings)
        if not sol.ok:
            raise RegionSynthesisError(-1, cfg.rho, "shared-Q", sol.status)
        gains = []
        for region, Ys, model in zip(regions, all_Ys, models):
            g = RegionGains(
                region=region, Q=sol.values["Q"],
                Y_corners=tuple(sol.values[y.name].reshape(1, NX) for y in Ys),
                rho=cfg.rho)
            _certify(g, model, cfg)
            gains.append(g)
        cert = AdtCertificate(mu=1.0, rho=cfg.rho, dwell_steps=0,
                              arbitrary_switching_ok=True)
    else:
        gains = [synthesize_region(region, params, cfg, settings=settings)
                 for region in regions]
        cert = compute_mu([g.Q for g in gains], cfg.rho)
    return GainSchedule(regions=regions, gains=tuple(gains), cert=cert,
                        u_max=cfg.u_max, Ts=cfg.Ts, params=params,
                        uncertainty=cfg.uncertainty)


def region_for_speed(regions, v_x):
    """Lowest-index region containing v_x; clamps (with warning) outside."""
    for r in regions:
        if r.contains(v_x):
            return r.index
    log.warning("speed %.3f outside every region; clamping", v_x)
    return 0 if v_x < regions[0].v_lo else len(regions) - 1


def initial_supervisor(regions, v_x, cert):
    """Start in the containing region with the dwell clock already expired."""
    return SupervisorState(mode=region_for_speed(regions, v_x),
                           steps_since_switch=cert.dwell_steps)


def supervisor_step(sup, v_x, regions, cert):
    """Advance the hysteresis/dwell supervisor by one sample.

    A switch toward the neighboring region is requested only when v_x exits
    the current region's bounds (the hysteresis overlap lies inside them)
    and commits once steps_since_switch >= dwell_steps; under an arbitrary-
    switching certificate requests commit immediately.
    """
    mode = sup.mode
    desired = mode
    if v_x < regions[mode].v_lo and mode > 0:
        desired = mode - 1
    elif v_x > regions[mode].v_hi and mode < len(regions) - 1:
        desired = mode + 1
    pending = desired if desired != mode else None
    steps = sup.steps_since_switch + 1
    if pending is not None and (cert.arbitrary_switching_ok
                                or steps >= cert.dwell_steps):
        return SupervisorState(mode=pending, steps_since_switch=0), pending
    return SupervisorState(mode=mode, steps_since_switch=steps,
                           pending=pending), mode


def switched_control_step(x, v_x, kappa_ref, schedule, sup):
    """Supervisor update, scheduled-gain evaluation, feedforward, clamp."""
    x = as_error_vector(x)
    new_sup, mode = supervisor_step(sup, v_x, schedule.regions, schedule.cert)
    K = schedule.gains[mode].gain_at(v_x)
    ff = curvature_feedforward(schedule.params, kappa_ref, v_x)
    delta = float(np.clip((K @ x).item() + ff, -schedule.u_max, schedule.u_max))
    return delta, new_sup


class SwitchedLpvController:
    """Stateful per-episode wrapper around switched_control_step."""

    name = "switched-lpv"

    def __init__(self, schedule):
        self.schedule = schedule
        self.params = schedule.params
        self.Ts = schedule.Ts
        self._sup = None

    def step(self, x, kappa_ref, v_x):
        if self._sup is None:
            self._sup = initial_supervisor(self.schedule.regions, v_x,
                                           self.schedule.cert)
        delta, self._sup = switched_control_step(x, v_x, kappa_ref,
                                                 self.schedule, self._sup)
        return delta, StepDiag(mode=self._sup.mode)


# ---------------------------------------------------------------------------
# gain-schedule file format (plain text, exact float round-trip)

_SCHEDULE_HEADER = "polytrack-gain-schedule v1"


def _fmt(values):
    return " ".join(f"{float(v):.17g}" for v in np.asarray(values).reshape(-1))


def save_schedule(schedule, path):
    """Write region bounds, vertex gains (row-major), and the certificate."""
    lines = [_SCHEDULE_HEADER]
    p = schedule.params
    lines.append("params " + _fmt([p.m, p.Iz, p.lf, p.lr, p.Cf, p.Cr,
                                   p.dCf, p.dCr, p.delta_max, p.delta_rate_max]))
    lines.append(f"rho {schedule.cert.rho:.17g}")
    lines.append(f"u_max {schedule.u_max:.17g}")
    lines.append(f"Ts {schedule.Ts:.17g}")
    lines.append(f"uncertainty {int(schedule.uncertainty)}")
    lines.append(f"mu {schedule.cert.mu:.17g}")
    lines.append(f"dwell_steps {schedule.cert.dwell_steps}")
    lines.append(f"arbitrary {int(schedule.cert.arbitrary_switching_ok)}")
    lines.append(f"regions {len(schedule.regions)}")
    for region, gains in zip(schedule.regions, schedule.gains):
        lines.append(f"region {region.index} " +
                     _fmt([region.v_lo, region.v_hi, region.hysteresis]))
        lines.append("Q " + _fmt(gains.Q))
        for c, Yc in enumerate(gains.Y_corners):
            lines.append(f"Y{c} " + _fmt(Yc))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


class ScheduleFileError(ValueError):
    """Malformed or incompatible gain-schedule file."""


def load_schedule(path, expect_params=None):
    """Read a gain-schedule file; optionally verify it matches the config
    vehicle parameters."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != _SCHEDULE_HEADER:
        raise ScheduleFileError(f"{path}: not a gain-schedule file")

    fields = {}
    rows = []
    for ln in lines[1:]:
        key, _, rest = ln.partition(" ")
        rows.append((key, rest))
        fields.setdefault(key, rest)

    def floats(text):
        return [float(tok) for tok in text.split()]

    try:
        pvals = floats(fields["params"])
        params = VehicleParams(*pvals)
        rho = float(fields["rho"])
        u_max = float(fields["u_max"])
        Ts = float(fields["Ts"])
        uncertainty = bool(int(fields["uncertainty"]))
        mu = float(fields["mu"])
        dwell = int(fields["dwell_steps"])
        arbitrary = bool(int(fields["arbitrary"]))
        n_regions = int(fields["regions"])
    except (KeyError, ValueError, TypeError) as exc:
        raise ScheduleFileError(f"{path}: {exc}") from exc

    if expect_params is not None and params != expect_params:
        raise ScheduleFileError(
            f"{path}: schedule was synthesized for different vehicle parameters")

    regions = []
    gains = []
    i = 0
    while i < len(rows):
        key, rest = rows[i]
        if key != "region":
            i += 1
            continue
        toks = rest.split()
        region = SpeedRegion(index=int(toks[0]), v_lo=float(toks[1]),
                             v_hi=float(toks[2]), hysteresis=float(toks[3]))
        qkey, qrest = rows[i + 1]
        if qkey != "Q":
            raise ScheduleFileError(f"{path}: expected Q after region {region.index}")
        Q = np.array(floats(qrest)).reshape(NX, NX)
        Ys = []
        for c in range(N_CORNERS):
            ykey, yrest = rows[i + 2 + c]
            if ykey != f"Y{c}":
                raise ScheduleFileError(f"{path}: expected Y{c} in region {region.index}")
            Ys.append(np.array(floats(yrest)).reshape(1, NX))
        regions.append(region)
        gains.append(RegionGains(region=region, Q=Q, Y_corners=tuple(Ys), rho=rho))
        i += 2 + N_CORNERS
    if len(regions) != n_regions:
        raise ScheduleFileError(f"{path}: expected {n_regions} regions, "
                                f"found {len(regions)}")
    cert = AdtCertificate(mu=mu, rho=rho, dwell_steps=dwell,
                          arbitrary_switching_ok=arbitrary)
    return GainSchedule(regions=tuple(regions), gains=tuple(gains), cert=cert,
                        u_max=u_max, Ts=Ts, params=params, uncertainty=uncertainty)
