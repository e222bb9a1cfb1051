"""Per-timestep min-max robust MPC over the vertex polytope.

At each step a state-feedback gain u = F x is synthesized by minimizing an
upper bound gamma on the worst-case infinite-horizon quadratic cost over all
vertex systems, subject to an invariant-ellipsoid containment of the current
state, a hard steering bound valid on the whole ellipsoid, and (when a
disturbance channel is configured) a quadratic-boundedness condition making
the ellipsoid robustly invariant for all |w| <= 1.  The quadratic-
boundedness inequality is bilinear in its scalar lambda, so lambda is
handled by grid search and the minimum-gamma solution kept.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .lmi import (AffineMatrixExpr, CompiledSdp, SdpProblem, SolveStatus,
                  block_expr, solve, times_scalar)
from .vehicle import NX, as_error_vector

log = logging.getLogger("polytrack.mpc")

# Grid for the quadratic-boundedness scalar.  lambda is the per-step decay
# rate the invariance condition enforces; at Ts = 0.01 s feasible values sit
# well below 0.05, so the grid is geometric instead of the uniform
# {0.05, ..., 0.95}.
DEFAULT_LAMBDA_GRID = (0.002, 0.005, 0.01, 0.02, 0.04, 0.08, 0.15, 0.3, 0.5, 0.8)


class ControllerFailureError(RuntimeError):
    """No usable gain: the first solve failed and there is no fallback."""


@dataclass(frozen=True)
class RobustMpcConfig:
    """Weights and bounds of the min-max synthesis.

    w_max scales the disturbance channel (unit signal = w_max * E_w); zero
    disables the quadratic-boundedness constraints entirely.  gamma_cap, if
    finite, adds an upper bound on the cost variable.
    """

    S: np.ndarray = field(default_factory=lambda: np.diag([1.0, 0.1, 1.0, 0.1]))
    R: float = 10.0
    u_max: float = 0.5
    w_max: float = 1.0
    lambda_grid: tuple = DEFAULT_LAMBDA_GRID
    gamma_cap: float = math.inf
    economy: bool = False
    rescan_period: int = 25

    def __post_init__(self):
        S = np.asarray(self.S, dtype=float).reshape(NX, NX)
        object.__setattr__(self, "S", 0.5 * (S + S.T))
        if np.linalg.eigvalsh(self.S)[0] < -1e-12:
            raise ValueError("S must be positive semidefinite")
        if not self.R > 0.0:
            raise ValueError("R must be positive")
        if not self.u_max > 0.0:
            raise ValueError("u_max must be positive")
        if self.w_max < 0.0:
            raise ValueError("w_max must be nonnegative")
        if len(self.lambda_grid) == 0:
            raise ValueError("lambda_grid must be nonempty")
        if any(not 0.0 < lam < 1.0 for lam in self.lambda_grid):
            raise ValueError("every lambda must lie in (0, 1)")

    @property
    def S_half(self):
        w, V = np.linalg.eigh(self.S)
        return V @ np.diag(np.sqrt(np.clip(w, 0.0, None))) @ V.T

    @property
    def R_half(self):
        return math.sqrt(self.R)


@dataclass
class GainResult:
    """Outcome of one min-max synthesis.

    P = gamma * Q^{-1} is the Lyapunov matrix; {x : x' Q^{-1} x <= 1} the
    invariant ellipsoid.  fallback marks steps that reused an older gain
    after an unsuccessful solve.
    """

    F: np.ndarray | None
    gamma: float
    Q: np.ndarray | None
    lambda_used: float | None
    status: SolveStatus
    fallback: bool = False
    solve_time: float = 0.0
    n_solves: int = 0

    @property
    def usable(self):
        return self.F is not None


def _assemble(x, vertices, E_w, cfg, lam, include_disturbance):
    """Build the synthesis SDP over an explicit vertex list."""
    x = as_error_vector(x)
    prob = SdpProblem()
    Q = prob.new_symmetric("Q", NX)
    Y = prob.new_rect("Y", 1, NX)
    gamma = prob.new_scalar("gamma")

    I4 = np.eye(NX)
    eQ = AffineMatrixExpr.zeros(NX).add_product(I4, Q, I4)

    # (a) containment of the current state: [1, x'; x, Q] >= 0
    prob.add_psd(block_expr([
        [np.array([[1.0]]), x.reshape(1, NX)],
        [x.reshape(NX, 1), eQ],
    ]))

    # (b) worst-case cost bound per vertex
    Sh = cfg.S_half
    Rh = np.array([[cfg.R_half]])
    for A, B in vertices:
        acl = AffineMatrixExpr(np.zeros((NX, NX)))  # A Q + B Y
        acl.add_product(A, Q, I4)
        acl.add_product(B, Y, I4)
        shq = AffineMatrixExpr.zeros(NX).add_product(Sh, Q, I4)
        rhy = AffineMatrixExpr(np.zeros((1, NX)))
        rhy.add_product(Rh, Y, I4)
        prob.add_psd(block_expr([
            [eQ, acl.transposed(), shq.transposed(), rhy.transposed()],
            [acl, eQ, None, None],
            [shq, None, times_scalar(I4, gamma), None],
            [rhy, None, None, times_scalar(np.eye(1), gamma)],
        ]))

    # (c) steering bound on the whole ellipsoid: [u_max^2, Y; Y', Q] >= 0
    eY = AffineMatrixExpr(np.zeros((1, NX))).add_product(np.eye(1), Y, I4)
    prob.add_psd(block_expr([
        [np.array([[cfg.u_max ** 2]]), eY],
        [eY.transposed(), eQ],
    ]))

    # (d) quadratic boundedness per vertex: robust invariance for |w| <= 1
    if include_disturbance:
        if lam is None or not 0.0 < lam < 1.0:
            raise ValueError(f"lambda must lie in (0, 1), got {lam}")
        Ew = cfg.w_max * E_w
        for A, B in vertices:
            acl = AffineMatrixExpr(np.zeros((NX, NX)))
            acl.add_product(A, Q, I4)
            acl.add_product(B, Y, I4)
            decayed_Q = AffineMatrixExpr.zeros(NX).add_product((1.0 - lam) * I4, Q, I4)
            prob.add_psd(block_expr([
                [decayed_Q, None, acl.transposed()],
                [None, np.array([[lam]]), Ew.reshape(1, NX)],
                [acl, Ew.reshape(NX, 1), eQ],
            ]))

    if math.isfinite(cfg.gamma_cap):
        cap = AffineMatrixExpr(np.array([[cfg.gamma_cap]]))
        cap.add_product(np.array([[-1.0]]), gamma, np.eye(1))
        prob.add_psd(cap)

    prob.minimize({"gamma": 1.0})
    return prob


def assemble_lmis(x, model, cfg, lam=None, include_disturbance=None):
    """The literal synthesis SDP over every model vertex.

    Blocks: 1 containment + L performance + 1 input bound + L quadratic
    boundedness (the last group only when a disturbance channel is present,
    i.e. include_disturbance defaults to w_max > 0 and E_w nonzero).
    """
    if include_disturbance is None:
        include_disturbance = cfg.w_max > 0.0 and np.any(model.E_w)
    return _assemble(x, model.vertices, model.E_w, cfg, lam, include_disturbance)


def _extract_gain(solution):
    Q = solution.values["Q"]
    Y = solution.values["Y"].reshape(1, NX)
    # interior-point iterates keep Q strictly PD; guard the inversion anyway
    w = np.linalg.eigvalsh(Q)
    if w[0] <= 0.0 or w[-1] / max(w[0], 1e-300) > 1e14:
        return None, None
    F = np.linalg.solve(Q, Y.T).T
    return F, Q


def compute_gain(x, model, cfg, settings=None, lambda_candidates=None):
    """Minimum-gamma state-feedback gain at state x.

    Scans the lambda grid (all of it, unless a candidate subset is given),
    keeps the feasible solution of least gamma, and returns F = Y Q^{-1}.
    Redundant duplicate vertices (theta2 does not enter A or B) are
    deduplicated before assembly; the constraint set is unchanged.
    """
    x = as_error_vector(x)
    if not np.all(np.isfinite(x)):
        raise ValueError(f"state must be finite, got {x}")
    vertices = model.distinct_vertices()
    include_disturbance = cfg.w_max > 0.0 and bool(np.any(model.E_w))
    t0 = time.perf_counter()

    if not include_disturbance:
        candidates = [None]
    elif lambda_candidates is not None:
        candidates = list(lambda_candidates)
    else:
        candidates = list(cfg.lambda_grid)

    best = None
    worst_status = SolveStatus.INFEASIBLE
    n_solves = 0
    for lam in candidates:
        prob = _assemble(x, vertices, model.E_w, cfg, lam, include_disturbance)
        sol = solve(prob, settings)
        n_solves += 1
        if sol.ok:
            if best is None or sol.objective_value < best[0]:
                best = (sol.objective_value, lam, sol)
        elif sol.status != SolveStatus.INFEASIBLE:
            worst_status = sol.status
    elapsed = time.perf_counter() - t0

    if best is None:
        return GainResult(F=None, gamma=math.inf, Q=None, lambda_used=None,
                          status=worst_status, solve_time=elapsed,
                          n_solves=n_solves)
    gamma_val, lam, sol = best
    F, Q = _extract_gain(sol)
    if F is None:
        return GainResult(F=None, gamma=math.inf, Q=None, lambda_used=lam,
                          status=SolveStatus.NUMERICAL_FAILURE,
                          solve_time=elapsed, n_solves=n_solves)
    return GainResult(F=F, gamma=gamma_val, Q=Q, lambda_used=lam,
                      status=sol.status, solve_time=elapsed, n_solves=n_solves)


def understeer_gradient(params):
    """Steady-state understeer gradient used by the curvature feedforward."""
    return params.m * (params.lr * params.Cr - params.lf * params.Cf) / (
        (params.lf + params.lr) * params.Cf * params.Cr)


def curvature_feedforward(params, kappa_ref, v_x):
    """Steering angle that holds the path curvature at steady state.

    Added outside the min-max law: the curvature channel of the error
    dynamics otherwise forces a steady-state offset on curved roads.
    """
    return kappa_ref * (params.lf + params.lr + understeer_gradient(params) * v_x ** 2)


def control_step(x, kappa_ref, v_x, model, cfg, last=None, settings=None,
                 lambda_candidates=None):
    """One robust-MPC step: solve for the gain, add feedforward, clamp.

    On an unsuccessful solve the previous gain is reused and the step is
    flagged (fallback=True, status of the failed attempt preserved); with no
    previous gain available the episode cannot continue.
    """
    x = as_error_vector(x)
    result = compute_gain(x, model, cfg, settings=settings,
                          lambda_candidates=lambda_candidates)
    if not result.usable:
        if last is None or not last.usable:
            raise ControllerFailureError(
                f"min-max synthesis failed with status {result.status.value} "
                "and no previous gain is available")
        log.warning("gain solve failed (%s); holding previous gain",
                    result.status.value)
        result = replace(result, F=last.F, gamma=last.gamma, Q=last.Q,
                         lambda_used=last.lambda_used, fallback=True)
    ff = curvature_feedforward(model.params, kappa_ref, v_x)
    delta = float(np.clip((result.F @ x).item() + ff, -cfg.u_max, cfg.u_max))
    return delta, result


@dataclass
class StepDiag:
    """Per-step controller diagnostics appended to the simulation log."""

    status: str = "ok"
    gamma: float = math.nan
    lambda_used: float | None = None
    solve_time: float = 0.0
    F: np.ndarray | None = None
    mode: int = -1
    fallback: bool = False
    reused: bool = False


class RobustMpcController:
    """Stateful per-episode wrapper around control_step.

    Keeps the fallback gain, holds the last good lambda between steps
    (re-scanning the full grid every rescan_period steps or after a
    failure), and implements the optional economy mode that skips the solve
    while the state norm has not grown 10% past the last synthesis point.
    Calls are strictly sequential per instance.
    """

    name = "robust-mpc"

    def __init__(self, model, cfg=None, settings=None):
        self.model = model
        self.cfg = cfg or RobustMpcConfig()
        self.settings = settings
        self.params = model.params
        self.Ts = model.Ts
        self._last = None
        self._last_norm = None
        self._step = 0
        self._has_disturbance = self.cfg.w_max > 0.0 and bool(np.any(model.E_w))
        self._distinct = model.distinct_vertices()
        self._compiled = {}  # lambda -> CompiledSdp; only the containment
        #                      constant depends on the state

    def _lambda_candidates(self):
        """Hold the last good lambda; probe its neighbors every
        rescan_period steps; fall back to the full grid after failures."""
        grid = list(self.cfg.lambda_grid)
        if not self._has_disturbance:
            return None
        if (self._last is None or self._last.lambda_used is None
                or self._last.fallback):
            return grid
        idx = grid.index(self._last.lambda_used)
        if self._step % self.cfg.rescan_period == 0:
            return grid[max(0, idx - 1):idx + 2]
        return [grid[idx]]

    def _solve_at(self, x, lam):
        comp = self._compiled.get(lam)
        if comp is None:
            prob = _assemble(x, self._distinct, self.model.E_w, self.cfg, lam,
                             self._has_disturbance)
            comp = CompiledSdp(prob)
            self._compiled[lam] = comp
        else:
            F0 = np.zeros((NX + 1, NX + 1))
            F0[0, 0] = 1.0
            F0[0, 1:] = x
            F0[1:, 0] = x
            comp.set_constant(0, F0)
        return comp.solve(self.settings)

    def _compute(self, x):
        """compute_gain over the held lambda candidates, reusing compiled
        problems between steps."""
        if not np.all(np.isfinite(x)):
            raise ValueError(f"state must be finite, got {x}")
        candidates = self._lambda_candidates() or [None]
        t0 = time.perf_counter()
        best = None
        worst_status = SolveStatus.INFEASIBLE
        n_solves = 0
        for lam in candidates:
            sol = self._solve_at(x, lam)
            n_solves += 1
            if sol.ok:
                if best is None or sol.objective_value < best[0]:
                    best = (sol.objective_value, lam, sol)
            elif sol.status != SolveStatus.INFEASIBLE:
                worst_status = sol.status
        elapsed = time.perf_counter() - t0
        if best is None:
            return GainResult(F=None, gamma=math.inf, Q=None, lambda_used=None,
                              status=worst_status, solve_time=elapsed,
                              n_solves=n_solves)
        gamma_val, lam, sol = best
        F, Q = _extract_gain(sol)
        if F is None:
            return GainResult(F=None, gamma=math.inf, Q=None, lambda_used=lam,
                              status=SolveStatus.NUMERICAL_FAILURE,
                              solve_time=elapsed, n_solves=n_solves)
        return GainResult(F=F, gamma=gamma_val, Q=Q, lambda_used=lam,
                          status=sol.status, solve_time=elapsed,
                          n_solves=n_solves)

    def step(self, x, kappa_ref, v_x):
        x = as_error_vector(x)
        if (self.cfg.economy and self._last is not None and self._last.usable
                and np.linalg.norm(x) <= 1.1 * self._last_norm):
            ff = curvature_feedforward(self.params, kappa_ref, v_x)
            delta = float(np.clip((self._last.F @ x).item() + ff,
                                  -self.cfg.u_max, self.cfg.u_max))
            self._step += 1
            return delta, StepDiag(status="reused", gamma=self._last.gamma,
                                   lambda_used=self._last.lambda_used,
                                   F=self._last.F, reused=True)
        result = self._compute(x)
        if not result.usable:
            if self._last is None or not self._last.usable:
                raise ControllerFailureError(
                    f"min-max synthesis failed with status {result.status.value} "
                    "and no previous gain is available")
            log.warning("gain solve failed (%s); holding previous gain",
                        result.status.value)
            result = replace(result, F=self._last.F, gamma=self._last.gamma,
                             Q=self._last.Q, lambda_used=self._last.lambda_used,
                             fallback=True)
        ff = curvature_feedforward(self.params, kappa_ref, v_x)
        delta = float(np.clip((result.F @ x).item() + ff,
                              -self.cfg.u_max, self.cfg.u_max))
        if result.usable and not result.fallback:
            self._last = result
            self._last_norm = float(np.linalg.norm(x))
        self._step += 1
        return delta, StepDiag(
            status="fallback" if result.fallback else result.status.value,
            gamma=result.gamma, lambda_used=result.lambda_used,
            solve_time=result.solve_time, F=result.F, fallback=result.fallback)
