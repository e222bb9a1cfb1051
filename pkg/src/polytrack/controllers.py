"""Baseline lateral controllers for the comparison harness.

Both baselines share the robust MPC's weights and feedforward so the
comparisons isolate the value of the polytopic min-max synthesis: the
frozen-gain LQR uses one Riccati gain designed at a single speed, and the
certainty-equivalence MPC re-solves the single-vertex synthesis at the
measured speed with no uncertainty description.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.linalg

from .mpc import (ControllerFailureError, RobustMpcConfig, StepDiag,
                  compute_gain, curvature_feedforward)
from .vehicle import as_error_vector, build_error_dynamics, build_polytope, \
    discretize_euler


def dlqr_gain(A, B, S, R):
    """Discrete LQR gain F (u = F x) via the Riccati solution."""
    P = scipy.linalg.solve_discrete_are(A, B, S, np.atleast_2d(R))
    F = -np.linalg.solve(np.atleast_2d(R) + B.T @ P @ B, B.T @ P @ A)
    return F, P


class FrozenLqrController:
    """LQR gain frozen at one design speed on the nominal model."""

    name = "lqr"

    def __init__(self, params, Ts, cfg=None, v_design=15.0):
        self.params = params
        self.Ts = Ts
        self.cfg = cfg or RobustMpcConfig()
        self.v_design = v_design
        A_c, B_c, _ = build_error_dynamics(params, v_design)
        A, B, _ = discretize_euler(A_c, B_c, np.zeros((4, 1)), Ts)
        self.F, _ = dlqr_gain(A, B, self.cfg.S, self.cfg.R)

    def step(self, x, kappa_ref, v_x):
        x = as_error_vector(x)
        ff = curvature_feedforward(self.params, kappa_ref, v_x)
        delta = float(np.clip((self.F @ x).item() + ff,
                              -self.cfg.u_max, self.cfg.u_max))
        return delta, StepDiag(F=self.F)


class NominalMpcController:
    """Certainty-equivalence MPC: single-vertex synthesis at the measured speed.

    No uncertainty polytope, no disturbance channel; the synthesis sees only
    the frozen nominal model at the current v_x.  Falls back to the last
    gain if a solve fails, like the robust controller.
    """

    name = "nominal-mpc"

    def __init__(self, params, Ts, cfg=None, v_range=(5.0, 25.0), settings=None):
        self.params = params
        self.Ts = Ts
        base = cfg or RobustMpcConfig()
        if base.w_max != 0.0:
            base = RobustMpcConfig(S=base.S, R=base.R, u_max=base.u_max,
                                   w_max=0.0, lambda_grid=base.lambda_grid,
                                   gamma_cap=base.gamma_cap, economy=base.economy,
                                   rescan_period=base.rescan_period)
        self.cfg = base
        self.v_range = v_range
        self.settings = settings
        self._last = None

    def _model_at(self, v_x):
        v = min(max(v_x, self.v_range[0]), self.v_range[1])
        return build_polytope(self.params, (v, v), self.Ts,
                              uncertainty_enabled=False, wind_force=0.0)

    def step(self, x, kappa_ref, v_x):
        x = as_error_vector(x)
        model = self._model_at(v_x)
        result = compute_gain(x, model, self.cfg, settings=self.settings)
        if result.usable:
            self._last = result
        elif self._last is None:
            raise ControllerFailureError(
                f"nominal synthesis failed with status {result.status.value} "
                "and no previous gain is available")
        else:
            result = self._last
        ff = curvature_feedforward(self.params, kappa_ref, v_x)
        delta = float(np.clip((result.F @ x).item() + ff,
                              -self.cfg.u_max, self.cfg.u_max))
        return delta, StepDiag(status=result.status.value, gamma=result.gamma,
                               solve_time=result.solve_time, F=result.F)
