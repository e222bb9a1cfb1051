"""Reference path generation: straight, arc, double lane change, sine.

Paths are sampled at a fixed 0.5 m arc-length step.  The lateral-profile
paths (lane change, sine) are defined as y(u) over the longitudinal
coordinate u with analytic first and second derivatives, so heading and
curvature come from atan(y') and y'' / (1 + y'^2)^{3/2} rather than finite
differences; arc length is accumulated on a dense u-grid and inverted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DS = 0.5  # arc-length sample spacing, m


class PathSpecError(ValueError):
    """Degenerate or inconsistent path specification."""


@dataclass(frozen=True)
class StraightSpec:
    length: float = 500.0

    def __post_init__(self):
        if not self.length > 0.0:
            raise PathSpecError("straight path needs positive length")


@dataclass(frozen=True)
class ArcSpec:
    """Constant-curvature arc; positive radius turns left."""

    radius: float = 500.0
    length: float = 500.0

    def __post_init__(self):
        if self.radius == 0.0:
            raise PathSpecError("arc radius must be nonzero")
        if not self.length > 0.0:
            raise PathSpecError("arc path needs positive length")


@dataclass(frozen=True)
class DoubleLaneChangeSpec:
    """Quintic-smoothstep lateral offset out and back.

    The offset ramps over `length` meters, holds for `hold` meters, and
    returns over another `length`; first and second derivatives vanish at
    every junction.
    """

    offset: float = 3.5
    length: float = 30.0
    hold: float = 25.0
    lead_in: float = 40.0
    total_length: float = 300.0

    def __post_init__(self):
        if self.length <= 0.0 or self.offset == 0.0:
            raise PathSpecError("lane change needs positive length and nonzero offset")
        needed = self.lead_in + 2.0 * self.length + self.hold
        if self.total_length < needed:
            raise PathSpecError(
                f"total_length {self.total_length} shorter than maneuver {needed}")


@dataclass(frozen=True)
class SineSpec:
    amplitude: float = 2.0
    wavelength: float = 100.0
    length: float = 500.0

    def __post_init__(self):
        if self.wavelength <= 0.0 or self.length <= 0.0:
            raise PathSpecError("sine path needs positive wavelength and length")


@dataclass(frozen=True)
class ReferencePath:
    """Arc-length-ordered pose and curvature samples."""

    s: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    heading: np.ndarray
    kappa: np.ndarray

    @property
    def total_length(self):
        return float(self.s[-1])

    def __post_init__(self):
        if not np.all(np.diff(self.s) > 0.0):
            raise PathSpecError("arc length must be strictly increasing")


def _smoothstep(t):
    """Quintic smoothstep 6t^5 - 15t^4 + 10t^3 with p, p', p'' zero/one at ends."""
    p = ((6.0 * t - 15.0) * t + 10.0) * t ** 3
    dp = 30.0 * t ** 2 * (t - 1.0) ** 2
    ddp = 60.0 * t * (2.0 * t - 1.0) * (t - 1.0)
    return p, dp, ddp


def _lane_change_profile(spec, u):
    """Offset profile y(u), y'(u), y''(u) of the double lane change."""
    u = np.asarray(u, dtype=float)
    y = np.zeros_like(u)
    dy = np.zeros_like(u)
    ddy = np.zeros_like(u)
    h, L = spec.offset, spec.length
    u0 = spec.lead_in
    u1 = u0 + L
    u2 = u1 + spec.hold
    u3 = u2 + L

    out = (u >= u0) & (u < u1)
    t = (u[out] - u0) / L
    p, dp, ddp = _smoothstep(t)
    y[out] = h * p
    dy[out] = h * dp / L
    ddy[out] = h * ddp / L ** 2

    y[(u >= u1) & (u < u2)] = h

    back = (u >= u2) & (u < u3)
    t = (u[back] - u2) / L
    p, dp, ddp = _smoothstep(t)
    y[back] = h * (1.0 - p)
    dy[back] = -h * dp / L
    ddy[back] = -h * ddp / L ** 2
    return y, dy, ddy


def _sine_profile(spec, u):
    u = np.asarray(u, dtype=float)
    k = 2.0 * math.pi / spec.wavelength
    return (spec.amplitude * np.sin(k * u),
            spec.amplitude * k * np.cos(k * u),
            -spec.amplitude * k ** 2 * np.sin(k * u))


def _from_profile(total_length, profile):
    """Sample a lateral-profile path at uniform arc length."""
    du = 0.02
    u_dense = np.arange(0.0, total_length + du, du)
    _, dy, _ = profile(u_dense)
    speed = np.sqrt(1.0 + dy ** 2)
    s_dense = np.concatenate([[0.0], np.cumsum(0.5 * (speed[1:] + speed[:-1]) * du)])
    s = np.arange(0.0, s_dense[-1], DS)
    u = np.interp(s, s_dense, u_dense)
    y, dy, ddy = profile(u)
    heading = np.arctan(dy)
    kappa = ddy / (1.0 + dy ** 2) ** 1.5
    return ReferencePath(s=s, X=u, Y=y, heading=heading, kappa=kappa)


def generate_path(spec):
    """Build the sampled reference path for a path specification."""
    if isinstance(spec, StraightSpec):
        s = np.arange(0.0, spec.length, DS)
        zeros = np.zeros_like(s)
        return ReferencePath(s=s, X=s.copy(), Y=zeros, heading=zeros.copy(),
                             kappa=zeros.copy())
    if isinstance(spec, ArcSpec):
        s = np.arange(0.0, spec.length, DS)
        R = spec.radius
        ang = s / R
        return ReferencePath(s=s, X=R * np.sin(ang), Y=R * (1.0 - np.cos(ang)),
                             heading=ang.copy(), kappa=np.full_like(s, 1.0 / R))
    if isinstance(spec, DoubleLaneChangeSpec):
        return _from_profile(spec.total_length, lambda u: _lane_change_profile(spec, u))
    if isinstance(spec, SineSpec):
        return _from_profile(spec.length, lambda u: _sine_profile(spec, u))
    raise PathSpecError(f"unknown path spec {type(spec).__name__}")
