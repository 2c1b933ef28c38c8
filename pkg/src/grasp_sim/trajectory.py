"""Degree-9 polynomial reference trajectories and the acceleration-based tracker.

Each axis (x, y, z, yaw) gets its own polynomial in normalized time
``tau = t / duration``. Position and derivatives one through four are pinned
at both ends, which fixes all ten coefficients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from math import factorial
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .geometry import Pose2_5D, wrap_angle

DEGREE = 9
N_COEF = DEGREE + 1
N_DERIV = 5  # position + 4 derivatives pinned per end


class DegenerateDuration(ValueError):
    pass


def _boundary_matrix() -> np.ndarray:
    m = np.zeros((N_COEF, N_COEF))
    for n in range(N_DERIV):
        m[n, n] = factorial(n)  # tau = 0
        for k in range(n, N_COEF):  # tau = 1
            m[N_DERIV + n, k] = factorial(k) / factorial(k - n)
    return m


_BC = _boundary_matrix()
_BC_INV = np.linalg.inv(_BC)


class ReferenceState(NamedTuple):
    """Reference sample. Index 3 of each vector is yaw (unwrapped for rates)."""

    pose: Pose2_5D
    velocity: tuple[float, float, float, float]
    acceleration: tuple[float, float, float, float]


@dataclass(frozen=True)
class PolynomialTrajectory:
    coefficients: tuple[tuple[float, ...], ...]  # 4 axes x 10, normalized time
    duration: float
    t0: float = 0.0  # absolute start time, for callers that keep a clock

    def __post_init__(self):
        if len(self.coefficients) != 4 or any(len(c) != N_COEF for c in self.coefficients):
            raise ValueError("expected 4 axes of 10 coefficients")

    @property
    def start(self) -> Pose2_5D:
        return evaluate(self, 0.0).pose

    @property
    def goal(self) -> Pose2_5D:
        return evaluate(self, self.duration).pose

    def end_time(self) -> float:
        return self.t0 + self.duration


@dataclass(frozen=True)
class TrajectoryTiming:
    cruise_speed: float = 0.25
    min_duration: float = 1.5
    yaw_rate: float = 1.0

    def duration_for(self, start: Pose2_5D, goal: Pose2_5D) -> float:
        dist = start.distance_to(goal)
        dyaw = abs(wrap_angle(goal.yaw - start.yaw))
        return max(self.min_duration, dist / self.cruise_speed, dyaw / self.yaw_rate)


def _axis_coefficients(rhs: np.ndarray) -> np.ndarray:
    return _BC_INV @ rhs


def plan_trajectory(
    start: Pose2_5D,
    goal: Pose2_5D,
    duration: float,
    start_derivatives: Optional[Sequence[Sequence[float]]] = None,
    t0: float = 0.0,
) -> PolynomialTrajectory:
    """Plan from ``start`` to ``goal`` in ``duration`` seconds.

    ``start_derivatives`` holds, per derivative order 1..4, the (x, y, z, yaw)
    rates at the start; omitted orders are zero. The goal is reached at rest.
    Yaw takes the shortest way round.
    """
    if not duration > 0.0:
        raise DegenerateDuration(f"duration must be positive, got {duration}")
    derivs = np.zeros((N_DERIV - 1, 4))
    if start_derivatives is not None:
        for i, row in enumerate(start_derivatives[: N_DERIV - 1]):
            derivs[i] = row
    y0 = start.yaw
    y1 = y0 + wrap_angle(goal.yaw - y0)
    p0 = np.array([start.x, start.y, start.z, y0])
    p1 = np.array([goal.x, goal.y, goal.z, y1])

    rhs = np.zeros((N_COEF, 4))
    rhs[0] = p0
    scale = duration ** np.arange(1, N_DERIV)
    rhs[1:N_DERIV] = derivs * scale[:, None]
    rhs[N_DERIV] = p1
    coef = _axis_coefficients(rhs)
    return PolynomialTrajectory(tuple(tuple(map(float, coef[:, a])) for a in range(4)), float(duration), t0)


def _horner(c: Sequence[float], tau: float, order: int) -> float:
    """``order``-th tau-derivative of sum c_k tau^k."""
    acc = 0.0
    for k in range(N_COEF - 1, order - 1, -1):
        f = 1.0
        for j in range(order):
            f *= k - j
        acc = acc * tau + c[k] * f
    return acc


def derivative(traj: PolynomialTrajectory, t: float, order: int) -> tuple[float, float, float, float]:
    """Per-axis time derivative of the given order at relative time ``t`` (clamped)."""
    d = traj.duration
    tau = min(max(t, 0.0), d) / d
    s = d ** -order
    return tuple(_horner(c, tau, order) * s for c in traj.coefficients)


def evaluate(traj: PolynomialTrajectory, t: float) -> ReferenceState:
    """Sample at time ``t`` relative to the trajectory start; ``t`` is clamped."""
    d = traj.duration
    tau = min(max(t, 0.0), d) / d
    pos = [0.0] * 4
    vel = [0.0] * 4
    acc = [0.0] * 4
    for a, c in enumerate(traj.coefficients):
        p = v = q = 0.0
        for k in range(N_COEF - 1, -1, -1):
            q = q * tau + 2.0 * v
            v = v * tau + p
            p = p * tau + c[k]
        pos[a], vel[a], acc[a] = p, v / d, q / (d * d)
    return ReferenceState(Pose2_5D(pos[0], pos[1], pos[2], pos[3]), tuple(vel), tuple(acc))


def boundary_residuals(
    traj: PolynomialTrajectory,
    start: Pose2_5D,
    goal: Pose2_5D,
    start_derivatives: Optional[Sequence[Sequence[float]]] = None,
) -> np.ndarray:
    """Absolute residuals of all 10 constraints per axis, in normalized time units."""
    d = traj.duration
    derivs = np.zeros((N_DERIV - 1, 4))
    if start_derivatives is not None:
        for i, row in enumerate(start_derivatives[: N_DERIV - 1]):
            derivs[i] = row
    y1 = start.yaw + wrap_angle(goal.yaw - start.yaw)
    out = np.zeros((N_COEF, 4))
    for a, c in enumerate(traj.coefficients):
        want0 = [start.as_tuple()[a]] + [derivs[i, a] * d ** (i + 1) for i in range(N_DERIV - 1)]
        want1 = [(goal.x, goal.y, goal.z, y1)[a]] + [0.0] * (N_DERIV - 1)
        for n in range(N_DERIV):
            out[n, a] = abs(_horner(c, 0.0, n) - want0[n])
            out[N_DERIV + n, a] = abs(_horner(c, 1.0, n) - want1[n])
    return out


# -- tracking controller -------------------------------------------------------


@dataclass(frozen=True)
class RPYTCommand:
    roll: float
    pitch: float
    yawrate: float
    thrust: float


@dataclass(frozen=True)
class ControllerGains:
    kp: tuple[float, float, float] = (6.0, 6.0, 8.0)
    kd: tuple[float, float, float] = (4.2, 4.2, 5.0)
    kp_yaw: float = 2.0
    tilt_limit: float = 0.5
    mass: float = 1.67
    gravity: float = 9.81
    thrust_to_weight: float = 2.2

    def __post_init__(self):
        if min(self.kp) <= 0 or min(self.kd) < 0 or self.kp_yaw <= 0:
            raise ValueError("gains must be positive")
        if not 0.0 < self.tilt_limit < math.pi / 2:
            raise ValueError("tilt_limit must lie in (0, pi/2)")
        if self.mass <= 0 or self.gravity <= 0 or self.thrust_to_weight <= 1:
            raise ValueError("bad vehicle constants")

    @property
    def max_thrust(self) -> float:
        return self.thrust_to_weight * self.mass * self.gravity

    @property
    def hover_thrust(self) -> float:
        return self.mass * self.gravity / self.max_thrust


def _clamp(v: float, lo: float, hi: float) -> float:
    return lo if v < lo else hi if v > hi else v


def track(
    reference: ReferenceState,
    position: Sequence[float],
    velocity: Sequence[float],
    yaw: float,
    gains: ControllerGains,
) -> RPYTCommand:
    """PD + feedforward on position, mapped to a tilted thrust vector.

    Positive pitch tilts the thrust forward along the heading; positive
    roll tilts it to the right.
    """
    ref = reference.pose
    rp = (ref.x, ref.y, ref.z)
    kp, kd = gains.kp, gains.kd
    f = [
        reference.acceleration[i] + kp[i] * (rp[i] - position[i]) + kd[i] * (reference.velocity[i] - velocity[i])
        for i in range(3)
    ]
    f[2] += gains.gravity
    c, s = math.cos(yaw), math.sin(yaw)
    f_fwd = c * f[0] + s * f[1]
    f_left = -s * f[0] + c * f[1]
    lim = gains.tilt_limit
    # rotors cannot pull downward; keep the tilt continuous when the demand is
    f_up = max(f[2], 0.1 * gains.gravity)
    pitch = _clamp(math.atan2(f_fwd, f_up), -lim, lim)
    roll = _clamp(math.atan2(-f_left, math.hypot(f_fwd, f_up)), -lim, lim)
    norm = math.sqrt(f[0] * f[0] + f[1] * f[1] + f[2] * f[2])
    thrust = _clamp(norm * gains.mass / gains.max_thrust, 0.0, 1.0)
    yawrate = gains.kp_yaw * wrap_angle(ref.yaw - yaw)
    return RPYTCommand(roll, pitch, yawrate, thrust)
