"""Kinematic model of the general 2-trailer (truck, off-axle dolly, trailer)."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from . import _kernels as kern
from .errors import OutOfRange, SingularConfiguration

TOL_JOINT = 1e-3
TOL_C1 = 1e-6


@dataclass(frozen=True)
class VehicleGeometry:
    """Lengths in metres: truck wheelbase, dolly-to-hitch, trailer-to-dolly, hitch offset."""

    L1: float = 3.8
    L2: float = 2.8
    L3: float = 6.6
    M1: float = 0.72

    def __post_init__(self):
        if not (self.L1 > 0 and self.L2 > 0 and self.L3 > 0 and self.M1 >= 0):
            raise ValueError(f"invalid geometry {self}")

    @property
    def lengths(self) -> tuple[float, float, float, float]:
        return self.L1, self.L2, self.L3, self.M1


class VehicleState(NamedTuple):
    x3: float
    y3: float
    theta3: float
    beta3: float
    beta2: float


@dataclass(frozen=True)
class ControlInput:
    """Substituted steering input ``u = tan(alpha)``."""

    u: float

    @classmethod
    def from_angle(cls, alpha: float) -> "ControlInput":
        return cls(steering_to_input(alpha))

    @property
    def alpha(self) -> float:
        return input_to_steering(self.u)


@dataclass(frozen=True)
class FeasibilityReport:
    violations: tuple[str, ...] = field(default_factory=tuple)
    c1: float = 1.0

    @property
    def valid(self) -> bool:
        return not self.violations


def coupling_factor_c1(beta2: float, u: float, geometry: VehicleGeometry) -> float:
    return kern.coupling(beta2, u, geometry.L1, geometry.M1)


def steering_to_input(alpha: float) -> float:
    if not abs(alpha) < math.pi / 2:
        raise OutOfRange(f"steering angle {alpha} outside (-pi/2, pi/2)")
    return math.tan(alpha)


def input_to_steering(u: float) -> float:
    return math.atan(u)


def feasibility_guard(state, u: float, geometry: VehicleGeometry,
                      tol: float = TOL_JOINT, tol_c1: float = TOL_C1) -> FeasibilityReport:
    """Report which singularity conditions the configuration violates."""
    _, _, _, beta3, beta2 = state
    bound = math.pi / 2 - tol
    violations = []
    if abs(beta3) >= bound:
        violations.append("beta3")
    if abs(beta2) >= bound:
        violations.append("beta2")
    c1 = coupling_factor_c1(beta2, u, geometry)
    if abs(c1) < tol_c1:
        violations.append("c1")
    return FeasibilityReport(tuple(violations), c1)


def state_derivative(state, u: float, v3: float, geometry: VehicleGeometry,
                     check: bool = True) -> np.ndarray:
    """Time derivative ``v3 * f(p, u)`` of the global configuration."""
    if check:
        report = feasibility_guard(state, u, geometry)
        if not report.valid:
            raise SingularConfiguration(f"infeasible configuration: {', '.join(report.violations)}")
    _, _, theta3, beta3, beta2 = state
    return np.array(kern.vehicle_rhs(theta3, beta3, beta2, u, v3, *geometry.lengths))


def rk4_step(fun: Callable[[float, np.ndarray], np.ndarray], t: float, y: np.ndarray,
             h: float) -> np.ndarray:
    k1 = fun(t, y)
    k2 = fun(t + h / 2, y + h / 2 * k1)
    k3 = fun(t + h / 2, y + h / 2 * k2)
    k4 = fun(t + h, y + h * k3)
    return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate(state0, control_schedule: Callable[[float], float], v3: float, dt: float,
              n_steps: int, geometry: VehicleGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Classical RK4 rollout of the open-loop model.

    ``control_schedule(t)`` returns u. Returns ``(t, states)`` with ``states[0] == state0``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    states = np.empty((n_steps + 1, 5))
    states[0] = state0
    step = 0

    def fun(t, y):
        try:
            return state_derivative(y, control_schedule(t), v3, geometry)
        except SingularConfiguration as exc:
            raise SingularConfiguration(str(exc), step) from None

    for step in range(n_steps):
        states[step + 1] = rk4_step(fun, step * dt, states[step], dt)
    return dt * np.arange(n_steps + 1), states
