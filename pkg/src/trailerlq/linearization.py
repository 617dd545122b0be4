"""Jacobians of the Frenet error dynamics and the straight-line model."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as kern
from .errors import SingularConfiguration, TubeViolation
from .frenet import TOL_TUBE, PathSample, error_dynamics
from .vehicle import TOL_JOINT, VehicleGeometry


@dataclass(frozen=True)
class LinearizedDynamics:
    """A (4x4) and B (4x1), both including the v3 factor; state order z3, etheta3, ebeta3, ebeta2."""

    A: np.ndarray
    B: np.ndarray
    err: tuple
    u_tilde: float
    ref: PathSample
    v3: float


def _check_point(err, u_tilde, ref: PathSample, geometry: VehicleGeometry):
    if 1.0 - ref.kappa0 * err[0] <= TOL_TUBE or abs(err[1]) >= math.pi / 2 - TOL_JOINT:
        raise TubeViolation("evaluation point outside the Frenet tube")
    b3, b2 = err[2] + ref.beta3_0, err[3] + ref.beta2_0
    if max(abs(b3), abs(b2), abs(ref.beta3_0), abs(ref.beta2_0)) >= math.pi / 2 - TOL_JOINT:
        raise SingularConfiguration("joint angle at the +-pi/2 bound")


def jacobians(err, u_tilde: float, ref: PathSample, geometry: VehicleGeometry,
              v3: float) -> LinearizedDynamics:
    """Closed-form partial derivatives of the error dynamics at (err, u_tilde)."""
    _check_point(err, u_tilde, ref, geometry)
    (a12, a21, a22, a23, a31, a32, a33, a34, a41, a42, a43, a44, b3, b4) = kern.jacobian_entries(
        err[0], err[1], err[2], err[3], u_tilde, ref.beta3_0, ref.beta2_0, ref.u0,
        *geometry.lengths)
    A = v3 * np.array([
        [0.0, a12, 0.0, 0.0],
        [a21, a22, a23, 0.0],
        [a31, a32, a33, a34],
        [a41, a42, a43, a44],
    ])
    B = v3 * np.array([[0.0], [0.0], [b3], [b4]])
    return LinearizedDynamics(A, B, tuple(err), u_tilde, ref, v3)


def _central_jacobian(x0, ref, geometry, v3, h):
    J = np.empty((4, 5))
    for j in range(5):
        xp = x0.copy()
        xm = x0.copy()
        xp[j] += h
        xm[j] -= h
        fp = error_dynamics(xp[:4], xp[4], ref, geometry, v3)[1]
        fm = error_dynamics(xm[:4], xm[4], ref, geometry, v3)[1]
        J[:, j] = (fp - fm) / (2 * h)
    return J


def finite_difference_jacobians(err, u_tilde: float, ref: PathSample, geometry: VehicleGeometry,
                                v3: float, h: float = 1e-6, h_check: float | None = 1e-5,
                                rtol: float = 1e-6) -> LinearizedDynamics:
    """Central differences of ``error_dynamics`` in the four states and the input.

    A second pass with step ``h_check`` guards against cancellation; a
    disagreement beyond ``rtol`` raises ``FloatingPointError``.
    """
    x0 = np.array([*err, u_tilde], dtype=float)
    J = _central_jacobian(x0, ref, geometry, v3, h)
    if h_check is not None:
        J2 = _central_jacobian(x0, ref, geometry, v3, h_check)
        gap = np.max(np.abs(J - J2)) / (1.0 + np.max(np.abs(J)))
        if gap > rtol:
            raise FloatingPointError(f"difference steps disagree by {gap:.2e}")
    return LinearizedDynamics(J[:, :4], J[:, 4:], tuple(err), u_tilde, ref, v3)


def straight_line_model(geometry: VehicleGeometry, v3: float) -> tuple[np.ndarray, np.ndarray]:
    """A and B around a straight nominal path (zero joint angles and input)."""
    L1, L2, L3, M1 = geometry.lengths
    A = v3 * np.array([
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0 / L3, 0.0],
        [0.0, 0.0, -1.0 / L3, 1.0 / L2],
        [0.0, 0.0, 0.0, -1.0 / L2],
    ])
    B = v3 * np.array([[0.0], [0.0], [-M1 / (L1 * L2)], [(L2 + M1) / (L1 * L2)]])
    return A, B


def open_loop_poles(geometry: VehicleGeometry, v3: float) -> np.ndarray:
    """Closed-form spectrum {0, 0, -v3/L3, -v3/L2} of the straight-line A."""
    return np.array([0.0, 0.0, -v3 / geometry.L3, -v3 / geometry.L2])
