"""Nominal paths, projection onto them, and the Frenet-frame error dynamics."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from . import _kernels as kern
from .errors import AmbiguousProjection, OutOfRange, SingularConfiguration, TubeViolation
from .vehicle import TOL_C1, TOL_JOINT, VehicleGeometry, feasibility_guard, rk4_step

TOL_TUBE = 1e-3
PATH_COLUMNS = ("s", "x", "y", "theta", "beta3", "beta2", "u0", "kappa")


class ErrorState(NamedTuple):
    z3: float
    etheta3: float
    ebeta3: float
    ebeta2: float


@dataclass(frozen=True)
class PathSample:
    s: float
    x3_0: float
    y3_0: float
    theta3_0: float
    beta3_0: float
    beta2_0: float
    u0: float
    kappa0: float


@dataclass(frozen=True)
class TubeValidity:
    valid: bool
    denominator: float
    margin: float


def path_curvature(beta3_0: float, geometry: VehicleGeometry) -> float:
    if not abs(beta3_0) < math.pi / 2:
        raise OutOfRange(f"beta3_0 = {beta3_0} outside (-pi/2, pi/2)")
    return math.tan(beta3_0) / geometry.L3


@dataclass
class NominalPath:
    """Arc-length sampled reference satisfying dp0/ds = f(p0, u0).

    ``s`` grows along the trailer heading. A reversing vehicle (v3 < 0)
    therefore traverses the path towards decreasing s.
    """

    s: np.ndarray
    x: np.ndarray
    y: np.ndarray
    theta: np.ndarray
    beta3: np.ndarray
    beta2: np.ndarray
    u0: np.ndarray
    kappa: np.ndarray
    geometry: VehicleGeometry = field(default_factory=VehicleGeometry)
    v3: float = -1.0

    def __post_init__(self):
        for name in PATH_COLUMNS:
            setattr(self, name, np.ascontiguousarray(getattr(self, name), dtype=float))
        if self.s.size < 2:
            raise ValueError("a path needs at least two samples")
        if np.any(np.diff(self.s) <= 0):
            raise ValueError("path arc length must be strictly increasing")
        self.X = np.ascontiguousarray(
            np.column_stack([self.x, self.y, self.theta, self.beta3, self.beta2]))
        L1, L2, L3, M1 = self.geometry.lengths
        g3, g2 = _joint_rates_vec(self.beta3, self.beta2, self.u0, self.geometry)
        self.D = np.ascontiguousarray(np.column_stack(
            [np.cos(self.theta), np.sin(self.theta), np.tan(self.beta3) / L3, g3, g2]))
        self.U = np.ascontiguousarray(np.column_stack([self.u0, _derivative(self.s, self.u0)]))

    def __len__(self):
        return self.s.size

    @property
    def s_start(self) -> float:
        return float(self.s[0])

    @property
    def s_end(self) -> float:
        return float(self.s[-1])

    @property
    def length(self) -> float:
        return self.s_end - self.s_start

    def sample(self, i: int) -> PathSample:
        return PathSample(*(float(getattr(self, c)[i]) for c in PATH_COLUMNS))

    @property
    def samples(self) -> list[PathSample]:
        return [self.sample(i) for i in range(len(self))]

    def reference(self, s: float) -> PathSample:
        """Reference quantities at arbitrary s (cubic Hermite in every column).

        Pose and joint slopes come from the model; the feedforward slope from
        a difference stencil. Linear interpolation of u0 would leave a
        residual that shifts the error equilibrium by O(ds**2).
        """
        if not self.s_start <= s <= self.s_end:
            raise OutOfRange(f"s = {s} outside [{self.s_start}, {self.s_end}]")
        x, y, th, b3, b2, u0 = kern.reference_at(self.s, self.X, self.D, self.U, s)
        return PathSample(s, x, y, th, b3, b2, u0, math.tan(b3) / self.geometry.L3)

    def parameters(self) -> np.ndarray:
        """(n, 3) array of (beta3_0, beta2_0, u0)."""
        return np.column_stack([self.beta3, self.beta2, self.u0])

    def to_csv(self, path) -> None:
        Path(path).write_text(self.to_csv_string())

    def to_csv_string(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(PATH_COLUMNS) + "\n")
        data = np.column_stack([getattr(self, c) for c in PATH_COLUMNS])
        for row in data:
            buf.write(",".join(f"{v:.17g}" for v in row) + "\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, path, geometry: VehicleGeometry, v3: float = -1.0) -> "NominalPath":
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            if tuple(header) != PATH_COLUMNS:
                raise ValueError(f"unexpected path header {header}")
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        return cls(*data.T, geometry=geometry, v3=v3)


def _derivative(s, y) -> np.ndarray:
    """dy/ds: fourth-order central stencil on uniform grids, second order otherwise."""
    h = np.diff(s)
    if y.size < 5 or np.ptp(h) > 1e-9 * h.mean():
        return np.gradient(y, s, edge_order=2) if y.size > 2 else np.gradient(y, s)
    h = h.mean()
    d = np.gradient(y, h, edge_order=2)
    d[2:-2] = (y[:-4] - 8 * y[1:-3] + 8 * y[3:-1] - y[4:]) / (12 * h)
    return d


def _joint_rates_vec(beta3, beta2, u, geometry: VehicleGeometry):
    L1, L2, L3, M1 = geometry.lengths
    c1 = 1.0 + M1 / L1 * np.tan(beta2) * u
    g3 = (np.tan(beta2) - M1 / L1 * u) / (L2 * np.cos(beta3) * c1) - np.tan(beta3) / L3
    g2 = (u / (L1 * np.cos(beta2)) - np.tan(beta2) / L2 + M1 / (L1 * L2) * u) / (np.cos(beta3) * c1)
    return g3, g2


def generate_nominal_path(steering_profile: Callable[[float], float], s_end: float,
                          ds: float, geometry: VehicleGeometry, v3: float = -1.0,
                          initial=(0.0, 0.0, 0.0, 0.0, 0.0)) -> NominalPath:
    """Integrate dp0/ds = f(p0, u0(s)) with RK4 on a uniform arc-length grid.

    Integration runs towards increasing s, where the joint-angle dynamics are
    stable; ``v3`` only records the direction the path will be driven in.
    """
    if ds <= 0:
        raise ValueError("ds must be positive")
    n = int(round(s_end / ds))
    s = ds * np.arange(n + 1)
    p = np.empty((n + 1, 5))
    p[0] = initial
    L = geometry.lengths
    step = 0

    def fun(si, y):
        u = steering_profile(si)
        report = feasibility_guard(y, u, geometry)
        if not report.valid:
            raise SingularConfiguration(
                f"path generation hit {', '.join(report.violations)} at s={si:.3f}", step)
        return np.array(kern.vehicle_rhs(y[2], y[3], y[4], u, 1.0, *L))

    for step in range(n):
        p[step + 1] = rk4_step(fun, s[step], p[step], ds)
    u0 = np.array([steering_profile(si) for si in s])
    kappa = np.tan(p[:, 3]) / geometry.L3
    return NominalPath(s, p[:, 0], p[:, 1], p[:, 2], p[:, 3], p[:, 4], u0, kappa,
                       geometry=geometry, v3=v3)


def _smoothstep(t: float) -> float:
    t = min(max(t, 0.0), 1.0)
    return t * t * t * (t * (6.0 * t - 15.0) + 10.0)


@dataclass(frozen=True)
class EightProfile:
    """Antisymmetric steering schedule u0(s) producing a closed figure-eight.

    Lead-in straight, left lobe, middle straight of twice the lead-in length,
    right lobe, lead-out straight. Each lobe ramps u0 to +-amplitude with a
    quintic smoothstep, holds it, and ramps back, so u0 is twice
    differentiable. The defaults close the eight: the path starts, crosses
    itself and ends at the origin.
    """

    amplitude: float = 0.29
    ramp: float = 16.0
    hold: float = 32.0
    straight: float = 16.0

    @property
    def lobe(self) -> float:
        return 2 * self.ramp + self.hold

    @property
    def length(self) -> float:
        return 4 * self.straight + 2 * self.lobe

    def __call__(self, s: float) -> float:
        l0 = self.straight
        if s < l0:
            return 0.0
        if s < l0 + self.lobe:
            return self._lobe(s - l0)
        if s < 3 * l0 + self.lobe:
            return 0.0
        if s < 3 * l0 + 2 * self.lobe:
            return -self._lobe(s - 3 * l0 - self.lobe)
        return 0.0

    def _lobe(self, s: float) -> float:
        a, r = self.amplitude, self.ramp
        if s < r:
            return a * _smoothstep(s / r)
        if s < r + self.hold:
            return a
        return a * (1.0 - _smoothstep((s - r - self.hold) / r))


def eight_path(geometry: VehicleGeometry = VehicleGeometry(), v3: float = -1.0,
               profile: EightProfile = EightProfile(), ds: float = 0.01) -> NominalPath:
    return generate_nominal_path(profile, profile.length, ds, geometry, v3)


def project_onto_path(pose, path: NominalPath, s_guess: float | None = None,
                      window: float = 2.0, on_tie: str = "smallest",
                      tie_tol: float = 1e-9) -> tuple[float, float]:
    """Closest point (s*, signed z3) of ``pose[:2]`` on the path.

    With ``s_guess`` the search is restricted to ``s_guess +- window``.
    Otherwise all samples are scanned; equally close non-adjacent samples are
    resolved to the smallest s, or raise when ``on_tie == "raise"``.
    """
    qx, qy = float(pose[0]), float(pose[1])
    S, X, D = path.s, path.X, path.D
    if s_guess is not None:
        s, z = kern.project_window(S, X, D, qx, qy, float(s_guess), window)
        return float(s), float(z)
    d2 = (X[:, 0] - qx) ** 2 + (X[:, 1] - qy) ** 2
    i0 = int(np.argmin(d2))
    d0 = math.sqrt(d2[i0])
    near = np.flatnonzero(np.sqrt(d2) <= d0 + tie_tol)
    far = near[np.abs(near - i0) > 1]
    candidates = [i0] + [int(i) for i in far]
    if len(candidates) > 1:
        refined = sorted(kern.refine_projection(S, X, D, qx, qy, S[i]) for i in candidates)
        if on_tie == "raise":
            raise AmbiguousProjection("projection is not unique", [float(r[0]) for r in refined])
        s, z = refined[0]
        return float(s), float(z)
    s, z = kern.refine_projection(S, X, D, qx, qy, S[i0])
    return float(s), float(z)


def tube_validity(err, ref: PathSample, tol_tube: float = TOL_TUBE,
                  tol: float = TOL_JOINT) -> TubeValidity:
    den = 1.0 - ref.kappa0 * err[0]
    valid = den > tol_tube and abs(err[1]) < math.pi / 2 - tol
    return TubeValidity(bool(valid), den, den - tol_tube)


def global_to_error(state, path: NominalPath, s: float) -> ErrorState:
    """Frenet error of a global configuration relative to the reference at s."""
    ref = path.reference(s)
    cx, dx, _ = kern.hermite(path.s, path.X, path.D, s, 0)
    cy, dy, _ = kern.hermite(path.s, path.X, path.D, s, 1)
    z3 = ((state[0] - cx) * (-dy) + (state[1] - cy) * dx) / math.hypot(dx, dy)
    return ErrorState(
        z3,
        kern.wrap_angle(state[2] - ref.theta3_0),
        kern.wrap_angle(state[3] - ref.beta3_0),
        kern.wrap_angle(state[4] - ref.beta2_0),
    )


def error_dynamics(err, u_tilde: float, ref: PathSample, geometry: VehicleGeometry,
                   v3: float, check: bool = True) -> tuple[float, np.ndarray]:
    """Progress rate ds/dt and the error derivatives at (err, u_tilde) around ``ref``."""
    z3, eth, eb3, eb2 = err
    if check:
        tube = tube_validity(err, ref)
        if not tube.valid:
            raise TubeViolation(f"outside the Frenet tube (1 - kappa*z3 = {tube.denominator:.4g},"
                                f" heading error {eth:.4g})")
        b3, b2, u = eb3 + ref.beta3_0, eb2 + ref.beta2_0, u_tilde + ref.u0
        bound = math.pi / 2 - TOL_JOINT
        if abs(b3) >= bound or abs(b2) >= bound:
            raise SingularConfiguration("joint angle at the +-pi/2 bound")
        if abs(kern.coupling(b2, u, geometry.L1, geometry.M1)) < TOL_C1:
            raise SingularConfiguration("coupling factor C2 vanishes")
    out = kern.error_rhs(z3, eth, eb3, eb2, u_tilde, ref.beta3_0, ref.beta2_0, ref.u0, v3,
                         *geometry.lengths)
    return out[0], np.array(out[1:])
