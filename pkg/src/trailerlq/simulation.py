"""Closed-loop rollouts: plant + path feedforward + LQ feedback, with Lyapunov traces."""
from __future__ import annotations

import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import _kernels as kern
from .frenet import TOL_TUBE, NominalPath, error_dynamics
from .ldi import LyapunovCertificate
from .vehicle import TOL_C1, TOL_JOINT, VehicleGeometry

TRACE_COLUMNS = ("t", "s", "x3", "y3", "theta3", "beta3", "beta2", "z3", "etheta3", "ebeta3",
                 "ebeta2", "u", "u0", "V", "Vdot", "flag")
FLAGS = {
    kern.OK: "ok",
    kern.TUBE_VIOLATION: "tube_violation",
    kern.SINGULAR_JOINT: "singular_joint",
    kern.SINGULAR_COUPLING: "singular_coupling",
    kern.END_OF_PATH: "end_of_path",
}
# end of path only truncates the run; it is not a failure
FAILURE_FLAGS = (kern.TUBE_VIOLATION, kern.SINGULAR_JOINT, kern.SINGULAR_COUPLING)
SMALL_SIGNAL = 0.05


@dataclass(frozen=True)
class SimulationConfig:
    """One scenario. ``s0`` defaults to 1 m inside the path end the vehicle starts from.

    ``duration`` defaults to one traversal of the path, stopping 2 m short of
    the far end so transients that slow the progress along s still fit.
    ``u_max`` saturates the total input u when given.
    """

    path: NominalPath
    K: np.ndarray
    e0: tuple = (0.0, 0.0, 0.0, 0.0)
    v3: float = -1.0
    geometry: VehicleGeometry = field(default_factory=VehicleGeometry)
    dt: float = 0.01
    duration: float | None = None
    s0: float | None = None
    u_max: float | None = None
    window: float = 2.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.v3 == 0:
            raise ValueError("v3 must be non-zero")
        if self.duration is not None and not self.duration > 0:
            raise ValueError("duration must be positive")
        object.__setattr__(self, "K", np.asarray(getattr(self.K, "K", self.K), dtype=float).reshape(4))
        object.__setattr__(self, "e0", tuple(float(e) for e in self.e0))

    @property
    def start_s(self) -> float:
        if self.s0 is not None:
            return float(self.s0)
        return self.path.s_end - 1.0 if self.v3 < 0 else self.path.s_start + 1.0

    @property
    def n_steps(self) -> int:
        T = self.duration if self.duration is not None else (self.path.length - 3.0) / abs(self.v3)
        return max(1, int(round(T / self.dt)))


@dataclass(frozen=True)
class SimulationTrace:
    """Per-step records; row k is at t = k * dt.

    ``s`` is the projection parameter. Paths are parameterized along the
    trailer heading, so a reversing run (v3 < 0) moves towards smaller s.
    """

    t: np.ndarray
    s: np.ndarray
    states: np.ndarray
    errors: np.ndarray
    u: np.ndarray
    u0: np.ndarray
    tube_margin: np.ndarray
    status: int
    dt: float
    v3: float
    V: np.ndarray | None = None
    Vdot: np.ndarray | None = None
    vdot_check: float | None = None

    def __len__(self):
        return self.t.size

    @property
    def u_tilde(self) -> np.ndarray:
        return self.u - self.u0

    @property
    def flag(self) -> str:
        return FLAGS[self.status]

    @property
    def failed(self) -> bool:
        return self.status in FAILURE_FLAGS

    @property
    def error_norm(self) -> np.ndarray:
        return np.linalg.norm(self.errors, axis=1)

    def to_csv_string(self) -> str:
        n = len(self)
        nan = np.full(n, np.nan)
        flags = np.zeros(n)
        flags[-1] = self.status
        data = np.column_stack([
            self.t, self.s, self.states, self.errors, self.u, self.u0,
            self.V if self.V is not None else nan,
            self.Vdot if self.Vdot is not None else nan, flags,
        ])
        buf = io.StringIO()
        buf.write(",".join(TRACE_COLUMNS) + "\n")
        for row in data:
            buf.write(",".join(f"{v:.17g}" for v in row[:-1]) + f",{int(row[-1])}\n")
        return buf.getvalue()

    def to_csv(self, path) -> None:
        Path(path).write_text(self.to_csv_string())


def initial_state(path: NominalPath, s0: float, e0) -> np.ndarray:
    """Global configuration whose Frenet error at ``s0`` is ``e0``."""
    ref = path.reference(s0)
    _, dx, _ = kern.hermite(path.s, path.X, path.D, s0, 0)
    _, dy, _ = kern.hermite(path.s, path.X, path.D, s0, 1)
    n = math.hypot(dx, dy)
    z3, eth, eb3, eb2 = e0
    return np.array([
        ref.x3_0 - z3 * dy / n, ref.y3_0 + z3 * dx / n,
        ref.theta3_0 + eth, ref.beta3_0 + eb3, ref.beta2_0 + eb2,
    ])


def _u_max(cfg: SimulationConfig) -> float:
    return -1.0 if cfg.u_max is None else float(cfg.u_max)


def simulate_closed_loop(cfg: SimulationConfig) -> SimulationTrace:
    """Fixed-step RK4 rollout of the global plant under u = u0(s) - K e.

    The run stops early on a tube violation, a joint or coupling singularity,
    or at the end of the path; the returned trace is flagged accordingly and
    its last row holds the state that raised the flag.
    """
    path, geo = cfg.path, cfg.geometry
    s0 = cfg.start_s
    ref = path.reference(s0)
    den0 = 1.0 - ref.kappa0 * cfg.e0[0]
    if den0 <= TOL_TUBE or abs(cfg.e0[1]) >= math.pi / 2 - TOL_JOINT:
        # the projection is meaningless outside the tube; report the requested state only
        p0 = np.array([ref.x3_0, ref.y3_0, ref.theta3_0 + cfg.e0[1],
                       ref.beta3_0 + cfg.e0[2], ref.beta2_0 + cfg.e0[3]])
        u = ref.u0 - float(cfg.K @ np.asarray(cfg.e0))
        return SimulationTrace(np.zeros(1), np.array([s0]), p0[None, :], np.array([cfg.e0]),
                               np.array([u]), np.array([ref.u0]), np.array([den0 - TOL_TUBE]),
                               kern.TUBE_VIOLATION, cfg.dt, cfg.v3)
    p0 = initial_state(path, s0, cfg.e0)
    n, status, S, P, E, U, U0, DEN = kern.simulate_closed_loop(
        path.s, path.X, path.D, path.U, p0, s0, cfg.v3, cfg.K, cfg.dt, cfg.n_steps, cfg.window,
        _u_max(cfg), TOL_JOINT, TOL_C1, TOL_TUBE, *geo.lengths)
    return SimulationTrace(cfg.dt * np.arange(n), S[:n].copy(), P[:n].copy(), E[:n].copy(),
                           U[:n].copy(), U0[:n].copy(), DEN[:n] - TOL_TUBE, int(status),
                           cfg.dt, cfg.v3)


def simulate_batch(configs, threads: int = 1) -> list[SimulationTrace]:
    """Independent scenarios, optionally on a thread pool."""
    if threads <= 1:
        return [simulate_closed_loop(c) for c in configs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(simulate_closed_loop, configs))


def simulate_frenet(cfg: SimulationConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Integrate (s, e) directly in the Frenet frame. Returns (t, s, errors)."""
    path = cfg.path
    Y = kern.simulate_frenet(path.s, path.X, path.D, path.U, cfg.start_s, np.asarray(cfg.e0),
                             cfg.v3, cfg.K, cfg.dt, cfg.n_steps, _u_max(cfg),
                             *cfg.geometry.lengths)
    return cfg.dt * np.arange(len(Y)), Y[:, 0].copy(), Y[:, 1:].copy()


def lyapunov_trace(trace: SimulationTrace, cert: LyapunovCertificate, path: NominalPath,
                   geometry: VehicleGeometry = VehicleGeometry()) -> SimulationTrace:
    """Attach V = e^T P e and the analytic V' = 2 e^T P e'.

    ``vdot_check`` holds the largest deviation of V' from a central difference
    of V over interior samples, relative to max(|V'|, 2 eps V, 1e-12).
    """
    P = cert.P
    E = trace.errors
    V = np.einsum("ni,ij,nj->n", E, P, E)
    Vdot = np.empty_like(V)
    for k in range(len(trace)):
        s = min(max(trace.s[k], path.s_start), path.s_end)
        _, edot = error_dynamics(E[k], trace.u[k] - trace.u0[k], path.reference(s), geometry,
                                 trace.v3, check=False)
        Vdot[k] = 2.0 * E[k] @ P @ edot
    check = None
    if len(V) >= 3:
        fd = (V[2:] - V[:-2]) / (2.0 * trace.dt)
        scale = np.maximum(np.maximum(np.abs(Vdot[1:-1]), 2.0 * cert.eps * V[1:-1]), 1e-12)
        check = float(np.max(np.abs(fd - Vdot[1:-1]) / scale))
    return replace(trace, V=V, Vdot=Vdot, vdot_check=check)


@dataclass(frozen=True)
class TrackingReport:
    max_abs_z3: float
    rms_z3: float
    max_abs_etheta3: float
    max_abs_ebeta3: float
    max_abs_ebeta2: float
    final_error_norm: float
    settling_time: float
    end_time: float
    flag: str
    failed: bool


def tracking_report(trace: SimulationTrace, threshold: float = SMALL_SIGNAL) -> TrackingReport:
    """Summary metrics; settling time is the first t after which ||e|| <= threshold for good."""
    E = trace.errors
    norm = trace.error_norm
    above = np.flatnonzero(norm > threshold)
    if above.size == 0:
        settle = 0.0
    elif above[-1] == len(norm) - 1:
        settle = math.inf
    else:
        settle = float(trace.t[above[-1] + 1])
    mx = np.max(np.abs(E), axis=0)
    return TrackingReport(float(mx[0]), float(np.sqrt(np.mean(E[:, 0] ** 2))), float(mx[1]),
                          float(mx[2]), float(mx[3]), float(norm[-1]), settle,
                          float(trace.t[-1]), trace.flag, trace.failed)


@dataclass(frozen=True)
class DecayCheck:
    """Small-signal Lyapunov decay along a trace.

    Counted from the first sample with ||e|| < threshold: the worst relative
    step increase (V[k+1] - V[k]) / V[k] and the worst V' + 2 eps V.
    """

    entry_index: int
    max_relative_increase: float
    max_decay_violation: float
    final_ratio: float


def decay_check(trace: SimulationTrace, eps: float, threshold: float = SMALL_SIGNAL) -> DecayCheck:
    if trace.V is None:
        raise ValueError("trace has no Lyapunov values; run lyapunov_trace first")
    V, Vdot = trace.V, trace.Vdot
    ratio = float(V[-1] / V[0]) if V[0] > 0 else 0.0
    inside = np.flatnonzero(trace.error_norm < threshold)
    if inside.size == 0:
        return DecayCheck(-1, math.inf, math.inf, ratio)
    k0 = int(inside[0])
    v = V[k0:]
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(v[:-1] > 0, np.diff(v) / v[:-1], 0.0)
    inc = float(np.max(rel)) if rel.size else -math.inf
    viol = float(np.max(Vdot[k0:] + 2.0 * eps * V[k0:]))
    return DecayCheck(k0, inc, viol, ratio)
