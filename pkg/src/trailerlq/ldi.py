"""Common quadratic Lyapunov certificates for the closed loop over a path set.

Pipeline: interval bounds on the ten varying entries of the closed-loop
Jacobian, the 2**10 box vertices, a barrier-method solve of

    minimize mu  s.t.  I <= P <= mu I,  A_i^T P + P A_i + 2 eps P <= 0,

and an independent eigenvalue re-check of the result.
"""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import _kernels as kern
from ._accel import NUMBA_ENABLED
from .errors import EmptyFeasibleSet, Infeasible, MaxIterations
from .frenet import PathSample
from .kvfile import floats, format_kv, parse_kv
from .linearization import jacobians
from .vehicle import VehicleGeometry

ENTRY_NAMES = (
    "a21", "a23", "a31-b3k1", "-b3k2", "a33-b3k3",
    "a34-b3k4", "a41-b4k1", "-b4k2", "a43-b4k3", "a44-b4k4",
)
# (row, col) of each varying entry inside the 4x4 closed-loop matrix
ENTRY_POSITIONS = ((1, 0), (1, 2), (2, 0), (2, 1), (2, 2), (2, 3), (3, 0), (3, 1), (3, 2), (3, 3))
N_VERTICES = 2 ** len(ENTRY_NAMES)
TOL_LMI = 1e-7


class PathParameterPoint(NamedTuple):
    beta3_0: float
    beta2_0: float
    u0: float


@dataclass(frozen=True)
class PathParameterSet:
    """Polytope in (beta3_0, beta2_0, atan u0); limits in radians except ``u0_max``.

    Defaults: |beta3_0| <= 40 deg, |beta2_0| <= 20 deg, |u0| <= 0.37,
    |beta2_0 - beta3_0| <= 20 deg, |atan u0 - beta2_0| <= 10 deg.
    """

    beta3_max: float = math.radians(40.0)
    beta2_max: float = math.radians(20.0)
    u0_max: float = 0.37
    joint_diff_max: float = math.radians(20.0)
    steer_diff_max: float = math.radians(10.0)

    @classmethod
    def origin_only(cls) -> "PathParameterSet":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0)

    @property
    def limits(self) -> np.ndarray:
        return np.array([self.beta3_max, self.beta2_max, self.u0_max,
                         self.joint_diff_max, self.steer_diff_max])

    def inequalities(self) -> tuple[np.ndarray, np.ndarray]:
        """(G, h) with G @ (beta3_0, beta2_0, atan u0) <= h."""
        rows = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1], [-1, 1, 0], [0, -1, 1]], dtype=float)
        h = np.array([self.beta3_max, self.beta2_max, math.atan(self.u0_max),
                      self.joint_diff_max, self.steer_diff_max])
        return np.vstack([rows, -rows]), np.concatenate([h, h])

    def utilization(self, points) -> np.ndarray:
        """Per-constraint max |value| / limit over ``points`` (n, 3)."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        b3, b2, u = p[:, 0], p[:, 1], p[:, 2]
        vals = np.abs(np.stack([b3, b2, u, b2 - b3, np.arctan(u) - b2]))
        return vals.max(axis=1) / self.limits


def parameter_set_contains(point, pset: PathParameterSet = PathParameterSet(),
                           tol: float = 1e-12) -> bool:
    b3, b2, u = point
    return (abs(b3) <= pset.beta3_max + tol and abs(b2) <= pset.beta2_max + tol
            and abs(u) <= pset.u0_max + tol and abs(b2 - b3) <= pset.joint_diff_max + tol
            and abs(math.atan(u) - b2) <= pset.steer_diff_max + tol)


def _gain_array(K) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(getattr(K, "K", K), dtype=float).reshape(4))


def closed_loop_jacobian(point, geometry: VehicleGeometry, K, v3: float) -> np.ndarray:
    """Exact closed-loop Jacobian A - B K at zero error on the nominal path."""
    b3, b2, u = point
    ref = PathSample(0.0, 0.0, 0.0, 0.0, b3, b2, u, math.tan(b3) / geometry.L3)
    lin = jacobians((0.0, 0.0, 0.0, 0.0), 0.0, ref, geometry, v3)
    return lin.A - lin.B @ _gain_array(K).reshape(1, 4)


def closed_loop_entries(points, geometry: VehicleGeometry, K) -> np.ndarray:
    """Vectorized (n, 10) varying entries (without v3) for (n, 3) parameter points."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    b3, b2, u = p[:, 0], p[:, 1], p[:, 2]
    L1, L2, L3, M1 = geometry.lengths
    k1, k2, k3, k4 = _gain_array(K)
    m = M1 / L1
    t3, t2 = np.tan(b3), np.tan(b2)
    cb3, cb2 = np.cos(b3), np.cos(b2)
    c = 1.0 + m * t2 * u
    sec2 = 1.0 + t2 * t2
    g3 = (t2 - m * u) / (L2 * cb3 * c) - t3 / L3
    n2 = u / (L1 * cb2) - t2 / L2 + M1 / (L1 * L2) * u
    g2 = n2 / (cb3 * c)
    a21 = -t3 * t3 / (L3 * L3)
    a23 = (1.0 + t3 * t3) / L3
    a31 = -t3 / L3 * g3
    a33 = np.sin(b3) * (t2 - m * u) / (L2 * cb3 ** 2 * c) - (1.0 + t3 * t3) / L3
    a34 = sec2 / (L2 * c * cb3) * (1.0 + (m * u - t2) * m * u / c)
    a41 = -t3 / L3 * g2
    a43 = np.sin(b3) * n2 / (cb3 ** 2 * c)
    a44 = (u * np.sin(b2) / (L1 * cb2 ** 2) - sec2 / L2) / (cb3 * c) - m * u * sec2 * n2 / (cb3 * c * c)
    bb3 = -(M1 / (L1 * L2 * cb3 * c) + (t2 - m * u) * m * t2 / (L2 * cb3 * c * c))
    bb4 = 1.0 / (cb3 * c) * (1.0 / (L1 * cb2) + M1 / (L1 * L2) - M1 * t2 / (L1 * c) * n2)
    return np.column_stack([
        a21, a23, a31 - bb3 * k1, -bb3 * k2, a33 - bb3 * k3, a34 - bb3 * k4,
        a41 - bb4 * k1, -bb4 * k2, a43 - bb4 * k3, a44 - bb4 * k4,
    ])


def assemble_closed_loop(entries, v3: float) -> np.ndarray:
    """Insert (n, 10) entries into the fixed skeleton; returns (n, 4, 4) including v3."""
    e = np.atleast_2d(entries)
    A = np.zeros((e.shape[0], 4, 4))
    A[:, 0, 1] = 1.0
    for j, (r, c) in enumerate(ENTRY_POSITIONS):
        A[:, r, c] = e[:, j]
    return v3 * A


# ---------------------------------------------------------------------------
# interval bounds


@dataclass(frozen=True)
class ElementBoundBox:
    """Ten intervals, one per varying closed-loop entry (v3 factor excluded)."""

    lower: np.ndarray
    upper: np.ndarray
    raw_lower: np.ndarray
    raw_upper: np.ndarray
    lower_at: np.ndarray = field(repr=False, default=None)
    upper_at: np.ndarray = field(repr=False, default=None)
    grid_points: int = 0
    settings: dict = field(default_factory=dict)

    def contains(self, entries, tol: float = 0.0) -> np.ndarray:
        e = np.atleast_2d(entries)
        return np.all((e >= self.lower - tol) & (e <= self.upper + tol), axis=1)


def _grid(limit: float, step: float) -> np.ndarray:
    if limit <= 0:
        return np.zeros(1)
    n = int(math.floor(limit / step + 1e-9))
    g = step * np.arange(-n, n + 1)
    if n * step < limit - 1e-12:
        g = np.concatenate([[-limit], g, [limit]])
    return g


def _scan_numpy(b3_grid, b2_grid, u_grid, limits, K, geometry):
    B3, B2 = np.meshgrid(b3_grid, b2_grid, indexing="ij")
    B3, B2 = B3.ravel(), B2.ravel()
    tol = 1e-12
    keep = (np.abs(B3) <= limits[0] + tol) & (np.abs(B2) <= limits[1] + tol) \
        & (np.abs(B2 - B3) <= limits[3] + tol)
    B3, B2 = B3[keep], B2[keep]
    lo = np.full(10, np.inf)
    hi = np.full(10, -np.inf)
    lo_at = np.zeros((10, 3))
    hi_at = np.zeros((10, 3))
    count = 0
    for u in u_grid:
        if abs(u) > limits[2] + tol:
            continue
        sel = np.abs(math.atan(u) - B2) <= limits[4] + tol
        if not sel.any():
            continue
        pts = np.column_stack([B3[sel], B2[sel], np.full(sel.sum(), u)])
        e = closed_loop_entries(pts, geometry, K)
        count += len(pts)
        imin, imax = e.argmin(axis=0), e.argmax(axis=0)
        for j in range(10):
            if e[imin[j], j] < lo[j]:
                lo[j] = e[imin[j], j]
                lo_at[j] = pts[imin[j]]
            if e[imax[j], j] > hi[j]:
                hi[j] = e[imax[j], j]
                hi_at[j] = pts[imax[j]]
    return lo, hi, lo_at, hi_at, count


def _merge(parts):
    lo = np.full(10, np.inf)
    hi = np.full(10, -np.inf)
    lo_at = np.zeros((10, 3))
    hi_at = np.zeros((10, 3))
    count = 0
    for plo, phi, plo_at, phi_at, pc in parts:
        count += pc
        for j in range(10):
            if plo[j] < lo[j]:
                lo[j], lo_at[j] = plo[j], plo_at[j]
            if phi[j] > hi[j]:
                hi[j], hi_at[j] = phi[j], phi_at[j]
    return lo, hi, lo_at, hi_at, count


def grid_extremes(pset: PathParameterSet, geometry: VehicleGeometry, K,
                  beta_step: float = math.radians(0.25), u0_step: float = 1e-3,
                  threads: int = 1, backend: str | None = None):
    """Min/max of every entry over the feasibility-filtered grid.

    ``backend`` is "numba", "numpy" or None (numba unless disabled).
    """
    backend = backend or ("numba" if NUMBA_ENABLED else "numpy")
    limits = pset.limits
    b3g = _grid(pset.beta3_max, beta_step)
    b2g = _grid(pset.beta2_max, beta_step)
    ug = _grid(pset.u0_max, u0_step)
    Karr = _gain_array(K)
    if backend == "numba":
        def run(chunk):
            return kern.grid_scan(b3g, b2g, np.ascontiguousarray(chunk), limits, Karr,
                                  *geometry.lengths)
    elif backend == "numpy":
        def run(chunk):
            return _scan_numpy(b3g, b2g, chunk, limits, Karr, geometry)
    else:
        raise ValueError(f"unknown backend {backend!r}")
    chunks = np.array_split(ug, max(1, min(threads * 4, ug.size))) if threads > 1 else [ug]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    return _merge(parts)


_DIRECTIONS = np.array([d for d in itertools.product((-1, 0, 1), repeat=3) if any(d)], dtype=float)


def _refine_extreme(start, j, sign, pset, geometry, Karr, step0, step_min=1e-6, max_evals=20000):
    """Pattern search in (beta3, beta2, atan u0) for the extreme of entry j.

    ``sign`` = +1 maximizes, -1 minimizes. Moves stay inside the polytope;
    the 26 lattice directions cover every edge direction of the set.
    """
    L = geometry.lengths
    vals = np.empty(10)

    def value(q):
        kern.closed_loop_entries(q[0], q[1], math.tan(q[2]), Karr[0], Karr[1], Karr[2], Karr[3],
                                 *L, vals)
        return sign * vals[j]

    def feasible(q):
        return parameter_set_contains((q[0], q[1], math.tan(q[2])), pset, tol=0.0)

    q = np.array([start[0], start[1], math.atan(start[2])])
    best = value(q)
    step = step0
    evals = 0
    while step >= step_min and evals < max_evals:
        improved = False
        for d in _DIRECTIONS:
            cand = q + step * d
            evals += 1
            if not feasible(cand):
                continue
            v = value(cand)
            if v > best:
                best, q, improved = v, cand, True
        if not improved:
            step *= 0.5
    return sign * best, np.array([q[0], q[1], math.tan(q[2])])


def element_bounds(pset: PathParameterSet, geometry: VehicleGeometry, K, v3: float = -1.0,
                   beta_step_deg: float = 0.25, u0_step: float = 1e-3, inflation: float = 0.02,
                   refine: bool = True, threads: int = 1, backend: str | None = None) -> ElementBoundBox:
    """Interval enclosure of the closed-loop entries over the path-parameter set.

    Grid scan, pattern-search refinement from every extremal grid point, then
    each interval is widened by ``inflation`` times its width (half per side).
    The box excludes the v3 factor; ``v3`` is recorded for reference only.
    """
    beta_step = math.radians(beta_step_deg)
    lo, hi, lo_at, hi_at, count = grid_extremes(pset, geometry, K, beta_step, u0_step,
                                                threads, backend)
    if count == 0:
        raise EmptyFeasibleSet("no grid point satisfies the path-parameter constraints")
    if refine:
        Karr = _gain_array(K)
        step0 = max(beta_step, u0_step)
        for j in range(10):
            v, at = _refine_extreme(lo_at[j], j, -1, pset, geometry, Karr, step0)
            if v < lo[j]:
                lo[j], lo_at[j] = v, at
            v, at = _refine_extreme(hi_at[j], j, +1, pset, geometry, Karr, step0)
            if v > hi[j]:
                hi[j], hi_at[j] = v, at
    pad = 0.5 * inflation * (hi - lo)
    settings = {"beta_step_deg": beta_step_deg, "u0_step": u0_step, "inflation": inflation,
                "refine": refine, "v3": v3}
    return ElementBoundBox(lo - pad, hi + pad, lo.copy(), hi.copy(), lo_at, hi_at, count, settings)


def bounds_exceedance(box: ElementBoundBox, pset: PathParameterSet, geometry: VehicleGeometry, K,
                      density: int = 3, threads: int = 1, backend: str | None = None) -> float:
    """Largest amount by which a denser grid leaves the pre-inflation box (0 if none)."""
    beta_step = math.radians(box.settings.get("beta_step_deg", 0.25)) / density
    u0_step = box.settings.get("u0_step", 1e-3) / density
    lo, hi, *_ = grid_extremes(pset, geometry, K, beta_step, u0_step, threads, backend)
    return float(max(0.0, np.max(box.raw_lower - lo), np.max(hi - box.raw_upper)))


def sample_parameter_points(pset: PathParameterSet, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples from the parameter set by rejection from its bounding box."""
    out = []
    got = 0
    umax = pset.u0_max
    while got < n:
        m = max(4 * (n - got), 1024)
        cand = np.column_stack([
            rng.uniform(-pset.beta3_max, pset.beta3_max, m),
            rng.uniform(-pset.beta2_max, pset.beta2_max, m),
            rng.uniform(-umax, umax, m),
        ])
        b3, b2, u = cand.T
        ok = (np.abs(b2 - b3) <= pset.joint_diff_max) & (np.abs(np.arctan(u) - b2) <= pset.steer_diff_max)
        cand = cand[ok]
        out.append(cand)
        got += len(cand)
    return np.vstack(out)[:n]


# ---------------------------------------------------------------------------
# vertices and the LMI


def enumerate_vertices(box: ElementBoundBox, v3: float) -> np.ndarray:
    """(1024, 4, 4) closed-loop matrices, one per box corner, v3 applied.

    Vertex i takes the upper bound of entry j when bit j of i is set.
    """
    bits = (np.arange(N_VERTICES)[:, None] >> np.arange(10)[None, :]) & 1
    entries = np.where(bits == 1, box.upper[None, :], box.lower[None, :])
    return assemble_closed_loop(entries, v3)


def lmi_margins(vertices, P, eps: float) -> np.ndarray:
    """lambda_max(A^T P + P A + 2 eps P) for every matrix in ``vertices``."""
    A = np.asarray(vertices, dtype=float).reshape(-1, 4, 4)
    P = np.asarray(P, dtype=float)
    M = np.swapaxes(A, 1, 2) @ P + P @ A + 2.0 * eps * P
    M = 0.5 * (M + np.swapaxes(M, 1, 2))
    return np.linalg.eigvalsh(M)[:, -1]


@dataclass(frozen=True)
class LyapunovCertificate:
    P: np.ndarray
    eps: float
    mu: float
    margins: np.ndarray
    feasible: bool
    box: ElementBoundBox | None = None
    iterations: int = 0

    @property
    def worst_margin(self) -> float:
        return float(np.max(self.margins))

    def V(self, err) -> np.ndarray:
        e = np.atleast_2d(err)
        return np.einsum("ni,ij,nj->n", e, self.P, e)


_SYM_BASIS = [(a, b) for a in range(4) for b in range(a, 4)]


def _sym_basis() -> np.ndarray:
    E = np.zeros((10, 4, 4))
    for j, (a, b) in enumerate(_SYM_BASIS):
        E[j, a, b] = 1.0
        E[j, b, a] = 1.0
    return E


def _trace_free_basis() -> np.ndarray:
    """Nine symmetric matrices spanning the trace-free subspace."""
    E = _sym_basis()
    off = [E[j] for j, (a, b) in enumerate(_SYM_BASIS) if a != b]
    diag = []
    for a in range(3):
        Dm = np.zeros((4, 4))
        Dm[a, a], Dm[a + 1, a + 1] = 1.0, -1.0
        diag.append(Dm)
    return np.array(off + diag)


def _pack(P) -> np.ndarray:
    return np.array([P[a, b] for a, b in _SYM_BASIS])


def _unpack(p) -> np.ndarray:
    return np.einsum("j,jab->ab", p, _sym_basis())


class _LMIProblem:
    """Blocks G_k(y) = F0_k + sum_j y_j F[j, k] > 0 plus scalars b - a @ y > 0."""

    def __init__(self, F0, F, lin_a, lin_b):
        self.F0 = F0
        self.F = F
        self.lin_a = lin_a
        self.lin_b = lin_b
        self.dim = 4 * F0.shape[0] + len(lin_b)

    def blocks(self, y):
        return self.F0 + np.einsum("j,jkab->kab", y, self.F)

    def barrier(self, y):
        """-sum log det G_k - sum log(slack); inf when infeasible."""
        slack = self.lin_b - self.lin_a @ y
        if np.any(slack <= 0):
            return np.inf
        try:
            Lc = np.linalg.cholesky(self.blocks(y))
        except np.linalg.LinAlgError:
            return np.inf
        return -2.0 * np.sum(np.log(np.diagonal(Lc, axis1=1, axis2=2))) - np.sum(np.log(slack))

    def derivatives(self, y):
        Ginv = np.linalg.inv(self.blocks(y))
        W = np.einsum("kab,jkbc->jkac", Ginv, self.F)
        grad = -np.einsum("jkaa->j", W)
        hess = np.einsum("ikab,jkba->ij", W, W)
        slack = self.lin_b - self.lin_a @ y
        grad += self.lin_a.T @ (1.0 / slack)
        hess += self.lin_a.T @ (self.lin_a / slack[:, None] ** 2)
        return grad, hess


def _barrier_path(problem: _LMIProblem, c, y, t, stop, gap_of, growth=2.0,
                  newton_tol=1e-9, max_newton=5000):
    """Follow the central path of min c@y; returns (y, t, newton_steps, reason)."""
    steps = 0
    while True:
        # centering
        while True:
            if steps >= max_newton:
                raise MaxIterations(f"barrier method exceeded {max_newton} Newton steps")
            grad, hess = problem.derivatives(y)
            g = t * c + grad
            # symmetric Jacobi scaling; the raw Hessian is badly scaled near the boundary
            d = 1.0 / np.sqrt(np.maximum(np.diag(hess), 1e-300))
            Hs = hess * d[:, None] * d[None, :]
            try:
                dy = -d * np.linalg.solve(Hs, d * g)
            except np.linalg.LinAlgError:
                dy = -d * np.linalg.lstsq(Hs, d * g, rcond=None)[0]
            dec2 = float(-g @ dy)
            steps += 1
            if dec2 / 2.0 <= newton_tol:
                break
            f0 = t * (c @ y) + problem.barrier(y)
            alpha = 1.0
            while alpha > 1e-12:
                cand = y + alpha * dy
                f1 = t * (c @ cand) + problem.barrier(cand)
                if np.isfinite(f1) and f1 < f0 and f1 <= f0 - 0.01 * alpha * dec2:
                    break
                alpha *= 0.5
            else:
                break
            y = cand
            reason = stop(y, t, False)
            if reason:
                return y, t, steps, reason
            if alpha < 1e-6:
                # stalled at floating-point resolution; the result is re-verified anyway
                break
        reason = stop(y, t, True)
        if reason:
            return y, t, steps, reason
        if problem.dim / t <= gap_of(y):
            return y, t, steps, "converged"
        t *= growth


def _distinct(vertices) -> np.ndarray:
    """Vertex matrices without repeats, in first-seen order (collapsed boxes repeat them)."""
    A = np.asarray(vertices, dtype=float).reshape(-1, 4, 4)
    _, first = np.unique(A.reshape(len(A), 16), axis=0, return_index=True)
    return A[np.sort(first)]


def _lmi_blocks(vertices, eps):
    """Constant terms and coefficient matrices over y = (P entries, mu)."""
    A = np.asarray(vertices, dtype=float).reshape(-1, 4, 4)
    E = _sym_basis()
    nv = A.shape[0]
    F0 = np.zeros((nv + 2, 4, 4))
    F = np.zeros((11, nv + 2, 4, 4))
    F0[0] = -np.eye(4)
    F[:10, 0] = E
    F[:10, 1] = -E
    F[10, 1] = np.eye(4)
    At = np.swapaxes(A, 1, 2)
    for j in range(10):
        F[j, 2:] = -(At @ E[j] + E[j] @ A + 2.0 * eps * E[j])
    return F0, F


def solve_common_lyapunov(vertices, eps: float = 0.001, mu_max: float = 1e4,
                          gap_rtol: float = 1e-3, box: ElementBoundBox | None = None,
                          max_newton: int = 5000) -> LyapunovCertificate:
    """Minimize mu over common Lyapunov matrices of the vertex set.

    A phase-I barrier problem finds a strictly feasible P; the phase-II
    central path then drives mu down until the duality gap falls below
    ``gap_rtol * mu``. The result is re-verified by eigenvalues before it is
    marked feasible.
    """
    if eps < 0:
        raise ValueError("decay rate must be non-negative")
    all_vertices = vertices
    vertices = _distinct(vertices)
    F0, F = _lmi_blocks(vertices, eps)
    nb = F0.shape[0]

    # Phase I. The vertex LMIs are homogeneous in P, so feasibility is
    # decided on the compact slice trace(P) = 4 with P > 0: minimize s with
    # L_i(P) < s I. Without the slice the central path drifts towards huge P.
    A = np.asarray(vertices, dtype=float).reshape(-1, 4, 4)
    At = np.swapaxes(A, 1, 2)
    D = _trace_free_basis()
    n1 = len(D) + 1
    F0p = np.empty((nb - 1, 4, 4))
    Fp = np.zeros((n1, nb - 1, 4, 4))
    F0p[0] = np.eye(4)
    F0p[1:] = -(At + A + 2.0 * eps * np.eye(4))
    for j, Dj in enumerate(D):
        Fp[j, 0] = Dj
        Fp[j, 1:] = -(At @ Dj + Dj @ A + 2.0 * eps * Dj)
    Fp[-1, 1:] = np.eye(4)
    phase1 = _LMIProblem(F0p, Fp, np.zeros((0, n1)), np.zeros(0))
    y = np.zeros(n1)
    y[-1] = max(0.0, -np.linalg.eigvalsh(F0p[1:])[:, 0].min()) + 1.0
    c1 = np.zeros(n1)
    c1[-1] = 1.0

    def stop1(yy, t, centered):
        if yy[-1] < 0.0:
            return "feasible"
        # lower bound on the optimal s, valid only on the central path
        if centered and yy[-1] - phase1.dim / t > 0.0:
            return "infeasible"
        return None

    y, _, steps1, reason = _barrier_path(phase1, c1, y, 1.0, stop1, lambda yy: 1e-12,
                                         max_newton=max_newton)
    Phat = np.eye(4) + np.einsum("j,jab->ab", y[:-1], D)
    if reason != "feasible":
        best = float(np.max(lmi_margins(vertices, Phat, eps)) / np.linalg.eigvalsh(Phat)[-1])
        raise Infeasible("no common Lyapunov matrix for the vertex set", best)
    eig = np.linalg.eigvalsh(Phat)
    P0 = Phat * (1.1 / eig[0])
    mu0 = 1.05 * eig[-1] * (1.1 / eig[0]) + 1e-3
    if mu0 >= mu_max:
        raise Infeasible(f"feasible P needs a condition number above {mu_max:g}",
                         float(np.max(lmi_margins(vertices, P0, eps))))

    # phase II over (p, mu)
    a2 = np.zeros((1, 11))
    a2[0, 10] = 1.0
    phase2 = _LMIProblem(F0, F, a2, np.array([mu_max]))
    x = np.concatenate([_pack(P0), [mu0]])
    c2 = np.zeros(11)
    c2[10] = 1.0
    x, _, steps2, _ = _barrier_path(phase2, c2, x, phase2.dim / x[10], lambda xx, t, centered: None,
                                    lambda xx: gap_rtol * xx[10], max_newton=max_newton)
    P = _unpack(x[:10])
    mu = float(x[10])
    margins = lmi_margins(all_vertices, P, eps)
    eigP = np.linalg.eigvalsh(P)
    ok = bool(np.max(margins) <= TOL_LMI and eigP[0] >= 1.0 - TOL_LMI and eigP[-1] <= mu + TOL_LMI)
    return LyapunovCertificate(P, eps, mu, margins, ok, box, steps1 + steps2)


@dataclass(frozen=True)
class MarginReport:
    worst_vertex_margin: float
    worst_sample_margin: float
    p_eig_min: float
    p_eig_max: float
    mu: float
    feasible: bool
    n_vertices: int
    n_samples: int


def verify_certificate(cert: LyapunovCertificate, vertices, sample_points=(),
                       geometry: VehicleGeometry = VehicleGeometry(), K=None, v3: float = -1.0,
                       tol: float = TOL_LMI) -> MarginReport:
    """Recompute all LMI margins with a symmetric eigensolver."""
    P = 0.5 * (cert.P + cert.P.T)
    vm = lmi_margins(vertices, P, cert.eps)
    pts = np.asarray(sample_points, dtype=float).reshape(-1, 3)
    if len(pts):
        if K is None:
            raise ValueError("sample points need the feedback gain")
        A = assemble_closed_loop(closed_loop_entries(pts, geometry, K), v3)
        sm = float(np.max(lmi_margins(A, P, cert.eps)))
    else:
        sm = -np.inf
    eig = np.linalg.eigvalsh(P)
    feasible = bool(np.max(vm) <= tol and eig[0] >= 1.0 - tol and eig[-1] <= cert.mu + tol)
    return MarginReport(float(np.max(vm)), sm, float(eig[0]), float(eig[-1]), cert.mu, feasible,
                        len(vm), len(pts))



CERTIFICATE_FORMAT = "trailerlq-certificate-1"


def certificate_to_text(cert: LyapunovCertificate | None, geometry: VehicleGeometry, K, v3: float,
                        pset: PathParameterSet, box: ElementBoundBox, eps: float,
                        report: MarginReport | None = None, best_margin: float | None = None,
                        extra: dict | None = None) -> str:
    """Certificate report; ``cert`` is None when the LMI was infeasible."""
    items = {
        "format": CERTIFICATE_FORMAT,
        "L1_m": geometry.L1, "L2_m": geometry.L2, "L3_m": geometry.L3, "M1_m": geometry.M1,
        "v3_mps": float(v3),
        "K": _gain_array(K),
        "eps_per_s": float(eps),
        "param_limits": pset.limits,
        "grid_beta_deg": float(box.settings.get("beta_step_deg", np.nan)),
        "grid_u0": float(box.settings.get("u0_step", np.nan)),
        "inflation": float(box.settings.get("inflation", np.nan)),
        "grid_points": int(box.grid_points),
        "entries": " ".join(ENTRY_NAMES),
        "box_lower": box.lower, "box_upper": box.upper,
        "box_raw_lower": box.raw_lower, "box_raw_upper": box.raw_upper,
        "feasible": bool(report.feasible) if (cert is not None and report is not None) else False,
    }
    if cert is not None:
        items.update({
            "mu": float(cert.mu),
            "P": 0.5 * (cert.P + cert.P.T),
            "iterations": int(cert.iterations),
        })
        if report is not None:
            items.update({
                "worst_vertex_margin": report.worst_vertex_margin,
                "worst_sample_margin": report.worst_sample_margin,
                "n_vertices": report.n_vertices, "n_samples": report.n_samples,
                "p_eig_min": report.p_eig_min, "p_eig_max": report.p_eig_max,
            })
    else:
        items["best_margin"] = float(best_margin if best_margin is not None else np.nan)
    items.update(extra or {})
    return format_kv(items, "common quadratic Lyapunov certificate for the reversing closed loop")


def read_certificate(text: str) -> tuple[LyapunovCertificate | None, dict[str, str]]:
    """Parse a certificate report. Returns (certificate or None if infeasible, raw fields)."""
    kv = parse_kv(text)
    if kv.get("format") != CERTIFICATE_FORMAT:
        raise ValueError("not a certificate report")
    if "P" not in kv:
        return None, kv
    box = ElementBoundBox(floats(kv["box_lower"]), floats(kv["box_upper"]),
                          floats(kv["box_raw_lower"]), floats(kv["box_raw_upper"]),
                          grid_points=int(kv["grid_points"]),
                          settings={"beta_step_deg": float(kv["grid_beta_deg"]),
                                    "u0_step": float(kv["grid_u0"]),
                                    "inflation": float(kv["inflation"])})
    P = floats(kv["P"]).reshape(4, 4)
    margin = float(kv.get("worst_vertex_margin", "nan"))
    cert = LyapunovCertificate(P, float(kv["eps_per_s"]), float(kv["mu"]), np.array([margin]),
                               kv["feasible"] == "true", box, int(kv.get("iterations", 0)))
    return cert, kv
