"""Scalar numeric kernels.

Every function here compiles under ``numba.njit`` and also runs unmodified as
plain Python (see ``_accel``). Geometry is passed as the four scalars
``L1, L2, L3, M1`` so the kernels never touch Python objects.
"""
import math

import numpy as np

from ._accel import njit

HALF_PI = 0.5 * math.pi
TWO_PI = 2.0 * math.pi

# simulation status codes
OK = 0
TUBE_VIOLATION = 1
SINGULAR_JOINT = 2
SINGULAR_COUPLING = 3
END_OF_PATH = 4


@njit
def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = a - TWO_PI * math.floor((a + math.pi) / TWO_PI)
    if w <= -math.pi:
        w += TWO_PI
    return w


@njit
def coupling(beta2, u, L1, M1):
    return 1.0 + (M1 / L1) * math.tan(beta2) * u


@njit
def joint_rates(beta3, beta2, u, L1, L2, L3, M1):
    """(d beta3, d beta2) per unit signed speed."""
    c1 = coupling(beta2, u, L1, M1)
    cb3 = math.cos(beta3)
    t2 = math.tan(beta2)
    g3 = (t2 - (M1 / L1) * u) / (L2 * cb3 * c1) - math.tan(beta3) / L3
    g2 = (u / (L1 * math.cos(beta2)) - t2 / L2 + M1 / (L1 * L2) * u) / (cb3 * c1)
    return g3, g2


@njit
def vehicle_rhs(theta3, beta3, beta2, u, v3, L1, L2, L3, M1):
    """Time derivative of (x3, y3, theta3, beta3, beta2)."""
    g3, g2 = joint_rates(beta3, beta2, u, L1, L2, L3, M1)
    return (
        v3 * math.cos(theta3),
        v3 * math.sin(theta3),
        v3 * math.tan(beta3) / L3,
        v3 * g3,
        v3 * g2,
    )


@njit
def error_rhs(z3, eth, eb3, eb2, ut, b30, b20, u0, v3, L1, L2, L3, M1):
    """Frenet progress rate and error derivatives: (s_dot, z3', eth', eb3', eb2')."""
    kappa = math.tan(b30) / L3
    c = math.cos(eth) / (1.0 - kappa * z3)
    b3 = eb3 + b30
    b2 = eb2 + b20
    u = ut + u0
    g3, g2 = joint_rates(b3, b2, u, L1, L2, L3, M1)
    g30, g20 = joint_rates(b30, b20, u0, L1, L2, L3, M1)
    return (
        v3 * c,
        v3 * math.sin(eth),
        v3 * (math.tan(b3) / L3 - kappa * c),
        v3 * (g3 - c * g30),
        v3 * (g2 - c * g20),
    )


@njit
def jacobian_entries(z3, eth, eb3, eb2, ut, b30, b20, u0, L1, L2, L3, M1):
    """Jacobian entries a12..a44, b3, b4 (without the v3 factor).

    Returns (a12, a21, a22, a23, a31, a32, a33, a34, a41, a42, a43, a44, b3, b4).
    """
    b3 = eb3 + b30
    b2 = eb2 + b20
    u = ut + u0
    m = M1 / L1
    t30 = math.tan(b30)
    t20 = math.tan(b20)
    t3 = math.tan(b3)
    t2 = math.tan(b2)
    cth = math.cos(eth)
    sth = math.sin(eth)
    c20 = 1.0 + m * t20 * u0
    c2 = 1.0 + m * t2 * u
    den = L3 - z3 * t30
    ref3 = (t20 - m * u0) / (L2 * math.cos(b30) * c20) - t30 / L3
    ref2 = (u0 / (L1 * math.cos(b20)) - t20 / L2 + M1 / (L1 * L2) * u0) / (math.cos(b30) * c20)
    n2 = u / (L1 * math.cos(b2)) - t2 / L2 + M1 / (L1 * L2) * u
    cb3 = math.cos(b3)
    sec2 = 1.0 + t2 * t2

    a12 = cth
    a21 = -cth * t30 * t30 / (den * den)
    a22 = sth * t30 / den
    a23 = (1.0 + t3 * t3) / L3
    a31 = -L3 * cth * t30 / (den * den) * ref3
    a32 = L3 * sth / den * ref3
    a33 = math.sin(b3) * (t2 - m * u) / (L2 * cb3 * cb3 * c2) - (1.0 + t3 * t3) / L3
    a34 = sec2 / (L2 * c2 * cb3) * (1.0 + (m * u - t2) * m * u / c2)
    a41 = -L3 * cth * t30 / (den * den) * ref2
    a42 = L3 * sth / den * ref2
    a43 = math.sin(b3) * n2 / (cb3 * cb3 * c2)
    a44 = (u * math.sin(b2) / (L1 * math.cos(b2) ** 2) - sec2 / L2) / (cb3 * c2) \
        - m * u * sec2 * n2 / (cb3 * c2 * c2)
    bb3 = -(M1 / (L1 * L2 * cb3 * c2) + (t2 - m * u) * m * t2 / (L2 * cb3 * c2 * c2))
    bb4 = 1.0 / (cb3 * c2) * (1.0 / (L1 * math.cos(b2)) + M1 / (L1 * L2)
                             - M1 * t2 / (L1 * c2) * n2)
    return a12, a21, a22, a23, a31, a32, a33, a34, a41, a42, a43, a44, bb3, bb4


@njit
def closed_loop_entries(b30, b20, u0, k1, k2, k3, k4, L1, L2, L3, M1, out):
    """Fill ``out[:10]`` with the varying closed-loop entries at zero error.

    Order: a21, a23, a31-b3k1, -b3k2, a33-b3k3, a34-b3k4,
    a41-b4k1, -b4k2, a43-b4k3, a44-b4k4 (v3 factor excluded).
    """
    (_, a21, _, a23, a31, _, a33, a34, a41, _, a43, a44, bb3, bb4) = jacobian_entries(
        0.0, 0.0, 0.0, 0.0, 0.0, b30, b20, u0, L1, L2, L3, M1)
    out[0] = a21
    out[1] = a23
    out[2] = a31 - bb3 * k1
    out[3] = -bb3 * k2
    out[4] = a33 - bb3 * k3
    out[5] = a34 - bb3 * k4
    out[6] = a41 - bb4 * k1
    out[7] = -bb4 * k2
    out[8] = a43 - bb4 * k3
    out[9] = a44 - bb4 * k4


@njit
def grid_scan(b3_grid, b2_grid, u_grid, limits, K, L1, L2, L3, M1):
    """Min/max of the 10 closed-loop entries over the feasible grid points.

    ``limits`` = (|b3|max, |b2|max, |u0|max, |b2-b3|max, |atan u0 - b2|max).
    Returns (lo, hi, lo_at, hi_at, count); ``*_at`` hold (b3, b2, u0) arg points.
    """
    lo = np.full(10, np.inf)
    hi = np.full(10, -np.inf)
    lo_at = np.zeros((10, 3))
    hi_at = np.zeros((10, 3))
    vals = np.empty(10)
    tol = 1e-12
    count = 0
    for iu in range(u_grid.shape[0]):
        u = u_grid[iu]
        if abs(u) > limits[2] + tol:
            continue
        w = math.atan(u)
        for i2 in range(b2_grid.shape[0]):
            b2 = b2_grid[i2]
            if abs(b2) > limits[1] + tol or abs(w - b2) > limits[4] + tol:
                continue
            for i3 in range(b3_grid.shape[0]):
                b3 = b3_grid[i3]
                if abs(b3) > limits[0] + tol or abs(b2 - b3) > limits[3] + tol:
                    continue
                closed_loop_entries(b3, b2, u, K[0], K[1], K[2], K[3], L1, L2, L3, M1, vals)
                count += 1
                for j in range(10):
                    v = vals[j]
                    if v < lo[j]:
                        lo[j] = v
                        lo_at[j, 0] = b3
                        lo_at[j, 1] = b2
                        lo_at[j, 2] = u
                    if v > hi[j]:
                        hi[j] = v
                        hi_at[j, 0] = b3
                        hi_at[j, 1] = b2
                        hi_at[j, 2] = u
    return lo, hi, lo_at, hi_at, count


# ---------------------------------------------------------------------------
# path interpolation and projection
#
# Path arrays: S (n,) arc length, X (n, 5) = x, y, theta, beta3, beta2,
# D (n, 5) = d/ds of X at the nodes, U0 (n,) nominal input.


@njit
def segment_index(S, s):
    n = S.shape[0]
    lo = 0
    hi = n - 1
    if s <= S[0]:
        return 0
    if s >= S[n - 1]:
        return n - 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if S[mid] <= s:
            lo = mid
        else:
            hi = mid
    return lo


@njit
def hermite(S, X, D, s, col):
    """Cubic Hermite value, first and second derivative of column ``col`` at s."""
    i = segment_index(S, s)
    h = S[i + 1] - S[i]
    t = (s - S[i]) / h
    p0 = X[i, col]
    p1 = X[i + 1, col]
    m0 = D[i, col]
    m1 = D[i + 1, col]
    t2 = t * t
    t3 = t2 * t
    val = (2 * t3 - 3 * t2 + 1) * p0 + (t3 - 2 * t2 + t) * h * m0 \
        + (-2 * t3 + 3 * t2) * p1 + (t3 - t2) * h * m1
    d1 = (6 * t2 - 6 * t) / h * p0 + (3 * t2 - 4 * t + 1) * m0 \
        + (-6 * t2 + 6 * t) / h * p1 + (3 * t2 - 2 * t) * m1
    d2 = (12 * t - 6) / (h * h) * p0 + (6 * t - 4) / h * m0 \
        + (-12 * t + 6) / (h * h) * p1 + (6 * t - 2) / h * m1
    return val, d1, d2


@njit
def hermite_u0(S, U0, s):
    """Feedforward at s; ``U0`` holds (u0, du0/ds) per sample."""
    i = segment_index(S, s)
    h = S[i + 1] - S[i]
    t = (s - S[i]) / h
    t2 = t * t
    t3 = t2 * t
    return (2 * t3 - 3 * t2 + 1) * U0[i, 0] + (t3 - 2 * t2 + t) * h * U0[i, 1] \
        + (-2 * t3 + 3 * t2) * U0[i + 1, 0] + (t3 - t2) * h * U0[i + 1, 1]


@njit
def reference_at(S, X, D, U0, s):
    """(x, y, theta, beta3, beta2, u0) of the nominal path at s."""
    x = hermite(S, X, D, s, 0)[0]
    y = hermite(S, X, D, s, 1)[0]
    th = hermite(S, X, D, s, 2)[0]
    b3 = hermite(S, X, D, s, 3)[0]
    b2 = hermite(S, X, D, s, 4)[0]
    return x, y, th, b3, b2, hermite_u0(S, U0, s)


@njit
def refine_projection(S, X, D, qx, qy, s):
    """Newton refinement of the closest point on the Hermite curve, from s.

    Returns (s*, z3) with z3 signed positive to the left of the tangent.
    """
    s_min = S[0]
    s_max = S[S.shape[0] - 1]
    for _ in range(40):
        cx, dx, ddx = hermite(S, X, D, s, 0)
        cy, dy, ddy = hermite(S, X, D, s, 1)
        rx = qx - cx
        ry = qy - cy
        g = -(rx * dx + ry * dy)
        hss = dx * dx + dy * dy - (rx * ddx + ry * ddy)
        if hss <= 1e-9:
            hss = 1.0
        step = -g / hss
        if step > 1.0:
            step = 1.0
        elif step < -1.0:
            step = -1.0
        s_new = s + step
        if s_new < s_min:
            s_new = s_min
        elif s_new > s_max:
            s_new = s_max
        done = abs(s_new - s) <= 1e-13 * (1.0 + abs(s))
        s = s_new
        if done:
            break
    cx, dx, _ = hermite(S, X, D, s, 0)
    cy, dy, _ = hermite(S, X, D, s, 1)
    nrm = math.sqrt(dx * dx + dy * dy)
    z = ((qx - cx) * (-dy) + (qy - cy) * dx) / nrm
    return s, z


@njit
def nearest_sample_in_window(S, X, qx, qy, s_center, half_window):
    n = S.shape[0]
    lo = segment_index(S, s_center - half_window)
    hi = segment_index(S, s_center + half_window) + 2
    if hi > n:
        hi = n
    d2 = (X[lo:hi, 0] - qx) ** 2 + (X[lo:hi, 1] - qy) ** 2
    return lo + np.argmin(d2)


@njit
def project_window(S, X, D, qx, qy, s_center, half_window):
    i = nearest_sample_in_window(S, X, qx, qy, s_center, half_window)
    return refine_projection(S, X, D, qx, qy, S[i])


# ---------------------------------------------------------------------------
# closed loop


@njit
def tracking_errors(S, X, D, U0, p, s_guess, L3):
    """Project p and return (s, z3, eth, eb3, eb2, b30, b20, u0, denominator)."""
    s, z = refine_projection(S, X, D, p[0], p[1], s_guess)
    _, _, th0, b30, b20, u0 = reference_at(S, X, D, U0, s)
    eth = wrap_angle(p[2] - th0)
    eb3 = p[3] - b30
    eb2 = p[4] - b20
    den = 1.0 - math.tan(b30) / L3 * z
    return s, z, eth, eb3, eb2, b30, b20, u0, den


@njit
def _saturate(u, u_max):
    if u_max > 0.0:
        if u > u_max:
            return u_max
        if u < -u_max:
            return -u_max
    return u


@njit
def closed_loop_field(S, X, D, U0, p, s_guess, v3, K, u_max, L1, L2, L3, M1, out):
    s, z, eth, eb3, eb2, b30, b20, u0, den = tracking_errors(S, X, D, U0, p, s_guess, L3)
    u = _saturate(u0 - (K[0] * z + K[1] * eth + K[2] * eb3 + K[3] * eb2), u_max)
    r = vehicle_rhs(p[2], p[3], p[4], u, v3, L1, L2, L3, M1)
    for j in range(5):
        out[j] = r[j]


@njit
def simulate_closed_loop(S, X, D, U0, p0, s0, v3, K, dt, n_steps, half_window, u_max,
                         tol_joint, tol_c1, tol_tube, L1, L2, L3, M1):
    """Fixed-step RK4 rollout of plant + feedforward + LQ feedback.

    Returns (n_rows, status, svals, P, E, U, Uref, DEN). Rows past
    ``n_rows`` are unused.
    """
    rows = n_steps + 1
    svals = np.zeros(rows)
    P = np.zeros((rows, 5))
    E = np.zeros((rows, 4))
    U = np.zeros(rows)
    Uref = np.zeros(rows)
    DEN = np.zeros(rows)
    p = p0.copy()
    k1 = np.empty(5)
    k2 = np.empty(5)
    k3 = np.empty(5)
    k4 = np.empty(5)
    tmp = np.empty(5)
    s_prev = s0
    s_lo = S[0]
    s_hi = S[S.shape[0] - 1]
    status = OK
    n_rows = 0
    for k in range(rows):
        i = nearest_sample_in_window(S, X, p[0], p[1], s_prev, half_window)
        s, z, eth, eb3, eb2, b30, b20, u0, den = tracking_errors(S, X, D, U0, p, S[i], L3)
        u = _saturate(u0 - (K[0] * z + K[1] * eth + K[2] * eb3 + K[3] * eb2), u_max)
        svals[k] = s
        for j in range(5):
            P[k, j] = p[j]
        E[k, 0] = z
        E[k, 1] = eth
        E[k, 2] = eb3
        E[k, 3] = eb2
        U[k] = u
        Uref[k] = u0
        DEN[k] = den
        n_rows = k + 1
        if abs(p[3]) >= HALF_PI - tol_joint or abs(p[4]) >= HALF_PI - tol_joint:
            status = SINGULAR_JOINT
            break
        if abs(coupling(p[4], u, L1, M1)) < tol_c1:
            status = SINGULAR_COUPLING
            break
        if den <= tol_tube or abs(eth) >= HALF_PI - tol_joint:
            status = TUBE_VIOLATION
            break
        if s <= s_lo or s >= s_hi:
            status = END_OF_PATH
            break
        if k == rows - 1:
            break
        closed_loop_field(S, X, D, U0, p, s, v3, K, u_max, L1, L2, L3, M1, k1)
        for j in range(5):
            tmp[j] = p[j] + 0.5 * dt * k1[j]
        closed_loop_field(S, X, D, U0, tmp, s, v3, K, u_max, L1, L2, L3, M1, k2)
        for j in range(5):
            tmp[j] = p[j] + 0.5 * dt * k2[j]
        closed_loop_field(S, X, D, U0, tmp, s, v3, K, u_max, L1, L2, L3, M1, k3)
        for j in range(5):
            tmp[j] = p[j] + dt * k3[j]
        closed_loop_field(S, X, D, U0, tmp, s, v3, K, u_max, L1, L2, L3, M1, k4)
        for j in range(5):
            p[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
        s_prev = s
    return n_rows, status, svals, P, E, U, Uref, DEN


@njit
def _frenet_field(S, X, D, U0, y, v3, K, u_max, L1, L2, L3, M1, out):
    s = y[0]
    _, _, _, b30, b20, u0 = reference_at(S, X, D, U0, s)
    ut = _saturate(u0 - (K[0] * y[1] + K[1] * y[2] + K[2] * y[3] + K[3] * y[4]), u_max) - u0
    r = error_rhs(y[1], y[2], y[3], y[4], ut, b30, b20, u0, v3, L1, L2, L3, M1)
    for j in range(5):
        out[j] = r[j]


@njit
def simulate_frenet(S, X, D, U0, s0, e0, v3, K, dt, n_steps, u_max, L1, L2, L3, M1):
    """RK4 rollout of (s, error) directly in the Frenet frame. Returns (rows, 5)."""
    Y = np.zeros((n_steps + 1, 5))
    y = np.empty(5)
    y[0] = s0
    for j in range(4):
        y[j + 1] = e0[j]
    k1 = np.empty(5)
    k2 = np.empty(5)
    k3 = np.empty(5)
    k4 = np.empty(5)
    tmp = np.empty(5)
    for j in range(5):
        Y[0, j] = y[j]
    for k in range(n_steps):
        _frenet_field(S, X, D, U0, y, v3, K, u_max, L1, L2, L3, M1, k1)
        for j in range(5):
            tmp[j] = y[j] + 0.5 * dt * k1[j]
        _frenet_field(S, X, D, U0, tmp, v3, K, u_max, L1, L2, L3, M1, k2)
        for j in range(5):
            tmp[j] = y[j] + 0.5 * dt * k2[j]
        _frenet_field(S, X, D, U0, tmp, v3, K, u_max, L1, L2, L3, M1, k3)
        for j in range(5):
            tmp[j] = y[j] + dt * k3[j]
        _frenet_field(S, X, D, U0, tmp, v3, K, u_max, L1, L2, L3, M1, k4)
        for j in range(5):
            y[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
            Y[k + 1, j] = y[j]
    return Y
