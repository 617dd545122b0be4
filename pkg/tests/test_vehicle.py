import math

import numpy as np
import pytest

from trailerlq import OutOfRange, SingularConfiguration, VehicleGeometry
from trailerlq.vehicle import (ControlInput, coupling_factor_c1, feasibility_guard, integrate,
                               state_derivative, steering_to_input)


def axle_points(p, u, geo):
    """Positions and headings of every no-slip contact, built from the geometry alone."""
    x3, y3, th3, b3, b2 = p
    th2, th1 = th3 + b3, th3 + b3 + b2
    e = lambda a: np.array([math.cos(a), math.sin(a)])
    trailer = np.array([x3, y3])
    dolly = trailer + geo.L3 * e(th3)
    rear = dolly + geo.L2 * e(th2) + geo.M1 * e(th1)
    front = rear + geo.L1 * e(th1)
    return [(trailer, th3), (dolly, th2), (rear, th1), (front, th1 + math.atan(u))]


def test_rollout_respects_every_no_slip_constraint(geometry, rng):
    dt = 1e-4
    for _ in range(50):
        p0 = np.array([rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-3, 3),
                       rng.uniform(-0.7, 0.7), rng.uniform(-0.6, 0.6)])
        u = rng.uniform(-0.45, 0.45)
        v = rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 3)
        _, P = integrate(p0, lambda t: u, v, dt, 2, geometry)
        before, mid, after = (axle_points(q, u, geometry) for q in P)
        for (a, _), (_, th), (c, _) in zip(before, mid, after):
            vel = (c - a) / (2 * dt)
            assert abs(-vel[0] * math.sin(th) + vel[1] * math.cos(th)) < 1e-6 * abs(v)
        # trailer axle moves at v along its heading
        vel = (after[0][0] - before[0][0]) / (2 * dt)
        assert vel @ np.array([math.cos(mid[0][1]), math.sin(mid[0][1])]) == pytest.approx(v, rel=1e-6)


def test_straight_equilibrium_is_invariant(geometry):
    d = state_derivative((1.0, 2.0, 0.3, 0.0, 0.0), 0.0, -1.0, geometry)
    assert d[2:] == pytest.approx([0, 0, 0], abs=1e-15)
    assert d[:2] == pytest.approx([-math.cos(0.3), -math.sin(0.3)])


def test_coupling_factor():
    g = VehicleGeometry()
    assert coupling_factor_c1(0.3, 0.2, g) == pytest.approx(1 + 0.72 / 3.8 * math.tan(0.3) * 0.2)
    assert coupling_factor_c1(0.3, 0.2, VehicleGeometry(M1=0.0)) == 1.0


def test_guard_flags_singularities(geometry):
    lim = math.pi / 2
    assert feasibility_guard((0, 0, 0, lim - 1e-4, 0), 0, geometry).violations == ("beta3",)
    assert feasibility_guard((0, 0, 0, 0, -lim + 1e-4), 0, geometry).violations == ("beta2",)
    # C1 = 0 needs tan(beta2) u = -L1/M1
    b2 = 1.2
    u = -geometry.L1 / (geometry.M1 * math.tan(b2))
    rep = feasibility_guard((0, 0, 0, 0, b2), u, geometry)
    assert "c1" in rep.violations and not rep.valid
    with pytest.raises(SingularConfiguration):
        state_derivative((0, 0, 0, 0, b2), u, 1.0, geometry)
    assert feasibility_guard((0, 0, 0, 0.3, -0.2), 0.1, geometry).valid


def test_integrate_reports_failing_step(geometry):
    # reversing with a constant input jackknifes eventually
    with pytest.raises(SingularConfiguration) as exc:
        integrate(np.array([0, 0, 0, 0.0, 0.05]), lambda t: 0.3, -1.0, 0.05, 20000, geometry)
    assert exc.value.step is not None and exc.value.step > 0


def test_steering_substitution():
    assert ControlInput.from_angle(0.3).u == pytest.approx(math.tan(0.3))
    assert ControlInput(0.5).alpha == pytest.approx(math.atan(0.5))
    with pytest.raises(OutOfRange):
        steering_to_input(math.pi / 2)


def test_invalid_geometry():
    with pytest.raises(ValueError):
        VehicleGeometry(L1=0.0)
    with pytest.raises(ValueError):
        VehicleGeometry(M1=-0.1)
    with pytest.raises(ValueError):
        integrate(np.zeros(5), lambda t: 0.0, 1.0, 0.0, 1, VehicleGeometry())


def test_speed_linearity(geometry, rng):
    for _ in range(50):
        p = np.array([0.0, 0.0, rng.uniform(-3, 3), rng.uniform(-0.8, 0.8), rng.uniform(-0.6, 0.6)])
        u = rng.uniform(-0.4, 0.4)
        d1 = state_derivative(p, u, 1.0, geometry)
        for a in (-2.0, 0.5, 3.0):
            assert np.allclose(state_derivative(p, u, a, geometry), a * d1, rtol=1e-14, atol=1e-15)


def test_mirror_symmetry(geometry, rng):
    # reflecting the train about its heading flips every angle and the input
    for _ in range(50):
        th = rng.uniform(-3, 3)
        b3, b2, u = rng.uniform(-0.8, 0.8), rng.uniform(-0.6, 0.6), rng.uniform(-0.4, 0.4)
        d = state_derivative((0, 0, th, b3, b2), u, -1.0, geometry)
        m = state_derivative((0, 0, -th, -b3, -b2), -u, -1.0, geometry)
        assert m[0] == pytest.approx(d[0]) and m[1] == pytest.approx(-d[1])
        assert np.allclose(m[2:], -d[2:], rtol=1e-14, atol=1e-15)


def test_rk4_convergence_order(geometry):
    p0 = np.array([0.0, 0.0, 0.2, 0.3, -0.2])
    sched = lambda t: 0.3 * math.sin(0.7 * t)
    T = 4.0
    ref = integrate(p0, sched, 1.0, T / 3200, 3200, geometry)[1][-1]
    errs = []
    for n in (25, 50, 100, 200):
        errs.append(np.max(np.abs(integrate(p0, sched, 1.0, T / n, n, geometry)[1][-1] - ref)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert orders.min() >= 3.8
