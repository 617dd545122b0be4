import math

import numpy as np
import pytest
import scipy.linalg

from trailerlq import SimulationConfig, generate_nominal_path, lyapunov_trace, simulate_closed_loop
from trailerlq import simulation as sim
from trailerlq.frenet import global_to_error
from trailerlq.linearization import straight_line_model


@pytest.fixture(scope="module")
def straight(geometry):
    return generate_nominal_path(lambda s: 0.0, 120.0, 0.01, geometry)


def test_zero_error_stays_zero(eight, gain):
    tr = simulate_closed_loop(SimulationConfig(eight, gain))
    assert tr.flag == "ok" and not tr.failed
    assert np.max(np.abs(tr.errors)) <= 1e-6
    assert np.allclose(tr.u, tr.u0, atol=1e-6)
    # a reversing run goes towards smaller s at unit rate
    assert tr.s[-1] == pytest.approx(tr.s[0] - tr.t[-1], abs=1e-6)


def test_small_errors_follow_the_linear_model(straight, gain, geometry):
    A, B = straight_line_model(geometry, -1.0)
    Acl = A - B @ gain.K[None, :]
    e0 = 1e-3 * np.array([0.6, -0.4, 0.5, -0.5])
    tr = simulate_closed_loop(SimulationConfig(straight, gain, e0, duration=40.0))
    pred = np.array([scipy.linalg.expm(Acl * t) @ e0 for t in tr.t[::50]])
    assert np.max(np.abs(tr.errors[::50] - pred)) <= 1e-3 * np.linalg.norm(e0)


@pytest.mark.parametrize("where", ["straight", "curved"])
def test_global_and_frenet_integrations_agree(where, eight, straight, gain):
    path, s0 = (straight, 110.0) if where == "straight" else (eight, 110.0)
    cfg = SimulationConfig(path, gain, (-1.0, -0.05, 0.05, -0.1), s0=s0, duration=60.0)
    tr = simulate_closed_loop(cfg)
    t, s, E = sim.simulate_frenet(cfg)
    n = min(len(tr), len(t))
    assert n > 5000
    assert np.max(np.abs(tr.errors[:n] - E[:n])) <= 1e-4
    assert np.max(np.abs(tr.s[:n] - s[:n])) <= 1e-4


def test_trace_errors_are_projections(eight, gain):
    tr = simulate_closed_loop(SimulationConfig(eight, gain, (-2.0, -0.1, 0.1, -0.2), duration=30.0))
    for k in range(0, len(tr), 250):
        assert np.allclose(global_to_error(tr.states[k], eight, tr.s[k]), tr.errors[k], atol=1e-9)
    # the projection moves continuously: one step never jumps more than a few dt
    assert np.max(np.abs(np.diff(tr.s))) <= 2 * tr.dt


def test_lyapunov_trace_derivative(eight, gain, certificate):
    tr = simulate_closed_loop(SimulationConfig(eight, gain, (-4.2, -0.1, 0.1, -0.3)))
    tr = lyapunov_trace(tr, certificate, eight, eight.geometry)
    assert tr.vdot_check <= 1e-3
    dc = sim.decay_check(tr, certificate.eps)
    assert dc.entry_index > 0
    assert dc.max_relative_increase <= 1e-9
    assert dc.max_decay_violation <= 1e-6
    assert dc.final_ratio <= 1e-3


def test_initial_error_outside_the_tube(eight, gain):
    s0 = 66.92
    k = eight.reference(s0).kappa0
    tr = simulate_closed_loop(SimulationConfig(eight, gain, (1.0 / k + 0.5, 0, 0, 0), s0=s0))
    assert tr.flag == "tube_violation" and tr.failed and len(tr) == 1
    assert tr.tube_margin[0] < 0


def test_huge_offset_jackknifes(straight, gain):
    tr = simulate_closed_loop(SimulationConfig(straight, gain, (200.0, 0, 0, 0)))
    assert tr.flag == "singular_joint" and tr.failed
    # the last row is the first state past the joint limit
    assert np.max(np.abs(tr.states[:-1, 3:])) < math.pi / 2 - 1e-3
    assert np.max(np.abs(tr.states[-1, 3:])) >= math.pi / 2 - 1e-3


def test_end_of_path_is_not_a_failure(straight, gain):
    tr = simulate_closed_loop(SimulationConfig(straight, gain, duration=500.0))
    assert tr.flag == "end_of_path" and not tr.failed
    assert tr.s[-1] <= straight.s_start + 1.0


def test_input_saturation(eight, gain):
    tr = simulate_closed_loop(SimulationConfig(eight, gain, (-4.2, -0.1, 0.1, -0.3), u_max=0.3,
                                               duration=40.0))
    assert np.max(np.abs(tr.u)) <= 0.3 + 1e-15
    free = simulate_closed_loop(SimulationConfig(eight, gain, (-4.2, -0.1, 0.1, -0.3), duration=40.0))
    assert np.max(np.abs(free.u)) > 0.3


def test_batch_matches_serial(eight, gain):
    cfgs = [SimulationConfig(eight, gain, (z, 0, 0, 0), duration=10.0) for z in (-1, 0.5, 2)]
    a = sim.simulate_batch(cfgs, threads=1)
    b = sim.simulate_batch(cfgs, threads=3)
    for x, y in zip(a, b):
        assert np.array_equal(x.errors, y.errors) and np.array_equal(x.states, y.states)


def test_csv_layout(eight, gain, certificate):
    tr = simulate_closed_loop(SimulationConfig(eight, gain, (0.5, 0, 0, 0), duration=1.0))
    text = tr.to_csv_string()
    lines = text.splitlines()
    assert lines[0].split(",") == list(sim.TRACE_COLUMNS)
    assert len(lines) == len(tr) + 1
    assert lines[1].split(",")[-3:] == ["nan", "nan", "0"]
    assert lines[-1].endswith(",0")
    tr = lyapunov_trace(tr, certificate, eight)
    data = np.loadtxt(tr.to_csv_string().splitlines()[1:], delimiter=",")
    assert np.array_equal(data[:, 13], tr.V) and data[-1, -1] == 0


def test_tracking_report(eight, gain):
    tr = simulate_closed_loop(SimulationConfig(eight, gain, (-4.2, -0.1, 0.1, -0.3)))
    rep = sim.tracking_report(tr)
    assert rep.max_abs_z3 == pytest.approx(4.2)
    assert 0 < rep.settling_time < rep.end_time
    assert rep.final_error_norm < 0.01 and rep.flag == "ok"
    zero = simulate_closed_loop(SimulationConfig(eight, gain, duration=2.0))
    assert sim.tracking_report(zero).settling_time == 0.0
    # a threshold never reached leaves the settling time infinite
    assert sim.tracking_report(tr, threshold=1e-30).settling_time == math.inf


def test_decay_check_needs_lyapunov_values(eight, gain):
    tr = simulate_closed_loop(SimulationConfig(eight, gain, duration=1.0))
    with pytest.raises(ValueError):
        sim.decay_check(tr, 0.001)


def test_config_validation(eight, gain):
    with pytest.raises(ValueError):
        SimulationConfig(eight, gain, dt=0.0)
    with pytest.raises(ValueError):
        SimulationConfig(eight, gain, v3=0.0)
    with pytest.raises(ValueError):
        SimulationConfig(eight, gain, duration=-1.0)
    cfg = SimulationConfig(eight, gain, v3=2.0)
    assert cfg.start_s == eight.s_start + 1.0
