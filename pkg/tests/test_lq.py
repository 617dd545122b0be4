import numpy as np
import pytest
import scipy.linalg

from trailerlq import CostWeights, NoStabilizingSolution, VehicleGeometry, solve_care, synthesize
from trailerlq.linearization import open_loop_poles, straight_line_model
from trailerlq.lq import (DEFAULT_Q, build_hamiltonian, care_residual, check_speed_invariance,
                          closed_loop_poles, controllable, gain_at_speed, hamiltonian_similarity,
                          lq_gain)


def random_design(rng):
    geo = VehicleGeometry(rng.uniform(2, 6), rng.uniform(1, 5), rng.uniform(3, 12), rng.uniform(0, 1.5))
    Q = np.diag(rng.uniform(0.01, 20, 4))
    return geo, Q, rng.uniform(0.1, 10)


def test_care_matches_scipy(rng):
    for _ in range(100):
        n = int(rng.integers(2, 7))
        A = rng.normal(size=(n, n))
        B = rng.normal(size=(n, 1))
        M = rng.normal(size=(n, n))
        Q = M @ M.T + 0.1 * np.eye(n)
        R = rng.uniform(0.2, 5)
        sol = solve_care(A, B, Q, R)
        ref = scipy.linalg.solve_continuous_are(A, B, Q, np.array([[R]]))
        assert np.allclose(sol.P, ref, rtol=1e-7, atol=1e-8 * np.abs(ref).max())
        assert sol.residual < 1e-8 * max(1.0, np.abs(ref).max() ** 2)
        K = lq_gain(sol, B, R).K
        assert np.all(np.linalg.eigvals(A - B @ K[None, :]).real < 0)


def test_trailer_gain_matches_scipy(geometry):
    A, B = straight_line_model(geometry, -1.0)
    K, sol = synthesize(geometry)
    ref = scipy.linalg.solve_continuous_are(A, B, np.diag(DEFAULT_Q), np.eye(1))
    assert np.allclose(K.K, (B.T @ ref).ravel(), atol=1e-10)
    assert care_residual(A, B, np.diag(DEFAULT_Q), 1.0, sol.P) < 1e-10
    assert np.all(closed_loop_poles(A, B, K).real < 0)


def test_speed_invariance_over_random_designs(rng):
    for _ in range(20):
        geo, Q, R = random_design(rng)
        A, B = straight_line_model(geo, 1.0)
        chk = check_speed_invariance(A, B, Q, R)
        scale = np.abs(gain_at_speed(A, B, Q, R, 1.0).K).max()
        assert chk.gain_spread <= 1e-8 * max(1.0, scale)
        assert chk.pole_mismatch <= 1e-8
        assert chk.similarity_residual <= 1e-12


def test_negative_speed_gain_sign(geometry):
    # the reversing design is the forward design seen from the other direction
    A, B = straight_line_model(geometry, 1.0)
    Q = np.diag(DEFAULT_Q)
    Kf = gain_at_speed(A, B, Q, 1.0, 1.0).K
    Kr = gain_at_speed(A, B, Q, 1.0, -1.0).K
    assert not np.allclose(Kf, Kr)
    assert np.allclose(synthesize(geometry, v3=-3.0)[0].K, Kr, atol=1e-10)


def test_similarity_matrix():
    T = hamiltonian_similarity(3)
    assert np.array_equal(T @ T, np.eye(6))
    A = np.arange(9.0).reshape(3, 3)
    B = np.ones((3, 1))
    H = build_hamiltonian(A, B, np.eye(3), 2.0, 0.7)
    assert np.allclose(T @ H @ T, -build_hamiltonian(A, B, np.eye(3), 2.0, -0.7), atol=0)


def test_cost_scaling_leaves_gain_unchanged(geometry):
    K1, s1 = synthesize(geometry, CostWeights(np.diag(DEFAULT_Q), 1.0))
    K2, s2 = synthesize(geometry, CostWeights(7.5 * np.diag(DEFAULT_Q), 7.5))
    assert np.allclose(K1.K, K2.K, rtol=1e-9)
    assert np.allclose(7.5 * s1.P, s2.P, rtol=1e-9)


def test_zero_gain_gives_open_loop_poles(geometry):
    A, B = straight_line_model(geometry, -1.0)
    got = closed_loop_poles(A, B, np.zeros(4))
    want = np.sort_complex(open_loop_poles(geometry, -1.0).astype(complex))
    assert np.allclose(got, want, atol=1e-12)


def test_uncontrollable_unstable_mode_has_no_solution():
    A = np.diag([1.0, -1.0])
    B = np.array([[0.0], [1.0]])
    assert not controllable(A, B)
    with pytest.raises(NoStabilizingSolution):
        solve_care(A, B, np.eye(2), 1.0)


def test_trailer_model_is_controllable(geometry):
    assert controllable(*straight_line_model(geometry, -1.0))
    # without the hitch offset the dolly input enters only through beta2
    assert controllable(*straight_line_model(VehicleGeometry(M1=0.0), -1.0))


def test_weights_validation():
    with pytest.raises(ValueError):
        CostWeights(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        CostWeights(np.diag([1.0, -1.0]))
    with pytest.raises(ValueError):
        CostWeights(np.eye(2), 0.0)
    assert CostWeights([1, 2, 3, 4]).Q.shape == (4, 4)
