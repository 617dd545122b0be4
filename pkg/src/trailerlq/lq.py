"""LQ synthesis through the Hamiltonian of the algebraic Riccati equation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NoStabilizingSolution
from .linearization import straight_line_model
from .vehicle import VehicleGeometry

DEFAULT_Q = (0.05, 10.0, 8.0, 2.0)


@dataclass(frozen=True)
class CostWeights:
    Q: np.ndarray
    R: float = 1.0

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        if Q.shape[0] == 1 and Q.shape[1] > 1:
            Q = np.diag(Q[0])
        if not np.allclose(Q, Q.T, atol=1e-12):
            raise ValueError("Q must be symmetric")
        if np.linalg.eigvalsh(Q).min() < -1e-12:
            raise ValueError("Q must be positive semidefinite")
        if not self.R > 0:
            raise ValueError("R must be positive")
        object.__setattr__(self, "Q", Q)


@dataclass(frozen=True)
class RiccatiSolution:
    P: np.ndarray
    residual: float


@dataclass(frozen=True)
class FeedbackGain:
    """Row gain K; the applied correction is ``u_tilde = -K @ error``."""

    K: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "K", np.asarray(self.K, dtype=float).ravel())

    def feedback(self, err) -> float:
        return -float(self.K @ np.asarray(err, dtype=float))


def build_hamiltonian(A, B, Q, R, v: float = 1.0) -> np.ndarray:
    """H(v) = [[vA, -v^2 B R^-1 B^T], [-Q, -v A^T]]."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    Rinv = np.linalg.inv(np.atleast_2d(R))
    return np.block([[v * A, -v * v * B @ Rinv @ B.T], [-np.asarray(Q, dtype=float), -v * A.T]])


def care_residual(A, B, Q, R, P) -> float:
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    Rinv = np.linalg.inv(np.atleast_2d(R))
    return float(np.max(np.abs(A.T @ P + P @ A + Q - P @ B @ Rinv @ B.T @ P)))


def solve_care(A, B, Q, R=1.0, boundary_tol: float = 1e-10) -> RiccatiSolution:
    """Stabilizing solution of A^T P + P A + Q = P B R^-1 B^T P.

    Built from the stable invariant subspace of the Hamiltonian, selected by an
    ordered real Schur decomposition.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    H = build_hamiltonian(A, B, Q, R)
    eig = np.linalg.eigvals(H)
    if np.min(np.abs(eig.real)) < boundary_tol:
        raise NoStabilizingSolution("Hamiltonian has eigenvalues on the imaginary axis")
    T, U, sdim = scipy.linalg.schur(H, output="real", sort="lhp")
    if sdim != n:
        raise NoStabilizingSolution(f"{sdim} stable Hamiltonian eigenvalues, expected {n}")
    U11, U21 = U[:n, :n], U[n:, :n]
    if np.linalg.cond(U11) > 1e12:
        raise NoStabilizingSolution("stable subspace is not a graph subspace")
    P = np.linalg.solve(U11.T, U21.T).T
    P = 0.5 * (P + P.T)
    return RiccatiSolution(P, care_residual(A, B, Q, R, P))


def lq_gain(solution: RiccatiSolution, B, R=1.0) -> FeedbackGain:
    """K = R^-1 B^T P, with B already carrying the speed factor."""
    B = np.asarray(B, dtype=float).reshape(-1, 1)
    K = np.linalg.solve(np.atleast_2d(R), B.T @ solution.P)
    return FeedbackGain(K.ravel())


def closed_loop_poles(A, B, K, v: float = 1.0) -> np.ndarray:
    """Spectrum of v (A - B K), sorted by real then imaginary part."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    K = np.asarray(getattr(K, "K", K), dtype=float).reshape(B.shape[1], -1)
    return np.sort_complex(np.linalg.eigvals(v * (A - B @ K)))


def synthesize(geometry: VehicleGeometry = VehicleGeometry(), weights: CostWeights | None = None,
               v3: float = -1.0) -> tuple[FeedbackGain, RiccatiSolution]:
    """LQ gain for the straight-line model at unit speed of the given sign."""
    weights = weights or CostWeights(np.diag(DEFAULT_Q))
    A, B = straight_line_model(geometry, float(np.sign(v3)))
    sol = solve_care(A, B, weights.Q, weights.R)
    return lq_gain(sol, B, weights.R), sol


def controllable(A, B, tol: float = 1e-9) -> bool:
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    n = A.shape[0]
    C = np.hstack([np.linalg.matrix_power(A, k) @ B for k in range(n)])
    return np.linalg.matrix_rank(C, tol=tol * max(1.0, np.abs(C).max())) == n


def gain_at_speed(A, B, Q, R, v: float) -> FeedbackGain:
    """LQ gain for the speed-scaled model (vA, vB)."""
    A = np.asarray(A, dtype=float)
    vB = v * np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    return lq_gain(solve_care(v * A, vB, Q, R), vB, R)


def hamiltonian_similarity(n: int) -> np.ndarray:
    """T = diag(I, -I), which maps H(v) to -H(-v)."""
    return np.diag(np.concatenate([np.ones(n), -np.ones(n)]))


@dataclass(frozen=True)
class SpeedInvarianceCheck:
    gain_spread: float
    pole_mismatch: float
    similarity_residual: float


def check_speed_invariance(A, B, Q, R=1.0, speeds=(0.1, 1.0, 7.0)) -> SpeedInvarianceCheck:
    """Gain spread over ``speeds``, v = +-1 pole mismatch and the H(v) similarity residual.

    The gain spread compares speeds of one sign; the pole check designs a
    separate gain for each direction of travel.

    ``A``, ``B`` are the unit-speed model.
    """
    A = np.asarray(A, dtype=float)
    gains = np.array([gain_at_speed(A, B, Q, R, v).K for v in speeds])
    spread = float(np.max(np.abs(gains - gains[0])))
    # each direction of travel with its own design
    Kp, Km = gain_at_speed(A, B, Q, R, 1.0).K, gain_at_speed(A, B, Q, R, -1.0).K
    mismatch = float(np.max(np.abs(closed_loop_poles(A, B, Kp, 1.0) - closed_loop_poles(A, B, Km, -1.0))))
    T = hamiltonian_similarity(A.shape[0])
    sim = max(float(np.max(np.abs(T @ build_hamiltonian(A, B, Q, R, v) @ np.linalg.inv(T)
                                  + build_hamiltonian(A, B, Q, R, -v)))) for v in speeds)
    return SpeedInvarianceCheck(spread, mismatch, sim)
