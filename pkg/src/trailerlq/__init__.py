"""LQ path following and Lyapunov certification for a reversing general 2-trailer."""
from .errors import (AmbiguousProjection, ConfigError, EmptyFeasibleSet, Infeasible, MaxIterations,
                     NoStabilizingSolution, OutOfRange, SingularConfiguration, TrailerLQError,
                     TubeViolation)
from .frenet import EightProfile, NominalPath, eight_path, generate_nominal_path, project_onto_path
from .ldi import (ElementBoundBox, LyapunovCertificate, PathParameterSet, element_bounds,
                  enumerate_vertices, solve_common_lyapunov, verify_certificate)
from .lq import CostWeights, FeedbackGain, solve_care, synthesize
from .simulation import SimulationConfig, lyapunov_trace, simulate_closed_loop, tracking_report
from .vehicle import VehicleGeometry, VehicleState

__version__ = "0.1.0"
