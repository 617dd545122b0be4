"""Exception hierarchy shared by all modules."""


class TrailerLQError(Exception):
    """Base class for toolkit errors."""


class OutOfRange(TrailerLQError, ValueError):
    pass


class SingularConfiguration(TrailerLQError):
    """Joint angle at the +-pi/2 bound or vanishing coupling factor."""

    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class TubeViolation(TrailerLQError):
    """The Frenet transform is undefined (1 - kappa*z3 <= tol or |heading error| >= pi/2)."""


class AmbiguousProjection(TrailerLQError):
    def __init__(self, message, candidates):
        super().__init__(message)
        self.candidates = candidates


class NoStabilizingSolution(TrailerLQError):
    pass


class Infeasible(TrailerLQError):
    def __init__(self, message, best_margin):
        super().__init__(f"{message} (best max margin {best_margin:.3e})")
        self.best_margin = best_margin


class MaxIterations(TrailerLQError):
    pass


class EmptyFeasibleSet(TrailerLQError):
    pass


class ConfigError(TrailerLQError):
    pass
