"""Exception types raised by the solvers."""


class BetheError(Exception):
    """Base class; carries an optional diagnostics dict."""

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics

    def to_dict(self):
        return {"error": type(self).__name__, "message": str(self),
                "diagnostics": self.diagnostics}


class DomainError(BetheError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class AdmissibilityError(DomainError):
    """2p < N + 1/2: the partition is not admissible at this momentum."""


class NonConvergence(BetheError):
    """Iteration budget exhausted."""


class ConstraintViolation(BetheError):
    """Hole-count constraint or monotonicity failed after convergence."""


class RealAxisSingularity(BetheError):
    """A pole of the monster potential lies on (or too close to) the real axis."""


class MatchFailure(BetheError):
    """Shooting could not bracket or refine an eigenvalue."""


class DegenerateRoots(BetheError):
    """Two apparent-singularity positions collided."""
