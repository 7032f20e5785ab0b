"""Exception hierarchy shared by the solver modules."""


class ReinflowError(Exception):
    """Base class for all errors raised by reinflow."""


class MeshError(ReinflowError, ValueError):
    """Invalid geometry or a mesh that violates its invariants."""


class AssemblyError(ReinflowError, RuntimeError):
    """Raised when an element cannot be integrated (e.g. inverted element)."""

    def __init__(self, message, element=None):
        super().__init__(message)
        self.element = element


class ConstraintError(ReinflowError, ValueError):
    """Inconsistent or over-determined boundary constraints."""


class SingularMatrixError(ReinflowError, RuntimeError):
    """Factorization hit a structurally or numerically zero pivot."""

    def __init__(self, message, dof=None):
        super().__init__(message)
        self.dof = dof


class ConvergenceError(ReinflowError, RuntimeError):
    """Nonlinear iteration failed; ``history`` holds the residual norms."""

    def __init__(self, message, history=()):
        super().__init__(message)
        self.history = list(history)


class LineSearchError(ConvergenceError):
    pass


class ConfigError(ReinflowError, ValueError):
    pass
