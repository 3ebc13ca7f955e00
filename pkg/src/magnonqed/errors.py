"""Exception hierarchy shared by the simulation and fitting modules."""


class MagnonQEDError(Exception):
    """Base class for all package errors."""


class ValidationError(MagnonQEDError, ValueError):
    """Invalid parameters.  ``path`` names the offending field."""

    def __init__(self, path, message):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}" if path else message)

    def prefixed(self, prefix):
        path = f"{prefix}.{self.path}" if self.path else prefix
        return ValidationError(path, self.message)


class SolverError(MagnonQEDError, RuntimeError):
    """A numerical solver failed to converge."""

    def __init__(self, message, residual=None):
        self.residual = residual
        if residual is not None:
            message = f"{message} (residual norm {residual:.3e})"
        super().__init__(message)


class StabilityError(SolverError):
    """Linearization around a non-minimum (negative mode stiffness)."""

    def __init__(self, message, branch=None):
        self.branch = branch
        super().__init__(message)


class DegenerateModeError(MagnonQEDError, ValueError):
    """Mode has no net dynamic moment, so no direction can be assigned."""


class PoleError(MagnonQEDError, ZeroDivisionError):
    """Transmission evaluated exactly on a lossless pole."""


class UndefinedVisibilityError(MagnonQEDError, ValueError):
    pass


class NeverStrongError(MagnonQEDError, ValueError):
    """Bare coupling does not exceed the losses at any drive power."""


class FitError(MagnonQEDError, RuntimeError):
    pass


class NoDipFound(FitError):
    pass


class NonConvergence(FitError):
    """Iteration cap reached; ``best`` holds the best parameters seen."""

    def __init__(self, message, best=None):
        self.best = best
        super().__init__(message)


class DegenerateFit(FitError):
    pass


class CrossingNotResolved(FitError):
    pass
