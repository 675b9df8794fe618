"""Exception hierarchy.

Every error raised on purpose derives from :class:`DualTrapError`, so the CLI
can map input problems to exit code 2 and physics problems to exit code 3.
Errors carry the name of the module that raised them.
"""


class DualTrapError(Exception):
    def __init__(self, message, *, module="dualtrap"):
        super().__init__(message)
        self.module = module

    def __str__(self):
        return f"[{self.module}] {super().__str__()}"


class InputError(DualTrapError, ValueError):
    """Malformed or out-of-range input."""


class DomainError(DualTrapError):
    """Physically meaningful request with no solution (e.g. no trap minimum)."""


class CalibrationError(DomainError):
    def __init__(self, message, residuals=None, **kw):
        super().__init__(message, **kw)
        self.residuals = dict(residuals or {})


class SynthesisError(DomainError):
    def __init__(self, message, time=None, request=None, **kw):
        super().__init__(message, **kw)
        self.time = time
        self.request = request


class EscapeError(DomainError):
    def __init__(self, message, time=None, **kw):
        super().__init__(message, **kw)
        self.time = time


class ConvergenceError(DomainError):
    pass


class TruncationError(DomainError):
    pass


class FitError(DomainError):
    def __init__(self, message, residual=None, **kw):
        super().__init__(message, **kw)
        self.residual = residual


class EstimatorError(DomainError):
    pass


class IdentifiabilityError(DomainError):
    pass
