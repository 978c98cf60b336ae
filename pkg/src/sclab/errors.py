"""Exception types shared across the package."""


class PreconditionError(ValueError):
    """A documented precondition of an operation was violated."""


class ModelError(ValueError):
    """A potential model fails a structural requirement (decay, finiteness)."""


class IntegrationError(RuntimeError):
    """Trajectory integration failed or exceeded its error budget."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class ConfigError(ValueError):
    """A scenario config is malformed; ``field`` names the offending entry."""

    def __init__(self, field, message):
        super().__init__(f"config field '{field}': {message}")
        self.field = field
