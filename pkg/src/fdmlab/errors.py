"""Exception hierarchy shared by every module."""


class FdmLabError(Exception):
    """Base class for all errors raised by fdmlab."""


class DomainError(FdmLabError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConfigError(FdmLabError, ValueError):
    """A configuration value is unknown, mistyped or violates a constraint."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class ShapeError(FdmLabError, ValueError):
    """Array shapes do not line up."""


class IntegrationError(FdmLabError, RuntimeError):
    """An ODE integration produced a non-finite state."""


class TrainingError(FdmLabError, RuntimeError):
    """Training diverged or received non-finite gradients."""


class SamplingError(FdmLabError, RuntimeError):
    """A reverse sampler produced a non-finite intermediate."""

    def __init__(self, step, message):
        self.step = step
        super().__init__(f"step {step}: {message}")
