"""Exception hierarchy shared by every subpackage."""


class SitsError(Exception):
    """Base class for all package errors."""


class DimensionError(SitsError, ValueError):
    """Tensor or array extents do not line up."""


class ConfigError(SitsError, ValueError):
    """Invalid hyperparameter or configuration value."""


class InputError(SitsError, ValueError):
    """Input data violates an operation's precondition."""


class ContractError(SitsError, RuntimeError):
    """API misuse, e.g. calling backward on a non-scalar."""


class NumericError(SitsError, FloatingPointError):
    """NaN/Inf detected, or a training run diverged."""


class FormatError(SitsError, ValueError):
    """Malformed file on disk."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class PlanningError(SitsError, ValueError):
    """A fold plan cannot be built from the given inputs."""


class MetricError(SitsError, ValueError):
    """A score is undefined on the given support."""


class GenerationError(SitsError, ValueError):
    """Synthetic world parameters cannot be honoured."""


class SchemeError(SitsError, ValueError):
    """Inference split scheme does not partition the dates."""
