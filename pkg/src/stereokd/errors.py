"""Exception types shared across the package."""


class StereoKdError(Exception):
    """Base class for all package errors."""


class DimensionError(StereoKdError):
    """A tensor argument has an incompatible shape; message names the axis."""


class ContractError(StereoKdError):
    """An operation precondition was violated."""


class EmptyReductionError(StereoKdError):
    """A masked reduction received zero unmasked elements."""


class GraphError(StereoKdError):
    """Autograd graph misuse, e.g. backward called twice on one graph."""


class FormatError(StereoKdError):
    """A binary file is malformed. Carries the byte offset of the problem."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericsError(StereoKdError):
    """Non-finite values where the training contract requires finite ones."""


class ConfigError(StereoKdError):
    """A run configuration document failed schema validation."""
