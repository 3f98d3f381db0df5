"""Exception types shared across the package."""


class ColtError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(ColtError, ValueError):
    """Invalid hyperparameters, unknown method names, bad layer dims, ..."""


class ShapeError(ColtError, ValueError):
    """Array dimensions do not agree."""


class ContractError(ColtError, ValueError):
    """An input violates an operation's precondition."""


class InsufficientDataError(ColtError, ValueError):
    pass


class TrainingDivergedError(ColtError, RuntimeError):
    """A loss or gradient became non-finite during optimization."""

    def __init__(self, message, epoch=None, diagnostics=None):
        super().__init__(message)
        self.epoch = epoch
        self.diagnostics = diagnostics or {}
