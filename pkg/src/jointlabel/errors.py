"""Exception hierarchy and the CLI exit codes attached to it."""


class JointLabelError(Exception):
    exit_code = 1


class ConfigError(JointLabelError, ValueError):
    """Invalid configuration: bad hyperparameter, shape mismatch, unknown preset."""

    exit_code = 2


class ContractError(JointLabelError, ValueError):
    """An input violates a documented precondition (row sums, one-hot, ...)."""

    exit_code = 2


class UsageError(JointLabelError, RuntimeError):
    """An operation was called in the wrong state (backward before forward, ...)."""

    exit_code = 2


class StorageError(JointLabelError, OSError):
    exit_code = 3


class NumericalError(JointLabelError, ArithmeticError):
    """A loss or gradient became non-finite."""

    exit_code = 4
