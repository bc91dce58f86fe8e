"""
Error types for the VFDM pipeline.
Each error carries the process exit code the CLI reports for it.
"""


class VfdmError(Exception):
    """Base class for every error raised by the pipeline"""
    exit_code = 1


class ConfigError(VfdmError):
    """Invalid configuration, mismatched grids or incompatible checkpoints"""
    exit_code = 2


class DatasetIOError(VfdmError):
    """Reading or writing an artifact failed"""
    exit_code = 3


class IntegrityError(VfdmError):
    """Stored data does not match its checksum or manifest"""
    exit_code = 4


class NumericError(VfdmError):
    """NaN/Inf encountered in inputs or losses"""
    exit_code = 5


class DomainError(VfdmError):
    """Input outside the domain an operation is defined on"""
    exit_code = 6


class InvariantViolation(VfdmError):
    """Internal invariant broken (a bug, not a user error)"""
    exit_code = 7
