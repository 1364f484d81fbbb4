"""
Exception hierarchy shared by every package under src/.

Library code raises these; only the CLI turns them into exit codes and
console messages (see src/cli/app.py).
"""

from typing import Optional


class HDSWError(Exception):
    """Base class. `exit_code` is what the CLI returns when this escapes a command."""

    exit_code: int = 1


class ConfigError(HDSWError):
    exit_code = 2

    def __init__(self, message: str, key: Optional[str] = None):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


class DimensionError(HDSWError):
    exit_code = 3


class DTypeError(DimensionError):
    """Arithmetic between float32 and float64 tensors. There is no implicit promotion."""


class ContractError(HDSWError):
    exit_code = 1


class NumericError(HDSWError):
    exit_code = 1

    def __init__(self, message: str, name: Optional[str] = None):
        self.name = name
        super().__init__(f"{name}: {message}" if name else message)


class IngestionError(HDSWError):
    exit_code = 4

    def __init__(self, path: str, reason: str):
        self.path = str(path)
        super().__init__(f"{path}: {reason}")


class CheckpointError(HDSWError):
    exit_code = 4


class ChecksumError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TrainingAborted(HDSWError):
    exit_code = 1

    def __init__(self, message: str, last_good: Optional[str] = None):
        self.last_good = last_good
        suffix = f" (last good checkpoint: {last_good})" if last_good else " (no checkpoint written yet)"
        super().__init__(message + suffix)
