# ============================================================================
# core/errors.py - Exception Hierarchy
# ============================================================================

"""
Errors raised across MVQA.

Every error derives from MvqaError so the CLI can map the whole family to
exit code 1. Contract and config errors are also ValueErrors.
"""

from typing import Optional


class MvqaError(Exception):
    """Base class for all MVQA errors"""


class ContractError(MvqaError, ValueError):
    """A shape or precondition contract was violated"""


class ConfigError(MvqaError, ValueError):
    """A configuration value is missing, malformed or inconsistent"""


class DataCorruptionError(MvqaError):
    """Dataset files do not match the hashes recorded in their manifest"""


class TapeError(MvqaError):
    """Misuse of the gradient tape (non-scalar loss, replayed tape, ...)"""


class CheckpointError(MvqaError):
    """A checkpoint cannot be read or does not match its configuration"""

    def __init__(self, message: str, version: Optional[int] = None):
        self.version = version
        if version is not None:
            message = f"{message} (checkpoint format v{version})"
        super().__init__(message)


class NumericalError(MvqaError):
    """A NaN or Inf value was produced"""

    def __init__(self, message: str, step: Optional[int] = None, term: Optional[str] = None):
        self.step = step
        self.term = term
        details = []
        if step is not None:
            details.append(f"step={step}")
        if term is not None:
            details.append(f"term={term}")
        if details:
            message = f"{message} [{', '.join(details)}]"
        super().__init__(message)
