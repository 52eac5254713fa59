"""
Error taxonomy shared by the estimators, the simulation engine and the CLI.

Each class carries the process exit code the CLI uses for it.
"""

from copy import copy
from typing import Dict, Optional


class StratahError(Exception):
    """Base class for all stratah errors."""

    exit_code: int = 1


class InvalidInput(StratahError):
    """An argument is outside its domain (negative time, tau <= 0, bad weight)."""

    exit_code = 4


class ParseError(InvalidInput):
    """A dataset file could not be parsed."""

    exit_code = 3

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        self.message = message
        super().__init__(f"line {line}: {message}" if line is not None else message)


class ScenarioError(ParseError):
    """A scenario file has a missing or invalid key."""

    def __init__(self, message: str, key: Optional[str] = None):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


class EstimationError(StratahError):
    """An estimator cannot be evaluated on the data it was given."""

    exit_code = 5

    def __init__(self, message: str, arm: Optional[int] = None, stratum: Optional[str] = None):
        self.message = message
        self.arm = arm
        self.stratum = stratum
        super().__init__(self._render())

    def _render(self) -> str:
        cell = []
        if self.arm is not None:
            cell.append(f"arm={self.arm}")
        if self.stratum is not None:
            cell.append(f"stratum={self.stratum}")
        return f"{self.message} [{', '.join(cell)}]" if cell else self.message

    def for_cell(self, arm: Optional[int] = None, stratum: Optional[str] = None) -> "EstimationError":
        """Return a copy tagged with the (arm, stratum) cell, keeping existing tags."""
        tagged = copy(self)
        tagged.arm = self.arm if self.arm is not None else arm
        tagged.stratum = self.stratum if self.stratum is not None else stratum
        tagged.args = (tagged._render(),)
        return tagged


class ZeroEvents(EstimationError):
    """No events at or before tau, so the log-scale AH is undefined."""


class TauBeyondData(EstimationError):
    """The risk set is exhausted by censoring before tau."""


class MissingStratumArm(EstimationError):
    """A stratum has no subjects in one of the two arms."""


class InvalidPairing(EstimationError):
    """Two group estimates were built with different tau or weights."""


class SimulationAborted(StratahError):
    """Too many replicates failed for the Monte Carlo summary to be trusted."""

    exit_code = 6

    def __init__(self, failed: int, total: int, failures: Dict[str, int]):
        self.failed = failed
        self.total = total
        self.failures = dict(failures)
        summary = ", ".join(f"{name}={count}" for name, count in sorted(self.failures.items()))
        super().__init__(f"{failed} of {total} replicates failed ({summary})")
