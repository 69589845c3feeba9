"""
ClusterReserve - Errors
-----------------------
Exception hierarchy shared by every engine.

ConfigError lives next to the loader in config/config_loader.py.
"""

from __future__ import annotations

from typing import List, Tuple


class ClusterReserveError(Exception):
    pass


# ===============================
# Model / input errors
# ===============================

class ScenarioValidationError(ClusterReserveError):
    """Raised with the full list of (field_path, message) violations."""

    def __init__(self, violations: List[Tuple[str, str]]):
        self.violations = list(violations)
        lines = "\n".join(f" - {path}: {msg}" for path, msg in self.violations)
        super().__init__(f"Invalid scenario:\n{lines}")


class ArgumentOrderError(ClusterReserveError, ValueError):
    pass


# ===============================
# Numerical errors
# ===============================

class NumericalError(ClusterReserveError):
    pass


class ConvergenceError(NumericalError):
    def __init__(self, message: str, estimate: float, error_bound: float):
        self.estimate = estimate
        self.error_bound = error_bound
        super().__init__(f"{message} (estimate={estimate!r}, error_bound={error_bound!r})")


class XRangeError(NumericalError, OverflowError):
    pass


class TableRangeError(NumericalError, IndexError):
    pass


class NullConditioningError(NumericalError):
    pass


class UndefinedComponentsError(NumericalError):
    pass


# ===============================
# Monte Carlo errors
# ===============================

class InsufficientDataError(NumericalError):
    pass


class TailUnreliableError(NumericalError):
    pass
