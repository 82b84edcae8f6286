"""Error hierarchy shared by the services and the CLI.

Each error carries the process exit code the CLI maps it to:
1 usage/config, 2 data, 3 numerical failure.
"""
from __future__ import annotations

from typing import Any, Dict, List, Optional

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class MetamedError(Exception):
    exit_code = EXIT_NUMERICAL


class InputError(MetamedError, ValueError):
    """Malformed or insufficient input data."""
    exit_code = EXIT_DATA

    def __init__(self, message: str, lines: Optional[List[int]] = None):
        super().__init__(message)
        self.lines = lines or []


class DegenerateIQRError(InputError):
    pass


class ParameterDomainError(InputError):
    """A value lies outside the domain of a distribution or transform."""


class ConfigError(MetamedError, ValueError):
    exit_code = EXIT_USAGE


class EstimationError(MetamedError):
    """A numerical procedure failed; `diagnostics` says where."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class BootstrapInstabilityError(EstimationError):
    pass


class OracleUnreliableError(EstimationError):
    pass


class ConvergenceError(EstimationError):
    def __init__(self, message: str, trace: Optional[List[float]] = None):
        super().__init__(message, diagnostics={"trace": list(trace or [])})
        self.trace = list(trace or [])
