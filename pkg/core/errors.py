#!/usr/bin/env python3
"""
Exception hierarchy for quantlab.

Every error carries the process exit code the CLI reports for it:
configuration and usage problems exit with 2, numerical failures with 3.
"""

from typing import Any, Dict


class QuantLabError(Exception):
    """Base class for all quantlab errors."""
    exit_code: int = 1

    def to_dict(self) -> Dict[str, Any]:
        """Machine-readable form written to stderr by the CLI."""
        return {
            "error": type(self).__name__,
            "message": str(self),
            "exit_code": self.exit_code
        }


class ConfigError(QuantLabError):
    """Invalid, unknown or missing configuration keys; mismatched schemas."""
    exit_code = 2


class InvalidParameter(ConfigError, ValueError):
    """A distribution, model or surrogate parameter is out of range."""


class DimensionMismatch(ConfigError, ValueError):
    """A noise draw does not follow the dimensionality rule of its surrogate."""


class ShapeMismatch(ConfigError, ValueError):
    """Network input or upstream gradient has the wrong shape."""


class UnsupportedForward(ConfigError):
    """The estimator cannot be paired with this forward calculation."""


class UnsupportedMethod(ConfigError):
    """The requested evaluation method is not available for this forward."""


class UnsupportedCase(ConfigError):
    """The requested case is outside what the operation computes."""


class DimensionTooLarge(ConfigError):
    """Brute-force enumeration requested beyond its dimension limit."""


class NumericalError(QuantLabError):
    """Base class for numerical failures."""
    exit_code = 3


class SubdivisionLimit(NumericalError):
    """Adaptive quadrature exhausted its subdivision budget."""


class NonConvergence(NumericalError):
    """Training diverged or failed to improve."""


class DegenerateInput(NumericalError, ValueError):
    """Input hits a singularity of a formula (non-finite values)."""
