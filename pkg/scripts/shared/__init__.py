"""
Shared utilities for quantlab scripts.

Only add utilities here when they're genuinely shared across 2+ scripts.
"""

from .colors import Colors
from .cli_utils import create_base_parser, emit_error

__all__ = [
    'Colors',
    'create_base_parser',
    'emit_error',
]
