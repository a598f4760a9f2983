"""CLI utilities for quantlab scripts."""

import argparse
import json
import sys


def create_base_parser(description: str, version: str, add_common_args: bool = True) -> argparse.ArgumentParser:
    """
    Create base argument parser with common flags.

    Args:
        description: Script description
        version: Version string reported by --version
        add_common_args: Add common flags (--no-color, --version)

    Returns:
        Configured ArgumentParser
    """
    parser = argparse.ArgumentParser(
        description=description,
        formatter_class=argparse.RawDescriptionHelpFormatter
    )

    if add_common_args:
        parser.add_argument('--no-color', action='store_true',
                            help='Disable colored output')
        parser.add_argument('--version', action='version',
                            version=f'%(prog)s {version}')

    return parser


def emit_error(error) -> int:
    """Write an error's machine-readable form to stderr and return its exit code."""
    payload = error.to_dict()
    print(json.dumps(payload), file=sys.stderr)
    return payload["exit_code"]
