"""ANSI colors for pass/fail reporting."""


class Colors:
    """ANSI color codes for terminal formatting."""

    GREEN = '\033[0;32m'
    RED = '\033[0;31m'
    BOLD = '\033[1m'
    RESET = '\033[0m'

    @classmethod
    def disable(cls):
        """Disable all colors (for --no-color flag)."""
        for attr in ('GREEN', 'RED', 'BOLD', 'RESET'):
            setattr(cls, attr, '')

    @classmethod
    def verdict(cls, passed: bool) -> str:
        if passed:
            return f"{cls.GREEN}PASS{cls.RESET}"
        return f"{cls.RED}FAIL{cls.RESET}"
