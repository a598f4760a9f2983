"""quantlab test suite."""
