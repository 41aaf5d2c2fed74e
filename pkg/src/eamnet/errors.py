"""Error types shared across the package.

Both subclass ValueError so callers that only care about "bad input" can
catch one thing; the CLI maps them onto its exit codes.
"""


class ConfigError(ValueError):
    """A configuration value violates a structural constraint."""


class ShapeError(ValueError):
    """A tensor does not have the shape an operation requires."""
