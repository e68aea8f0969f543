"""Shared exception hierarchy.

Every error the toolkit raises on purpose derives from ForgeError so the CLI
can map failures to exit code 1 without catching unrelated bugs.
"""


class ForgeError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(ForgeError):
    """Bad configuration or usage; the CLI maps this to exit code 2."""
