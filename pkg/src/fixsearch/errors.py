"""Exception types; the CLI maps them onto exit codes."""


class ConfigError(ValueError):
    """A parameter violates its documented invariant (CLI exit 1)."""


class FormatError(ValueError):
    """File does not match its declared format (CLI exit 2)."""


class DataError(ValueError):
    """Input parsed but its content is unusable (CLI exit 2)."""
