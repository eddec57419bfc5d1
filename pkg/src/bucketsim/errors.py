"""Shared exception types."""


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key or field."""


class TraceFormatError(ConfigError):
    """Malformed trace input. Carries the 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class SimulationError(RuntimeError):
    """Internal invariant breach inside the simulator (a bug, not user error)."""
