"""Exception types shared across palletmap."""

from __future__ import annotations


class PalletmapError(Exception):
    """Base class for all library errors."""


class ParseError(PalletmapError, ValueError):
    """A text record could not be parsed.

    ``line`` is 1-based when known; ``field`` names the offending field.
    """

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class ValidationError(PalletmapError, ValueError):
    """A value parsed fine but violates a domain invariant."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class ConfigError(PalletmapError, ValueError):
    """Invalid configuration (fractions, methods, parameter spaces...)."""


class StructuralError(PalletmapError, ValueError):
    """Array or tensor shape does not match its declared layout."""


class StudyError(PalletmapError, RuntimeError):
    """A tuning study could not produce a result."""
