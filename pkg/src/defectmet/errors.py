"""Exception hierarchy.

Everything a user can trigger with bad input derives from ``DefectMetError``;
the CLI maps those to exit code 1.  ``InvariantViolation`` marks internal bugs
and maps to exit code 2.
"""

from __future__ import annotations


class DefectMetError(Exception):
    """Base class for input and validation failures."""


class ParseError(DefectMetError):
    def __init__(self, message: str, *, offset: int | None = None, source: str | None = None):
        self.offset = offset
        self.source = source
        parts = []
        if source:
            parts.append(str(source))
        if offset is not None:
            parts.append(f"byte {offset}")
        prefix = ": ".join(parts)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class MissingMetadataError(DefectMetError):
    pass


class DuplicateImageError(DefectMetError):
    pass


class RangeError(DefectMetError, ValueError):
    pass


class DegenerateGeometryError(DefectMetError, ValueError):
    pass


class EmptySeriesError(DefectMetError, ValueError):
    pass


class ZeroBaselineError(DefectMetError, ValueError):
    pass


class MismatchedImageSetError(DefectMetError):
    pass


class UnknownTagError(DefectMetError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class EmptySideError(DefectMetError):
    pass


class MissingResultError(DefectMetError):
    pass


class InvariantViolation(AssertionError):
    """An internal consistency check failed; this is a bug, not bad input."""
