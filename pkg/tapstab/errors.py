"""
Exception hierarchy for tapstab.

Every error derives from a builtin as well, so callers that only know about
ValueError / RuntimeError keep working.
"""

from __future__ import annotations

from pathlib import Path


class TapError(Exception):
    """Base class for all tapstab errors."""


class TapInputError(TapError, ValueError):
    """Bad parameters, ids out of range, unusable files."""


class EdgeListParseError(TapInputError):
    def __init__(self, path: str | Path, line_number: int, line: str):
        self.path = str(path)
        self.line_number = line_number
        self.line = line
        super().__init__(f"{self.path}:{line_number}: malformed edge line {line!r}")


class InstanceTooLargeError(TapInputError):
    """Exact or exhaustive oracle refused an instance beyond its cap."""


class OracleMismatchError(TapInputError):
    """Oracle does not belong to this graph or configuration."""


class ClosureViolationError(TapError, AssertionError):
    """A node set expected to be closed under reachability is not."""


class ResourceGuardError(TapError, RuntimeError):
    """A wall-clock or size guard tripped."""
