"""Exception hierarchy.

Every error raised for bad input carries enough context (file, line) to be
reported as a structured record by the CLI.
"""

from __future__ import annotations

from typing import Any


class RoadvalError(Exception):
    """Base class for all structured errors."""

    kind = "error"

    def __init__(self, message: str, path: Any = None, line: int | None = None):
        self.message = message
        self.path = None if path is None else str(path)
        self.line = line
        super().__init__(self._render())

    def _render(self) -> str:
        where = ""
        if self.path is not None:
            where = self.path if self.line is None else f"{self.path}:{self.line}"
            where += ": "
        return f"{where}{self.message}"

    def to_dict(self) -> dict:
        return {"error": self.kind, "file": self.path, "line": self.line, "message": self.message}


class InvalidRotationError(RoadvalError, ValueError):
    kind = "invalid_rotation"


class DomainError(RoadvalError, ValueError):
    kind = "domain"


class ParseError(RoadvalError, ValueError):
    kind = "parse"


class SchemaError(RoadvalError, ValueError):
    kind = "schema"


class FormatError(RoadvalError, ValueError):
    kind = "format"


class OrderingError(RoadvalError, ValueError):
    kind = "ordering"


class OutOfRangeError(RoadvalError, ValueError):
    kind = "out_of_range"


class NoSeedError(RoadvalError):
    kind = "no_seed"


class DatasetError(RoadvalError):
    """A dataset-level file is missing or unusable."""

    kind = "dataset"


class FrameSetMismatchError(RoadvalError):
    kind = "frame_set_mismatch"
