"""Exceptions raised by the lab."""

from typing import Iterable


class FarLabError(Exception):
    """Base class for every error raised deliberately by the lab."""


class InvalidArgumentError(FarLabError, ValueError):
    """An argument violates a documented precondition (shape, range, emptiness)."""


class UndefinedMetricError(FarLabError, ValueError):
    """A metric is undefined for the given inputs."""


class VersionMismatchError(FarLabError):
    """A persisted document carries an unsupported format version."""

    def __init__(self, kind: str, expected: int, found):
        self.kind = kind
        self.expected = expected
        self.found = found
        super().__init__(
            f"Unsupported {kind} version: expected {expected}, found {found}."
        )


class StateFormatError(FarLabError):
    """A persisted document is truncated or malformed."""


class MissingRunFilesError(FarLabError):
    """A run directory lacks files needed to build a report."""

    def __init__(self, missing: Iterable[str]):
        self.missing = sorted(str(path) for path in missing)
        listing = "\n".join(f"  - {path}" for path in self.missing)
        super().__init__(f"Missing run files:\n{listing}")
