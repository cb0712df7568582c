"""Exception types shared across the library.

The CLI maps these onto exit codes: configuration problems exit 2,
missing inputs exit 3, numerical/geometric failures exit 4.
"""

from __future__ import annotations


class SplatViewError(Exception):
    """Base class for all library errors."""


class DegenerateGeometry(SplatViewError):
    """A geometric construction has no unique answer (parallel lines,
    coincident points, up hint parallel to the view direction)."""


class ParseError(SplatViewError):
    """Malformed input file. Carries the file path plus a byte offset
    (binary formats) or a line number (text formats) when known."""

    def __init__(self, message: str, *, path=None, offset: int | None = None,
                 line: int | None = None):
        where = str(path) if path is not None else "<input>"
        if offset is not None:
            where += f" @ byte {offset}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}")
        self.path = path
        self.offset = offset
        self.line = line


class UnsupportedFormat(SplatViewError):
    """The file is recognisable but in a variant this library does not read
    (e.g. ASCII or big-endian PLY)."""


class RangeError(SplatViewError):
    """A parsed value is outside its documented range (class id, normalized
    coordinate, confidence)."""


class DimensionMismatch(SplatViewError):
    """Two images passed to a metric do not have the same shape."""


class MismatchedViews(SplatViewError):
    """A prediction view id has no ground-truth counterpart."""


class NumericalError(SplatViewError):
    """A numerical invariant was violated (non-invertible projected
    covariance, non-finite intermediate)."""


class ConfigError(SplatViewError):
    """Invalid pipeline configuration."""


class IoError(SplatViewError):
    """Failed to read or write an artifact; carries the pose/view id."""

    def __init__(self, message: str, *, item_id: str | None = None):
        if item_id is not None:
            message = f"{item_id}: {message}"
        super().__init__(message)
        self.item_id = item_id


class MissingDetections(SplatViewError):
    """Detection files are absent for one or more rendered views."""

    def __init__(self, view_ids, *, directory=None):
        self.view_ids = sorted(view_ids)
        self.directory = directory
        shown = ", ".join(self.view_ids[:8])
        if len(self.view_ids) > 8:
            shown += f", ... ({len(self.view_ids)} total)"
        msg = f"no detection file for view(s): {shown}"
        if directory is not None:
            msg += (f". Run your detector over the rendered images, write one "
                    f"'<view_id>.txt' per view into {directory}, then rerun the "
                    f"pipeline; completed stages are reused.")
        super().__init__(msg)
