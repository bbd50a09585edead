"""Exception hierarchy.

Every error raised on bad input data derives from :class:`DataError`; the CLI
maps those to exit code 1. Parse errors additionally carry a 1-based line
number.
"""

from __future__ import annotations


class DeformkitError(Exception):
    """Base class for all package errors."""


class DataError(DeformkitError):
    """Input data violates a contract."""


class ParseError(DataError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}"
            if column is not None:
                where += f", column {column}"
            where += ": "
        super().__init__(where + message)


# ingest
class MalformedLine(ParseError):
    pass


class EmptyCloud(DataError):
    pass


class DuplicateId(ParseError):
    pass


class UnknownRole(ParseError):
    pass


class NonPositiveSigma(ParseError):
    pass


class UnknownRecordType(ParseError):
    pass


class UnresolvedPointId(ParseError):
    pass


class NonMonotoneTime(ParseError):
    def __init__(self, channel: str, line: int | None = None):
        self.channel = channel
        super().__init__(f"time not strictly increasing for channel {channel!r}", line)


class UnknownKind(ParseError):
    pass


# netadjust
class DatumDefect(DataError):
    pass


class NoConvergence(DataError):
    def __init__(self, max_iterations: int, last_update: float):
        self.max_iterations = max_iterations
        self.last_update = last_update
        super().__init__(
            f"no convergence after {max_iterations} iterations "
            f"(last max update {last_update:.3e} m)"
        )


class InsufficientRedundancy(DataError):
    pass


class MissingTruthPoint(DataError):
    def __init__(self, point_id: str):
        self.point_id = point_id
        super().__init__(f"no truth coordinate for point {point_id!r}")


# georef
class DegenerateGeometry(DataError):
    pass


class TooFewPoints(DataError):
    pass


class KeyMismatch(DataError):
    def __init__(self, point_id: str, epoch: str):
        self.point_id = point_id
        self.epoch = epoch
        super().__init__(f"checkpoint {point_id!r} epoch {epoch!r} missing on one side")


class EmptyTable(DataError):
    pass


# surface / deform
class NonPositiveCellSize(DataError):
    pass


class AxisOutsideGrid(DataError):
    pass


class FrameMismatch(DataError):
    pass


class ChainageOutOfRange(DataError):
    pass


class BadColorParams(DataError):
    pass


class SigmaSmallerThanCell(UserWarning):
    """Smoothing sigma below half a cell; the filter is close to identity."""


# compare
class PointOutsideExtent(DataError):
    def __init__(self, point_id: str):
        self.point_id = point_id
        super().__init__(f"truth point {point_id!r} lies outside the evaluated extent")


class TimeOutsideSeries(DataError):
    pass


class EmptyReport(DataError):
    pass


# synthbridge
class LoadOutsideSpan(DataError):
    pass


class UnreachableTarget(DataError):
    pass


class StageError(DeformkitError):
    """A pipeline stage failed; wraps the underlying cause."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")
