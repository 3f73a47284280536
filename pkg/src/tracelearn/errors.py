"""Exception hierarchy shared by all tracelearn modules."""

from pathlib import Path


class TraceLearnError(Exception):
    """Base class for every data or validation failure raised by tracelearn."""


class TraceParseError(TraceLearnError):
    """A trace record could not be decoded."""

    def __init__(self, message: str, line_no: int | None = None, path: str | Path | None = None):
        self.message = message
        self.line_no = line_no
        self.path = str(path) if path is not None else None
        where = ""
        if self.path:
            where += f"{self.path}:"
        if line_no is not None:
            where += f"{line_no}:"
        super().__init__(f"{where} {message}".strip() if where else message)


class TraceValidationError(TraceLearnError):
    """A decoded record or trace breaks one of the trace invariants."""

    def __init__(self, invariant: str, line_no: int | None = None, detail: str = ""):
        self.invariant = invariant
        self.line_no = line_no
        message = f"invariant violated: {invariant}"
        if line_no is not None:
            message = f"line {line_no}: {message}"
        if detail:
            message = f"{message} ({detail})"
        super().__init__(message)


class GraphConsistencyError(TraceLearnError):
    """The same (host, pid) was observed under two executable names."""


class UnknownNodeError(TraceLearnError, KeyError):
    """A node key was requested that the graph does not contain."""

    def __str__(self) -> str:
        return Exception.__str__(self)


class EmptyCorpusError(TraceLearnError):
    """A registry or model was requested from an empty corpus."""


class DegenerateWorkloadError(TraceLearnError):
    """Fewer than two distinct workload values: the regression is undefined."""


class ModelFormatError(TraceLearnError):
    """A model or plan file is malformed or carries an unsupported version."""


class EmptySelectionError(TraceLearnError):
    """A monitoring plan was requested for a model with no selected feature."""


class ScenarioError(TraceLearnError):
    """A scenario or fault description cannot be generated."""


class DatasetError(TraceLearnError):
    """A dataset directory is unreadable or unsuitable for the request."""
