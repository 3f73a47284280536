"""Event vocabulary, trace file format and validated trace ingestion.

Trace files are UTF-8 text with one record per line. Fields are separated by
a TAB and quoted with the stdlib ``csv`` rules (``QUOTE_MINIMAL``): a field
that contains a tab, a double quote or a line break is wrapped in double
quotes and its inner quotes are doubled. Absent fields are empty.

The first line is the metadata record::

    #tracelearn-trace  version=1  run_id=<id>  label=<NORMAL|FAULT|UNKNOWN>  workload=<n>

Every following line is an event with exactly these fields, in order::

    ts  kind  host  pid  exe  ppid  parent_exe  peer_pid  peer_exe  peer_host  endpoint

``ts`` is written with Python's shortest round-trip float repr, so a trace
read back from disk is equal to the one written field for field.
"""

import csv
import itertools
import logging
import math
from collections.abc import Callable, Iterable, Iterator
from enum import StrEnum
from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import TraceLearnError, TraceParseError, TraceValidationError

logger = logging.getLogger(__name__)

FORMAT_MARKER = "#tracelearn-trace"
FORMAT_VERSION = 1

EVENT_FIELDS = (
    "ts",
    "kind",
    "host",
    "pid",
    "exe",
    "ppid",
    "parent_exe",
    "peer_pid",
    "peer_exe",
    "peer_host",
    "endpoint",
)
_INT_FIELDS = {"pid", "ppid", "peer_pid"}


class EventKind(StrEnum):
    SPAWN = "SPAWN"
    IPC = "IPC"
    NET = "NET"
    LISTEN = "LISTEN"
    REQUEST = "REQUEST"


class Label(StrEnum):
    NORMAL = "NORMAL"
    FAULT = "FAULT"
    UNKNOWN = "UNKNOWN"


class Event(BaseModel):
    """One OS-level occurrence observed during a run."""

    model_config = ConfigDict(frozen=True)

    ts: float = Field(ge=0, allow_inf_nan=False)
    kind: EventKind
    host: str = Field(min_length=1)
    pid: int | None = Field(default=None, gt=0)
    exe: str | None = Field(default=None, min_length=1)
    ppid: int | None = Field(default=None, gt=0)
    parent_exe: str | None = Field(default=None, min_length=1)
    peer_pid: int | None = Field(default=None, gt=0)
    peer_exe: str | None = Field(default=None, min_length=1)
    peer_host: str | None = Field(default=None, min_length=1)
    endpoint: str | None = Field(default=None, min_length=1)

    @model_validator(mode="after")
    def _check_kind_fields(self) -> "Event":
        required = {
            EventKind.SPAWN: ("pid", "exe", "ppid", "parent_exe"),
            EventKind.IPC: ("pid", "exe", "peer_pid", "peer_exe"),
            EventKind.NET: ("pid", "exe", "peer_pid", "peer_exe", "peer_host"),
            EventKind.LISTEN: ("pid", "exe", "endpoint"),
            EventKind.REQUEST: ("endpoint",),
        }[self.kind]
        missing = [name for name in required if getattr(self, name) is None]
        if missing:
            raise ValueError(f"{self.kind} requires {', '.join(missing)}")
        if self.kind is EventKind.SPAWN and self.ppid == self.pid:
            raise ValueError("SPAWN ppid != pid")
        if self.kind is EventKind.IPC and self.peer_host not in (None, self.host):
            raise ValueError("IPC host == peer_host")
        return self

    @property
    def key(self) -> tuple[str, int] | None:
        """Process key of the acting process, if the event has one."""
        return (self.host, self.pid) if self.pid is not None else None

    @property
    def peer_key(self) -> tuple[str, int] | None:
        """Process key of the other side: the parent for SPAWN, the peer for IPC/NET."""
        if self.kind is EventKind.SPAWN:
            return (self.host, self.ppid)
        if self.kind is EventKind.IPC:
            return (self.host, self.peer_pid)
        if self.kind is EventKind.NET:
            return (self.peer_host, self.peer_pid)
        return None

    def to_row(self) -> list[str]:
        """Encode the event as the fixed-order list of text fields."""
        row = []
        for name in EVENT_FIELDS:
            value = getattr(self, name)
            if value is None:
                row.append("")
            elif name == "ts":
                row.append(repr(float(value)))
            else:
                row.append(str(value))
        return row


class RunTrace(BaseModel):
    """All events recorded for one run, with its label and workload."""

    model_config = ConfigDict(frozen=True)

    run_id: str = Field(min_length=1)
    label: Label = Label.UNKNOWN
    workload: int = Field(ge=0)
    events: tuple[Event, ...] = ()

    @model_validator(mode="after")
    def _check_order(self) -> "RunTrace":
        for prev, cur in zip(self.events, self.events[1:]):
            if cur.ts < prev.ts:
                raise ValueError("non-decreasing ts")
        return self

    def with_events(self, events: Iterable[Event]) -> "RunTrace":
        """Copy of this trace carrying a subsequence of its events."""
        return self.model_copy(update={"events": tuple(events)})


def _validation_message(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        ctx_error = err.get("ctx", {}).get("error")
        if ctx_error is not None:
            parts.append(str(ctx_error))
        else:
            loc = ".".join(str(item) for item in err.get("loc", ()))
            parts.append(f"{loc}: {err['msg']}" if loc else err["msg"])
    return "; ".join(parts)


def _parse_int(name: str, text: str, line_no: int | None) -> int:
    try:
        return int(text)
    except ValueError:
        raise TraceParseError(f"field {name!r} is not an integer: {text!r}", line_no) from None


def decode_event(row: list[str], line_no: int | None = None) -> Event:
    """Decode one event row, raising parse or validation errors with the line number."""
    if len(row) != len(EVENT_FIELDS):
        raise TraceParseError(
            f"expected {len(EVENT_FIELDS)} fields, got {len(row)}", line_no
        )
    values: dict[str, object] = {}
    for name, text in zip(EVENT_FIELDS, row):
        if text == "":
            continue
        if name == "ts":
            try:
                values[name] = float(text)
            except ValueError:
                raise TraceParseError(f"ts is not a number: {text!r}", line_no) from None
        elif name == "kind":
            if text not in EventKind.__members__:
                raise TraceParseError(f"unknown event kind {text!r}", line_no)
            values[name] = EventKind(text)
        elif name in _INT_FIELDS:
            values[name] = _parse_int(name, text, line_no)
        else:
            values[name] = text
    if "ts" not in values or "kind" not in values:
        raise TraceParseError("ts and kind are mandatory", line_no)
    try:
        return Event(**values)
    except ValidationError as exc:
        raise TraceValidationError(_validation_message(exc), line_no) from None


def decode_header(row: list[str], line_no: int = 1) -> dict[str, str]:
    """Decode the metadata record into its key/value fields."""
    if not row or row[0] != FORMAT_MARKER:
        raise TraceParseError(f"missing {FORMAT_MARKER} metadata line", line_no)
    fields: dict[str, str] = {}
    for item in row[1:]:
        key, sep, value = item.partition("=")
        if not sep:
            raise TraceParseError(f"metadata field without '=': {item!r}", line_no)
        fields[key] = value
    version = fields.get("version", "")
    if version != str(FORMAT_VERSION):
        raise TraceParseError(f"unsupported trace format version {version!r}", line_no)
    for key in ("run_id", "label"):
        if not fields.get(key):
            raise TraceParseError(f"metadata field {key!r} missing", line_no)
    if fields["label"] not in Label.__members__:
        raise TraceParseError(f"unknown label {fields['label']!r}", line_no)
    return fields


def _is_utf8(text: str) -> bool:
    try:
        text.encode("utf-8")
    except UnicodeEncodeError:
        return False
    return True


# (line number, fields) or the parse error of that line
Row = tuple[int, list[str] | TraceParseError]


def _rows(lines: Iterable[str]) -> Iterator[Row]:
    """Split text lines into records.

    Trace files are opened with ``errors="surrogateescape"``, so undecodable
    bytes arrive as lone surrogates and are rejected line by line, like
    oversized fields. A stream that fails to decode outright ends with a
    :class:`TraceParseError`.
    """
    reader = csv.reader(lines, delimiter="\t", quoting=csv.QUOTE_MINIMAL)
    while True:
        try:
            row = next(reader)
        except StopIteration:
            return
        except csv.Error as exc:
            yield reader.line_num, TraceParseError(str(exc), reader.line_num)
            continue
        except UnicodeDecodeError as exc:
            raise TraceParseError(f"not UTF-8 text ({exc.reason})", reader.line_num + 1) from None
        if not row or row == [""]:
            continue
        if not all(_is_utf8(field) for field in row):
            yield reader.line_num, TraceParseError("line is not valid UTF-8", reader.line_num)
            continue
        yield reader.line_num, row


def _decode_rows(
    rows: Iterable[Row],
    strict: bool,
    on_error: Callable[[TraceLearnError], None] | None,
) -> Iterator[Event]:
    last_ts = -math.inf
    for line_no, row in rows:
        try:
            if isinstance(row, TraceParseError):
                raise row
            event = decode_event(row, line_no)
            if event.ts < last_ts:
                raise TraceValidationError("non-decreasing ts", line_no)
        except TraceLearnError as exc:
            if strict:
                raise
            logger.warning("skipping malformed record: %s", exc)
            if on_error is not None:
                on_error(exc)
            continue
        last_ts = event.ts
        yield event


def open_stream(
    lines: Iterable[str],
    *,
    strict: bool = True,
    on_error: Callable[[TraceLearnError], None] | None = None,
) -> tuple[dict[str, str] | None, Iterator[Event]]:
    """Decode the metadata line, if the text starts with one, and stream the events.

    In strict mode the first malformed record raises. Otherwise it is passed
    to ``on_error`` (if given) and skipped; events going back in time are
    treated as malformed too.
    """
    rows = _rows(lines)
    first = next(rows, None)
    if first is None:
        return None, iter(())
    line_no, row = first
    if not isinstance(row, TraceParseError) and row[0] == FORMAT_MARKER:
        header = decode_header(row, line_no)
    else:
        header = None
        rows = itertools.chain([first], rows)
    return header, _decode_rows(rows, strict, on_error)


def iter_events(
    lines: Iterable[str],
    *,
    strict: bool = True,
    on_error: Callable[[TraceLearnError], None] | None = None,
) -> Iterator[Event]:
    """Stream events from trace text; see :func:`open_stream`."""
    _, events = open_stream(lines, strict=strict, on_error=on_error)
    yield from events


def count_requests(trace: RunTrace, endpoint_filter: str | None = None) -> int:
    """Number of REQUEST events, optionally restricted to one endpoint."""
    return sum(
        1
        for event in trace.events
        if event.kind is EventKind.REQUEST
        and (endpoint_filter is None or event.endpoint == endpoint_filter)
    )


def parse_trace(path: str | Path) -> RunTrace:
    """Read and fully validate a trace file."""
    path = Path(path)
    with open(path, encoding="utf-8", errors="surrogateescape", newline="") as f:
        rows = _rows(f)
        try:
            line_no, header_row = next(rows)
        except StopIteration:
            raise TraceParseError("empty trace file", None, path) from None
        except TraceParseError as exc:
            raise TraceParseError(exc.message, exc.line_no, path) from None
        try:
            if isinstance(header_row, TraceParseError):
                raise header_row
            header = decode_header(header_row, line_no)
            events = list(_decode_rows(rows, strict=True, on_error=None))
        except TraceParseError as exc:
            raise TraceParseError(exc.message, exc.line_no, path) from None

    label = Label(header["label"])
    workload_text = header.get("workload", "")
    if workload_text:
        workload = _parse_int("workload", workload_text, 1)
    elif label is Label.UNKNOWN:
        workload = 0
    else:
        raise TraceValidationError("workload required for NORMAL/FAULT runs", 1)
    try:
        trace = RunTrace(
            run_id=header["run_id"], label=label, workload=workload, events=tuple(events)
        )
    except ValidationError as exc:
        raise TraceValidationError(_validation_message(exc)) from None
    if not workload_text:
        trace = trace.model_copy(update={"workload": count_requests(trace)})
    return trace


def write_trace(trace: RunTrace, path: str | Path) -> None:
    """Write a trace in the documented line format."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(
            f, delimiter="\t", quoting=csv.QUOTE_MINIMAL, lineterminator="\n"
        )
        writer.writerow(
            [
                FORMAT_MARKER,
                f"version={FORMAT_VERSION}",
                f"run_id={trace.run_id}",
                f"label={trace.label}",
                f"workload={trace.workload}",
            ]
        )
        writer.writerows(event.to_row() for event in trace.events)
