"""Event and event-stream types, validation, time slicing, and file I/O.

An event is one polarity change at one pixel: a microsecond timestamp
relative to the stream epoch, pixel coordinates, and a sign (+1 for a
brightness increase, -1 for a decrease).  Streams store events in
columnar numpy arrays sorted by timestamp (ties keep insertion order).

Binary file format (little-endian, extension ``.evy`` by convention):

    magic   4 bytes  b"EVY1"
    width   u16
    height  u16
    count   u64
    then per event: t_us u64, x u16, y u16, polarity i8, 1 pad byte

A CSV alternative with columns ``t_us,x,y,p`` is accepted for ingestion
only (see :func:`read_events_csv`).
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable, NamedTuple, Sequence

import numpy as np

from .errors import BadMagicError, InvalidPayloadError, TruncatedError

MAGIC = b"EVY1"
_HEADER = struct.Struct("<4sHHQ")
_EVENT_DTYPE = np.dtype(
    [("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "<i1"), ("pad", "<i1")]
)
assert _EVENT_DTYPE.itemsize == 14


class Event(NamedTuple):
    """One polarity change: timestamp (us), pixel column, pixel row, sign."""

    t_us: int
    x: int
    y: int
    polarity: int


class Violation(NamedTuple):
    """One invariant violation found by :func:`validate_stream`."""

    index: int
    reason: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


class EventStream:
    """A time-ordered event stream plus its sensor geometry.

    Events are held as columnar arrays (``t``: uint64 microseconds,
    ``x``/``y``: uint16, ``p``: int8 in {+1, -1}).  Streams are immutable
    after construction; the constructor copies its inputs.
    """

    __slots__ = ("width", "height", "t", "x", "y", "p")

    def __init__(self, width, height, t=(), x=(), y=(), p=()):
        self.width = int(width)
        self.height = int(height)
        self.t = np.ascontiguousarray(t, dtype=np.uint64)
        self.x = np.ascontiguousarray(x, dtype=np.uint16)
        self.y = np.ascontiguousarray(y, dtype=np.uint16)
        self.p = np.ascontiguousarray(p, dtype=np.int8)
        if not (len(self.t) == len(self.x) == len(self.y) == len(self.p)):
            raise ValueError("event columns must have equal length")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("geometry must be positive")
        for a in (self.t, self.x, self.y, self.p):
            a.setflags(write=False)

    @classmethod
    def from_events(cls, width: int, height: int, events: Iterable[Event]) -> "EventStream":
        ev = list(events)
        return cls(
            width,
            height,
            t=[e.t_us for e in ev],
            x=[e.x for e in ev],
            y=[e.y for e in ev],
            p=[e.polarity for e in ev],
        )

    @property
    def geometry(self) -> tuple[int, int]:
        return (self.width, self.height)

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i: int) -> Event:
        return Event(int(self.t[i]), int(self.x[i]), int(self.y[i]), int(self.p[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.geometry == other.geometry
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.p, other.p)
        )

    def __repr__(self) -> str:
        return f"EventStream({self.width}x{self.height}, {len(self)} events)"


def validate_stream(stream: EventStream) -> ValidationReport:
    """Check monotonicity and per-event invariants; violations are data, not errors.

    The report lists every event index whose timestamp decreases relative
    to its predecessor, whose coordinates fall outside the geometry
    (half-open: 0 <= x < width, 0 <= y < height), or whose polarity is
    not exactly +1 or -1.  An empty list means the stream is valid.
    """
    report = ValidationReport()
    t, x, y, p = stream.t, stream.x, stream.y, stream.p
    if len(t) > 1:
        for i in np.nonzero(t[1:] < t[:-1])[0]:
            report.violations.append(Violation(int(i) + 1, "non-monotonic timestamp"))
    for i in np.nonzero(x >= stream.width)[0]:
        report.violations.append(Violation(int(i), "x out of bounds"))
    for i in np.nonzero(y >= stream.height)[0]:
        report.violations.append(Violation(int(i), "y out of bounds"))
    for i in np.nonzero((p != 1) & (p != -1))[0]:
        report.violations.append(Violation(int(i), "polarity not in {+1,-1}"))
    report.violations.sort(key=lambda v: v.index)
    return report


def slice_by_time(stream: EventStream, t0_us: int, t1_us: int) -> EventStream:
    """Return the sub-stream with t0_us <= t < t1_us (half-open), order preserved."""
    if t0_us > t1_us:
        raise ValueError(f"inverted interval [{t0_us}, {t1_us})")
    i0 = int(np.searchsorted(stream.t, max(t0_us, 0), side="left"))
    i1 = int(np.searchsorted(stream.t, max(t1_us, 0), side="left"))
    return EventStream(
        stream.width,
        stream.height,
        t=stream.t[i0:i1],
        x=stream.x[i0:i1],
        y=stream.y[i0:i1],
        p=stream.p[i0:i1],
    )


def write_events(stream: EventStream, sink) -> None:
    """Write a valid stream in the EVY1 binary format to a path or binary file."""
    report = validate_stream(stream)
    if not report.ok:
        first = report.violations[0]
        raise ValueError(
            f"refusing to write invalid stream: {len(report.violations)} violation(s), "
            f"first at index {first.index}: {first.reason}"
        )
    rec = np.zeros(len(stream), dtype=_EVENT_DTYPE)
    rec["t"] = stream.t
    rec["x"] = stream.x
    rec["y"] = stream.y
    rec["p"] = stream.p
    header = _HEADER.pack(MAGIC, stream.width, stream.height, len(stream))
    if hasattr(sink, "write"):
        sink.write(header)
        sink.write(rec.tobytes())
    else:
        with open(sink, "wb") as f:
            f.write(header)
            f.write(rec.tobytes())


def read_events(source) -> EventStream:
    """Read an EVY1 file from a path or binary file; the result is validated.

    Raises :class:`BadMagicError`, :class:`TruncatedError`, or
    :class:`InvalidPayloadError` depending on what is wrong.
    """
    if hasattr(source, "read"):
        data = source.read()
    else:
        with open(source, "rb") as f:
            data = f.read()
    if len(data) < _HEADER.size:
        if data[: min(len(data), 4)] != MAGIC[: min(len(data), 4)]:
            raise BadMagicError("not an EVY1 file")
        raise TruncatedError(f"header needs {_HEADER.size} bytes, got {len(data)}")
    magic, width, height, count = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    payload = data[_HEADER.size :]
    expected = count * _EVENT_DTYPE.itemsize
    if len(payload) < expected:
        raise TruncatedError(
            f"payload declares {count} events ({expected} bytes), got {len(payload)}"
        )
    rec = np.frombuffer(payload[:expected], dtype=_EVENT_DTYPE)
    stream = EventStream(width, height, t=rec["t"], x=rec["x"], y=rec["y"], p=rec["p"])
    report = validate_stream(stream)
    if not report.ok:
        first = report.violations[0]
        raise InvalidPayloadError(
            f"{len(report.violations)} invariant violation(s), "
            f"first at index {first.index}: {first.reason}"
        )
    return stream


def read_events_csv(source, width: int, height: int) -> EventStream:
    """Ingest a ``t_us,x,y,p`` CSV (header row optional) with explicit geometry."""
    if hasattr(source, "read"):
        text = source.read()
        if isinstance(text, bytes):
            text = text.decode("utf-8")
    else:
        with open(source, "r", newline="") as f:
            text = f.read()
    rows = []
    for row in csv.reader(io.StringIO(text)):
        if not row or not row[0].strip():
            continue
        if not row[0].strip().lstrip("-").isdigit():
            continue  # header row
        if len(row) < 4:
            raise InvalidPayloadError(f"CSV row needs 4 columns, got {row!r}")
        rows.append(tuple(int(v) for v in row[:4]))
    stream = EventStream(
        width,
        height,
        t=[r[0] for r in rows],
        x=[r[1] for r in rows],
        y=[r[2] for r in rows],
        p=[r[3] for r in rows],
    )
    report = validate_stream(stream)
    if not report.ok:
        first = report.violations[0]
        raise InvalidPayloadError(
            f"CSV content invalid, first violation at index {first.index}: {first.reason}"
        )
    return stream


def random_stream(width: int, height: int, n: int, duration_us: int, seed: int) -> EventStream:
    """Generate a seeded random valid stream (test and benchmark helper)."""
    rng = np.random.default_rng(seed)
    t = np.sort(rng.integers(0, duration_us, size=n, dtype=np.uint64), kind="stable")
    return EventStream(
        width,
        height,
        t=t,
        x=rng.integers(0, width, size=n),
        y=rng.integers(0, height, size=n),
        p=rng.choice(np.array([-1, 1], dtype=np.int8), size=n),
    )
