"""Camera clock models built from GPS telemetry.

Each camera gets an affine map from stream time (ms since the recording
started) to UTC wall-clock time (epoch ms).  Frames of two cameras are
aligned by going through wall-clock time and rounding to the nearest
destination frame.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from fractions import Fraction

DEFAULT_FRAME_RATE = Fraction(30)
DEFAULT_COLUMNS = {"stream_time": "cts", "wall_clock": "date", "latitude": "lat", "longitude": "lon"}

_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)


class GpsCsvError(ValueError):
    pass


class ClockFitError(ValueError):
    pass


class AlignmentError(ValueError):
    pass


@dataclass(frozen=True)
class GpsSample:
    stream_time: int
    wall_clock: int
    latitude: float
    longitude: float

    def __post_init__(self):
        if self.stream_time < 0:
            raise ValueError(f"stream_time must be >= 0, got {self.stream_time}")


@dataclass
class GpsReadout:
    """Samples recovered from a GPS CSV plus the rows that were rejected."""

    samples: list[GpsSample]
    malformed: list[tuple[int, str]] = field(default_factory=list)


def as_frame_rate(value) -> Fraction:
    """Coerce ``30``, ``29.97``, ``"30000/1001"`` or a Fraction to a positive Fraction."""
    if isinstance(value, float):
        rate = Fraction(value).limit_denominator(1001)
    else:
        rate = Fraction(value)
    if rate <= 0:
        raise ValueError(f"frame rate must be positive, got {value!r}")
    return rate


def parse_utc_ms(text: str) -> int:
    """ISO-8601 timestamp to integer UTC epoch milliseconds.

    A trailing ``Z`` is accepted; naive timestamps are taken to be UTC.
    """
    s = text.strip()
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    dt = datetime.fromisoformat(s)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    delta = dt - _EPOCH
    return (delta.days * 86_400 + delta.seconds) * 1000 + delta.microseconds // 1000


def parse_gps_csv(text: str, columns: dict | None = None, strict: bool = False) -> GpsReadout:
    """Read a gpmd2csv-style GPS table.

    Rows that fail to parse are skipped and listed in ``malformed`` as
    ``(line_number, reason)``; with ``strict=True`` the first one raises
    instead.  Stream times must be strictly increasing in file order.
    """
    cols = {**DEFAULT_COLUMNS, **(columns or {})}
    if not text.strip():
        raise GpsCsvError("empty GPS CSV")
    reader = csv.reader(io.StringIO(text.lstrip("﻿"), newline=""))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise GpsCsvError("empty GPS CSV") from None
    try:
        idx = {key: header.index(name) for key, name in cols.items()}
    except ValueError as exc:
        raise GpsCsvError(f"missing GPS column: {exc}; header is {header}") from None

    samples: list[GpsSample] = []
    malformed: list[tuple[int, str]] = []
    for row in reader:
        lineno = reader.line_num
        if not row or all(not cell.strip() for cell in row):
            continue
        try:
            if len(row) != len(header):
                raise ValueError(f"expected {len(header)} fields, got {len(row)}")
            stream_time = int(row[idx["stream_time"]])
            try:
                wall = parse_utc_ms(row[idx["wall_clock"]])
            except ValueError:
                raise ValueError(f"unparseable timestamp {row[idx['wall_clock']]!r}") from None
            sample = GpsSample(
                stream_time,
                wall,
                float(row[idx["latitude"]]),
                float(row[idx["longitude"]]),
            )
        except ValueError as exc:
            if strict:
                raise GpsCsvError(f"line {lineno}: {exc}") from None
            malformed.append((lineno, str(exc)))
            continue
        if samples and sample.stream_time <= samples[-1].stream_time:
            raise GpsCsvError(
                f"line {lineno}: stream time {sample.stream_time} does not increase "
                f"(previous {samples[-1].stream_time})"
            )
        samples.append(sample)

    if not samples:
        raise GpsCsvError("no valid GPS rows")
    return GpsReadout(samples, malformed)


@dataclass(frozen=True)
class ClockMap:
    """wall_clock_ms = offset + rate * stream_ms, for a camera at ``frame_rate``."""

    offset: int
    rate: float = 1.0
    frame_rate: Fraction = DEFAULT_FRAME_RATE
    residual_rms: float = field(default=0.0, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "frame_rate", as_frame_rate(self.frame_rate))
        if not self.rate > 0:
            raise ValueError(f"clock rate must be positive, got {self.rate}")

    @property
    def frame_period_ms(self) -> float:
        """Wall-clock spacing of consecutive frames."""
        return self.rate * 1000 / float(self.frame_rate)

    def stream_ms(self, frame) -> Fraction:
        return Fraction(frame) * 1000 / self.frame_rate

    def wall_exact(self, frame) -> float:
        """Unrounded wall-clock time of ``frame`` (may be fractional)."""
        return self.offset + self.rate * float(self.stream_ms(frame))


def fit_clock(samples, frame_rate=DEFAULT_FRAME_RATE, max_drift: float = 0.01) -> ClockMap:
    """Least-squares affine fit of wall clock against stream time."""
    if len(samples) < 2:
        raise ClockFitError(f"need at least 2 GPS samples, got {len(samples)}")
    xs = [s.stream_time for s in samples]
    # Work relative to the first wall clock; epoch ms are too large to square.
    base = samples[0].wall_clock
    ys = [s.wall_clock - base for s in samples]
    n = len(xs)
    x_mean = math.fsum(xs) / n
    y_mean = math.fsum(ys) / n
    sxx = math.fsum((x - x_mean) ** 2 for x in xs)
    if sxx == 0:
        raise ClockFitError("degenerate GPS samples: all stream times identical")
    sxy = math.fsum((x - x_mean) * (y - y_mean) for x, y in zip(xs, ys))
    rate = sxy / sxx
    local_offset = y_mean - rate * x_mean
    if abs(rate - 1.0) > max_drift:
        raise ClockFitError(f"fitted clock rate {rate:.6f} outside 1 +/- {max_drift}")
    offset = base + round(local_offset)
    resid = [y - (local_offset + rate * x) for x, y in zip(xs, ys)]
    rms = math.sqrt(math.fsum(r * r for r in resid) / n)
    return ClockMap(offset=offset, rate=rate, frame_rate=frame_rate, residual_rms=rms)


def frame_to_wall(clock: ClockMap, frame: int) -> int:
    """Wall-clock time of a frame, rounded half-up to the nearest millisecond."""
    if frame < 0:
        raise ValueError(f"frame must be >= 0, got {frame}")
    return math.floor(clock.wall_exact(frame) + 0.5)


def wall_to_frame(clock: ClockMap, wall_ms: float) -> int:
    """Nearest frame whose wall-clock time matches ``wall_ms``; ties go to the earlier frame."""
    pos = (wall_ms - clock.offset) / clock.rate * float(clock.frame_rate) / 1000
    return math.ceil(pos - 0.5)


def align_frame(src: ClockMap, dst: ClockMap, frame: int) -> int:
    """Frame of camera ``dst`` captured closest in wall-clock time to ``frame`` of ``src``."""
    if src == dst:
        return frame
    target = wall_to_frame(dst, src.wall_exact(frame))
    if target < 0:
        raise AlignmentError(
            f"frame {frame} of the source camera predates the destination recording"
        )
    return target


def clock_to_dict(clock: ClockMap) -> dict:
    return {
        "offset": clock.offset,
        "rate": clock.rate,
        "frame_rate": str(clock.frame_rate),
        "residual_rms": clock.residual_rms,
    }


def clock_from_dict(doc: dict) -> ClockMap:
    return ClockMap(
        offset=int(doc["offset"]),
        rate=float(doc.get("rate", 1.0)),
        frame_rate=as_frame_rate(doc.get("frame_rate", DEFAULT_FRAME_RATE)),
        residual_rms=float(doc.get("residual_rms", 0.0)),
    )
