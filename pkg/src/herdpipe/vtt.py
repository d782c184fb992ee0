"""Behaviour annotations stored as WebVTT cues.

Each cue payload is a single line ``Cow <id> <Action>``, e.g.::

    0:05:11.000 --> 0:05:23.000
    Cow 2 Drinking

Only the subset of WebVTT needed for that is supported: optional header,
optional cue identifiers, NOTE blocks, and cue settings (which are
ignored).  Cues may be separated by blank lines or simply follow each
other, as in hand-edited files.
"""

from __future__ import annotations

import re
import warnings
from collections import defaultdict
from dataclasses import dataclass, field

DEFAULT_LABELS = ("Drinking", "Grazing", "Other")
FALLBACK_LABEL = "Other"

_TIMECODE = re.compile(r"^(?:(\d{1,2}):)?([0-5]\d):([0-5]\d)\.(\d{3})$")
_PAYLOAD = re.compile(r"^Cow\s+(\d+)\s+(\S+)$")


class VttParseError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class UnknownLabelWarning(UserWarning):
    pass


def parse_timecode(text: str) -> int:
    """``H:MM:SS.mmm`` (hours optional) to integer milliseconds."""
    m = _TIMECODE.match(text.strip())
    if not m:
        raise ValueError(f"malformed timecode {text!r}")
    h, mm, ss, ms = m.groups()
    return ((int(h or 0) * 60 + int(mm)) * 60 + int(ss)) * 1000 + int(ms)


def format_timecode(ms: int) -> str:
    if ms < 0:
        raise ValueError(f"negative timecode {ms}")
    s, ms = divmod(int(ms), 1000)
    m, s = divmod(s, 60)
    h, m = divmod(m, 60)
    if h > 99:
        raise ValueError(f"timecode {h}h exceeds the two hour digits allowed")
    return f"{h}:{m:02d}:{s:02d}.{ms:03d}"


@dataclass(frozen=True)
class BehaviourCue:
    cow_id: int
    action: str
    start: int
    end: int

    def __post_init__(self):
        if self.cow_id <= 0:
            raise ValueError(f"cow id must be positive, got {self.cow_id}")
        if self.start < 0:
            raise ValueError(f"cue start must be >= 0, got {self.start}")
        if self.start >= self.end:
            raise ValueError(f"cue start {self.start} must precede end {self.end}")

    @property
    def duration(self) -> int:
        return self.end - self.start

    def contains(self, t: int) -> bool:
        return self.start <= t < self.end

    def overlaps(self, other: "BehaviourCue") -> bool:
        return self.start < other.end and other.start < self.end

    @property
    def payload(self) -> str:
        return f"Cow {self.cow_id} {self.action}"


def _resolve_label(raw: str, labels, strict: bool, lineno: int) -> str:
    if raw in labels:
        return raw
    if strict:
        raise VttParseError(lineno, f"unknown action label {raw!r}; expected one of {list(labels)}")
    for name in labels:
        if name.lower() == raw.lower():
            return name
    fallback = FALLBACK_LABEL if FALLBACK_LABEL in labels else labels[-1]
    warnings.warn(
        f"line {lineno}: unknown action label {raw!r}, using {fallback!r}",
        UnknownLabelWarning,
        stacklevel=3,
    )
    return fallback


def _parse_arrow(line: str, lineno: int) -> tuple[int, int]:
    try:
        left, right = line.split("-->", 1)
        start = parse_timecode(left)
        # anything after the end timecode is cue settings
        end = parse_timecode(right.split()[0]) if right.split() else parse_timecode(right)
    except ValueError as exc:
        raise VttParseError(lineno, f"malformed timing line {line!r} ({exc})") from None
    return start, end


def parse_vtt(text: str, labels=DEFAULT_LABELS, strict: bool = True) -> list[BehaviourCue]:
    """Parse behaviour cues in document order.

    In lenient mode (``strict=False``) an unknown action label is matched
    case-insensitively and otherwise replaced by ``Other`` with an
    :class:`UnknownLabelWarning`.
    """
    labels = tuple(labels)
    lines = text.lstrip("﻿").splitlines()
    i = 0
    if lines and lines[0].startswith("WEBVTT"):
        i = 1
        # header block runs until the first blank line
        while i < len(lines) and lines[i].strip() and "-->" not in lines[i]:
            i += 1

    cues: list[BehaviourCue] = []
    n = len(lines)
    while i < n:
        line = lines[i].strip()
        if not line:
            i += 1
            continue
        if line.startswith("NOTE") and "-->" not in line:
            while i < n and lines[i].strip():
                i += 1
            continue
        if "-->" not in line:
            # a cue identifier must be directly followed by the timing line
            if i + 1 < n and "-->" in lines[i + 1]:
                i += 1
                continue
            raise VttParseError(i + 1, f"expected a timing line, got {line!r}")

        start, end = _parse_arrow(line, i + 1)
        if i + 1 >= n or not lines[i + 1].strip() or "-->" in lines[i + 1]:
            raise VttParseError(i + 1, "cue has no payload")
        payload_no = i + 2
        payload = lines[i + 1].strip()
        i += 2
        if i < n and lines[i].strip() and "-->" not in lines[i]:
            nxt = lines[i + 1] if i + 1 < n else ""
            if "-->" not in nxt:
                raise VttParseError(i + 1, "cue payload must be a single line")

        m = _PAYLOAD.match(payload)
        if not m:
            raise VttParseError(payload_no, f"payload {payload!r} does not match 'Cow <id> <label>'")
        action = _resolve_label(m.group(2), labels, strict, payload_no)
        if start >= end:
            raise VttParseError(payload_no - 1, f"cue start {format_timecode(start)} is not before end")
        try:
            cues.append(BehaviourCue(int(m.group(1)), action, start, end))
        except ValueError as exc:
            raise VttParseError(payload_no, str(exc)) from None
    return cues


def serialize_vtt(cues) -> str:
    out = ["WEBVTT", ""]
    for cue in cues:
        out.append(f"{format_timecode(cue.start)} --> {format_timecode(cue.end)}")
        out.append(cue.payload)
        out.append("")
    return "\n".join(out).rstrip("\n") + "\n"


def active_cues(cues, t: int) -> list[BehaviourCue]:
    """Cues with ``start <= t < end``, in document order."""
    return [c for c in cues if c.start <= t < c.end]


@dataclass
class CueReport:
    """Same-cow overlaps found by :func:`validate_cues`, as index pairs into the cue list.

    ``conflicts`` hold pairs with different actions; ``merge_candidates``
    pairs with the same action.
    """

    conflicts: list[tuple[int, int]] = field(default_factory=list)
    merge_candidates: list[tuple[int, int]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.conflicts


def validate_cues(cues) -> CueReport:
    report = CueReport()
    by_cow: dict[int, list[int]] = defaultdict(list)
    for idx, cue in enumerate(cues):
        by_cow[cue.cow_id].append(idx)
    for indices in by_cow.values():
        order = sorted(indices, key=lambda k: (cues[k].start, k))
        for pos, a in enumerate(order):
            for b in order[pos + 1:]:
                if cues[b].start >= cues[a].end:
                    break
                pair = (min(a, b), max(a, b))
                if cues[a].action == cues[b].action:
                    report.merge_candidates.append(pair)
                else:
                    report.conflicts.append(pair)
    report.conflicts.sort()
    report.merge_candidates.sort()
    return report
