"""Keyframe bounding-box tracks and linear interpolation between keyframes."""

from __future__ import annotations

import bisect
from collections import defaultdict
from dataclasses import dataclass
from functools import cached_property
from fractions import Fraction


class SpanError(ValueError):
    """Requested frame lies outside a track's keyframe span."""


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box: top-left corner ``(x, y)`` plus width and height, in pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box width and height must be positive, got w={self.w} h={self.h}")

    @classmethod
    def from_xywh(cls, seq) -> "BBox":
        x, y, w, h = (float(v) for v in seq)
        return cls(x, y, w, h)

    @property
    def center(self) -> tuple[float, float]:
        return self.x + self.w / 2, self.y + self.h / 2

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]


@dataclass(frozen=True)
class Track:
    """One cow's keyframed boxes, strictly increasing in frame index."""

    cow_id: int
    keyframes: tuple[tuple[int, BBox], ...]

    def __post_init__(self):
        kfs = tuple((int(f), b) for f, b in self.keyframes)
        if not kfs:
            raise ValueError(f"track for cow {self.cow_id} has no keyframes")
        if self.cow_id <= 0:
            raise ValueError(f"cow id must be positive, got {self.cow_id}")
        for (f0, _), (f1, _) in zip(kfs, kfs[1:]):
            if f1 <= f0:
                raise ValueError(f"keyframes must be strictly increasing, got {f0} then {f1}")
        object.__setattr__(self, "keyframes", kfs)

    @cached_property
    def frames(self) -> list[int]:
        return [f for f, _ in self.keyframes]

    @property
    def first_frame(self) -> int:
        return self.keyframes[0][0]

    @property
    def last_frame(self) -> int:
        return self.keyframes[-1][0]

    def covers(self, frame: int) -> bool:
        return self.first_frame <= frame <= self.last_frame


def _lerp(a: float, b: float, num: int, den: int) -> float:
    # exact rational evaluation, rounded once
    return float(Fraction(a) + (Fraction(b) - Fraction(a)) * Fraction(num, den))


def interpolate(track: Track, frame: int) -> BBox:
    """Box at ``frame``; each of x, y, w, h is interpolated linearly and independently.

    The result is the correctly rounded value of the exact linear
    interpolant, so keyframes come back unchanged.  No extrapolation.
    """
    if not track.covers(frame):
        raise SpanError(
            f"frame {frame} outside keyframe span [{track.first_frame}, {track.last_frame}] "
            f"of cow {track.cow_id}"
        )
    frames = track.frames
    k = bisect.bisect_left(frames, frame)
    f1, b1 = track.keyframes[k]
    if f1 == frame:
        return b1
    f0, b0 = track.keyframes[k - 1]
    num, den = frame - f0, f1 - f0
    return BBox(
        _lerp(b0.x, b1.x, num, den),
        _lerp(b0.y, b1.y, num, den),
        _lerp(b0.w, b1.w, num, den),
        _lerp(b0.h, b1.h, num, den),
    )


def densify(track: Track, frames: range | None = None) -> list[tuple[int, BBox]]:
    """One interpolated box per frame of ``frames`` (defaults to the full keyframe span)."""
    if frames is None:
        frames = range(track.first_frame, track.last_frame + 1)
    if len(frames) and (not track.covers(frames[0]) or not track.covers(frames[-1])):
        raise SpanError(
            f"frames {frames.start}..{frames.stop - 1} not within keyframe span "
            f"[{track.first_frame}, {track.last_frame}] of cow {track.cow_id}"
        )
    return [(f, interpolate(track, f)) for f in frames]


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def image_frame_index(image: dict) -> int:
    """Frame index of a COCO image record (``frame_index`` if present, else ``id``)."""
    return int(image.get("frame_index", image["id"]))


def tracks_from_coco(doc: dict) -> list[Track]:
    """Rebuild per-cow tracks from a COCO document.

    Every annotation becomes a keyframe of the track for its category, so
    dense exports turn interpolation into plain lookup.
    """
    frame_of = {img["id"]: image_frame_index(img) for img in doc.get("images", [])}
    per_cow: dict[int, dict[int, BBox]] = defaultdict(dict)
    for ann in doc.get("annotations", []):
        frame = frame_of[ann["image_id"]]
        cow = int(ann["category_id"])
        if frame in per_cow[cow]:
            raise ValueError(f"cow {cow} annotated twice on frame {frame}")
        per_cow[cow][frame] = BBox.from_xywh(ann["bbox"])
    return [
        Track(cow, tuple(sorted(boxes.items())))
        for cow, boxes in sorted(per_cow.items())
    ]
