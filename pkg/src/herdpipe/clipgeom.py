"""Temporal windows and square crops for action-clip extraction.

Times are integer milliseconds, frames are integer indices, and a frame
``f`` starts at ``f * 1000 / frame_rate`` ms.  Pixel extraction itself is
left to an external tool; this module only fixes the geometry.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .timesync import as_frame_rate
from .tracks import BBox, SpanError, Track, interpolate

OUT_SIZE = 256
PAD = None
"""Returned by :func:`crop_pixel_map` for output pixels that fall outside the source frame."""


class ClipPlanError(ValueError):
    pass


@dataclass(frozen=True)
class TimeInterval:
    start: int
    end: int

    def __post_init__(self):
        if self.start >= self.end:
            raise ValueError(f"interval start {self.start} must precede end {self.end}")

    @property
    def duration(self) -> int:
        return self.end - self.start


def ms_to_frame(ms, frame_rate) -> int:
    """Nearest frame boundary to a time in ms; ties go to the earlier frame."""
    pos = Fraction(ms) * as_frame_rate(frame_rate) / 1000
    return math.ceil(pos - Fraction(1, 2))


def frame_to_ms(frame: int, frame_rate) -> int:
    """Start time of ``frame`` in ms, rounded half-up."""
    t = Fraction(frame) * 1000 / as_frame_rate(frame_rate)
    return math.floor(t + Fraction(1, 2))


def seconds_to_frames(seconds, frame_rate) -> int:
    n = Fraction(seconds).limit_denominator(10_000) * as_frame_rate(frame_rate)
    return math.floor(n + Fraction(1, 2))


def double_segment(seg: TimeInterval, video_len: int) -> TimeInterval:
    """Twice-as-long interval about the same centre, clamped to ``[0, video_len]``.

    Odd durations grow by ``ceil(d / 2)`` on each side, so the centre stays
    put and the result is at least double.
    """
    if seg.start < 0 or seg.end > video_len:
        raise ValueError(f"segment {seg} not within [0, {video_len}]")
    pad = -(-seg.duration // 2)
    return TimeInterval(max(0, seg.start - pad), min(video_len, seg.end + pad))


def square_box(b: BBox) -> BBox:
    """Square of side ``max(w, h)`` sharing the centre of ``b``; may leave the frame."""
    side = max(b.w, b.h)
    if b.w == b.h:
        return b
    return BBox(b.x + (b.w - side) / 2, b.y + (b.h - side) / 2, side, side)


@dataclass(frozen=True)
class CropTransform:
    src_box: BBox
    frame_w: int
    frame_h: int
    out_size: int = OUT_SIZE

    def __post_init__(self):
        if self.src_box.w != self.src_box.h:
            raise ValueError(f"crop box must be square, got {self.src_box}")
        if self.out_size <= 0:
            raise ValueError(f"out_size must be positive, got {self.out_size}")

    @property
    def scale(self) -> float:
        """Source pixels per output pixel."""
        return self.src_box.w / self.out_size

    @property
    def inside_frame(self) -> bool:
        b = self.src_box
        return b.x >= 0 and b.y >= 0 and b.x2 <= self.frame_w and b.y2 <= self.frame_h


def crop_pixel_map(t: CropTransform, out_px) -> tuple[float, float] | None:
    """Source coordinates sampled by output pixel ``(u, v)``, or ``PAD`` (zero-valued)."""
    u, v = out_px
    if not (0 <= u < t.out_size and 0 <= v < t.out_size):
        raise ValueError(f"output pixel {out_px} outside {t.out_size}x{t.out_size}")
    side = t.src_box.w
    x = t.src_box.x + u * side / t.out_size
    y = t.src_box.y + v * side / t.out_size
    if 0 <= x < t.frame_w and 0 <= y < t.frame_h:
        return x, y
    return PAD


def crop_pixel_grid(t: CropTransform) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised :func:`crop_pixel_map` over the whole output raster.

    Returns ``(xs, ys, pad)`` arrays of shape ``(out_size, out_size)``
    indexed ``[v, u]``.
    """
    side = t.src_box.w
    steps = np.arange(t.out_size) * side / t.out_size
    xs, ys = np.meshgrid(t.src_box.x + steps, t.src_box.y + steps)
    pad = (xs < 0) | (xs >= t.frame_w) | (ys < 0) | (ys >= t.frame_h)
    return xs, ys, pad


def crop_filter(t: CropTransform) -> str:
    """ffmpeg filter chain: zero-pad the frame, cut the square, scale with nearest neighbour."""
    b = t.src_box
    x, y, side = round(b.x), round(b.y), max(1, round(b.w))
    left, top = max(0, -x), max(0, -y)
    right, bottom = max(0, x + side - t.frame_w), max(0, y + side - t.frame_h)
    chain = []
    if left or top or right or bottom:
        chain.append(f"pad={t.frame_w + left + right}:{t.frame_h + top + bottom}:{left}:{top}:black")
    chain.append(f"crop={side}:{side}:{x + left}:{y + top}")
    chain.append(f"scale={t.out_size}:{t.out_size}:flags=neighbor")
    return ",".join(chain)


@dataclass(frozen=True)
class ClipSpec:
    """A resolved extraction plan for one clip: frames ``frames`` of ``video_ref`` cropped per frame."""

    clip_id: str
    video_ref: str
    cow_id: int
    label: str
    frames: range
    crops: tuple[CropTransform, ...]
    start_ms: int
    end_ms: int
    cue_index: int | None = None

    def __post_init__(self):
        if len(self.frames) == 0:
            raise ValueError(f"clip {self.clip_id} has an empty frame range")
        if len(self.crops) != len(self.frames):
            raise ValueError(
                f"clip {self.clip_id}: {len(self.crops)} crops for {len(self.frames)} frames"
            )

    @property
    def first_frame(self) -> int:
        return self.frames[0]

    @property
    def last_frame(self) -> int:
        return self.frames[-1]

    @property
    def center_crop(self) -> CropTransform:
        return self.crops[len(self.crops) // 2]

    def to_record(self, split: str | None = None) -> dict:
        rec = {
            "clip_id": self.clip_id,
            "video_ref": self.video_ref,
            "cow_id": self.cow_id,
            "label": self.label,
            "first_frame": self.first_frame,
            "last_frame": self.last_frame,
            "start_ms": self.start_ms,
            "end_ms": self.end_ms,
            "frame_w": self.crops[0].frame_w,
            "frame_h": self.crops[0].frame_h,
            "out_size": self.crops[0].out_size,
            "src_boxes": [c.src_box.as_list() for c in self.crops],
        }
        if self.cue_index is not None:
            rec["cue_index"] = self.cue_index
        if split is not None:
            rec["split"] = split
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "ClipSpec":
        crops = tuple(
            CropTransform(BBox.from_xywh(b), rec["frame_w"], rec["frame_h"], rec["out_size"])
            for b in rec["src_boxes"]
        )
        return cls(
            clip_id=rec["clip_id"],
            video_ref=rec["video_ref"],
            cow_id=int(rec["cow_id"]),
            label=rec["label"],
            frames=range(rec["first_frame"], rec["last_frame"] + 1),
            crops=crops,
            start_ms=rec["start_ms"],
            end_ms=rec["end_ms"],
            cue_index=rec.get("cue_index"),
        )


def write_plan(clips, path, splits: dict | None = None) -> None:
    """One JSON record per line; ``splits`` maps clip id to split name."""
    splits = splits or {}
    with open(path, "w", encoding="utf-8") as fh:
        for clip in clips:
            fh.write(json.dumps(clip.to_record(splits.get(clip.clip_id))) + "\n")


def read_plan(path) -> list[ClipSpec]:
    text = Path(path).read_text(encoding="utf-8")
    return [ClipSpec.from_record(json.loads(line)) for line in text.splitlines() if line.strip()]


def tile_windows(first: int, stop: int, n: int, step: int) -> list[int]:
    """Start frames of ``n``-frame windows covering ``[first, stop)``.

    Windows advance by ``step``; when the span is not an exact tiling a
    final window is anchored to ``stop``.  Spans shorter than one window get
    a single end-anchored window (clamped at frame 0).
    """
    if n <= 0 or step <= 0:
        raise ValueError(f"window and stride must be at least one frame (got {n}, {step})")
    if stop <= first:
        return []
    if stop - first <= n:
        return [max(0, stop - n)]
    starts = list(range(first, stop - n + 1, step))
    if starts[-1] + n < stop:
        starts.append(stop - n)
    return starts


def make_clip(
    track: Track,
    frames: range,
    label: str,
    frame_rate,
    frame_size: tuple[int, int],
    video_ref: str,
    out_size: int = OUT_SIZE,
    cue_index: int | None = None,
) -> ClipSpec:
    """Clip over ``frames`` with a square crop following the cow's interpolated box."""
    fw, fh = frame_size
    crops = tuple(CropTransform(square_box(interpolate(track, f)), fw, fh, out_size) for f in frames)
    stem = Path(str(video_ref)).stem or "video"
    return ClipSpec(
        clip_id=f"{stem}_cow{track.cow_id}_{frames[0]:07d}" + (f"_{label.lower()}" if label else ""),
        video_ref=str(video_ref),
        cow_id=track.cow_id,
        label=label,
        frames=frames,
        crops=crops,
        start_ms=frame_to_ms(frames[0], frame_rate),
        end_ms=frame_to_ms(frames[-1] + 1, frame_rate),
        cue_index=cue_index,
    )


@dataclass
class ClipPlan:
    clips: list[ClipSpec] = field(default_factory=list)
    dropped: list[tuple[int, int, str]] = field(default_factory=list)
    """``(cue_index, first_frame, reason)`` for windows that could not be planned."""


def plan_clips(
    tracks,
    cues,
    frame_rate,
    window: float = 1.0,
    stride: float | None = None,
    frame_size: tuple[int, int] = (1920, 1080),
    video_ref: str = "video",
    out_size: int = OUT_SIZE,
) -> ClipPlan:
    """Tile every cue into fixed-length windows with per-frame square crops.

    ``stride`` defaults to ``window`` (non-overlapping).  Windows that need
    a box outside the cow's keyframe span are dropped and reported.
    """
    by_cow = {t.cow_id: t for t in tracks}
    missing = [(i, c) for i, c in enumerate(cues) if c.cow_id not in by_cow]
    if missing:
        listing = "; ".join(f"cue {i}: {c.payload} [{c.start}, {c.end}) ms" for i, c in missing)
        raise ClipPlanError(f"cues reference cows without a track: {listing}")

    n = seconds_to_frames(window, frame_rate)
    step = seconds_to_frames(window if stride is None else stride, frame_rate)
    plan = ClipPlan()
    for idx, cue in enumerate(cues):
        track = by_cow[cue.cow_id]
        first = ms_to_frame(cue.start, frame_rate)
        stop = ms_to_frame(cue.end, frame_rate)
        for f0 in tile_windows(first, stop, n, step):
            frames = range(f0, f0 + n)
            try:
                clip = make_clip(track, frames, cue.action, frame_rate, frame_size,
                                 video_ref, out_size, cue_index=idx)
            except SpanError as exc:
                plan.dropped.append((idx, f0, str(exc)))
                continue
            plan.clips.append(clip)
    return plan
