"""Two-stage inference: identity detections, then behaviour scoring of 1-second crops.

The detector's category is the cow identity.  Detections are chained into
per-cow tracklets, each tracklet is cut into overlapping windows, every
window is sent to a scorer, and the per-window winners are merged into
behaviour events.

A scorer is any callable taking a :class:`~herdpipe.clipgeom.ClipSpec` and
returning ``{label: score}``.  :class:`CommandScorer` and
:class:`ScoreFileScorer` cover the external-process and precomputed
cases.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .clipgeom import ClipSpec, make_clip, seconds_to_frames, tile_windows
from .extract import ExternalCommandError, render_command, run_command
from .timesync import ClockMap
from .tracks import SpanError, Track
from .vtt import BehaviourCue, serialize_vtt


class ScorerError(RuntimeError):
    pass


@dataclass(frozen=True)
class ActionScore:
    clip_id: str
    scores: dict
    normalized: bool = False

    def __post_init__(self):
        if not self.scores:
            raise ValueError(f"no scores for clip {self.clip_id}")
        if not all(math.isfinite(v) for v in self.scores.values()):
            raise ValueError(f"non-finite score for clip {self.clip_id}: {self.scores}")
        if self.normalized and abs(sum(self.scores.values()) - 1) > 1e-6:
            raise ValueError(f"scores for clip {self.clip_id} do not sum to 1")

    def best(self, labels=None) -> tuple[str, float]:
        """Winning label and its confidence in [0, 1].

        Scores already in [0, 1] are used as they are; anything else goes
        through a softmax first.  Ties go to the earlier label in ``labels``.
        """
        names = list(labels) if labels else list(self.scores)
        vals = [float(self.scores.get(n, -math.inf)) for n in names]
        if not all(0 <= v <= 1 for v in vals):
            top = max(vals)
            exps = [math.exp(v - top) for v in vals]
            vals = [e / sum(exps) for e in exps]
        k = max(range(len(names)), key=lambda i: (vals[i], -i))
        return names[k], vals[k]


@dataclass(frozen=True)
class WindowResult:
    clip_id: str
    cow_id: int
    start: int
    end: int
    label: str
    confidence: float


@dataclass(frozen=True)
class BehaviourEvent:
    cow_id: int
    label: str
    start: int
    end: int
    confidence: float
    n_windows: int = 1

    def to_record(self, clock: ClockMap | None = None) -> dict:
        rec = {
            "cow_id": self.cow_id,
            "label": self.label,
            "start_ms": self.start,
            "end_ms": self.end,
            "confidence": round(self.confidence, 6),
            "n_windows": self.n_windows,
        }
        if clock is not None:
            rec["wall_start_ms"] = round(clock.offset + clock.rate * self.start)
            rec["wall_end_ms"] = round(clock.offset + clock.rate * self.end)
        return rec


def merge_events(window_results, min_duration: float = 0.0) -> list[BehaviourEvent]:
    """Turn per-window winners into non-overlapping events per cow.

    Overlapping or touching windows with the same label form one run whose
    confidence is the mean over its windows.  Runs shorter than
    ``min_duration`` seconds are dropped, neighbours that become adjacent
    with the same label are joined, and remaining overlaps between
    different labels are cut at the midpoint of the overlap.
    """
    min_ms = round(min_duration * 1000)
    by_cow = defaultdict(list)
    for w in window_results:
        by_cow[w.cow_id].append(w)

    events = []
    for cow in sorted(by_cow):
        runs = []  # [label, start, end, confidences]
        for w in sorted(by_cow[cow], key=lambda r: (r.start, r.end)):
            if runs and runs[-1][0] == w.label and w.start <= runs[-1][2]:
                runs[-1][2] = max(runs[-1][2], w.end)
                runs[-1][3].append(w.confidence)
            else:
                runs.append([w.label, w.start, w.end, [w.confidence]])
        joined = []
        dropped_since = False
        for r in runs:
            if r[2] - r[1] < min_ms:
                dropped_since = True
                continue
            # a gap left by a dropped flicker is bridged; a gap with no windows is not
            if joined and joined[-1][0] == r[0] and (r[1] <= joined[-1][2] or dropped_since):
                joined[-1][2] = max(joined[-1][2], r[2])
                joined[-1][3].extend(r[3])
            else:
                joined.append(r)
            dropped_since = False
        for a, b in zip(joined, joined[1:]):
            if b[1] < a[2]:
                cut = (b[1] + a[2]) // 2
                a[2], b[1] = cut, cut
        for label, start, end, confs in joined:
            if end > start:
                events.append(BehaviourEvent(cow, label, start, end, sum(confs) / len(confs), len(confs)))
    return events


def build_tracklets(detections, frame_rate, gap_tolerance: float = 0.5) -> list[Track]:
    """Chain same-category detections over frames; a gap longer than ``gap_tolerance`` seconds splits.

    When a category is detected more than once in a frame the highest
    score wins.
    """
    max_missing = seconds_to_frames(gap_tolerance, frame_rate)
    best: dict = {}
    for d in detections:
        key = (d.category, d.frame)
        if key not in best or d.score > best[key].score:
            best[key] = d
    per_cow = defaultdict(list)
    for (cow, frame), d in sorted(best.items()):
        per_cow[cow].append((frame, d.bbox))
    tracks = []
    for cow, items in sorted(per_cow.items()):
        run = [items[0]]
        for prev, cur in zip(items, items[1:]):
            if cur[0] - prev[0] - 1 > max_missing:
                tracks.append(Track(cow, tuple(run)))
                run = []
            run.append(cur)
        tracks.append(Track(cow, tuple(run)))
    return tracks


class CommandScorer:
    """Scores a window by running an external command.

    The request record (clip id plus crop plan, and the clip path when one
    is supplied via ``clip_paths``) is written as JSON to the command's
    stdin and to a file passed as ``{request}``.  The command must print
    one JSON record ``{"clip_id": ..., "scores": {label: score}}``.
    """

    def __init__(self, template, timeout: float | None = 60.0, retries: int = 0,
                 workdir=None, clip_paths: dict | None = None):
        self.template = template
        self.timeout = timeout
        self.retries = retries
        self.workdir = Path(workdir) if workdir else None
        self.clip_paths = clip_paths or {}

    def __call__(self, clip: ClipSpec) -> dict:
        request = {"clip_id": clip.clip_id, "plan": clip.to_record()}
        if clip.clip_id in self.clip_paths:
            request["clip_path"] = str(self.clip_paths[clip.clip_id])
        payload = json.dumps(request)
        req_path = ""
        if self.workdir is not None:
            self.workdir.mkdir(parents=True, exist_ok=True)
            req_file = self.workdir / f"{clip.clip_id}.request.json"
            req_file.write_text(payload, encoding="utf-8")
            req_path = str(req_file)
        argv = render_command(self.template, {"clip_id": clip.clip_id, "request": req_path,
                                              "clip": request.get("clip_path", "")})
        try:
            proc = run_command(argv, timeout=self.timeout, retries=self.retries, stdin=payload)
        except ExternalCommandError as exc:
            raise ScorerError(str(exc)) from None
        lines = [ln for ln in proc.stdout.splitlines() if ln.strip()]
        if len(lines) != 1:
            raise ScorerError(f"scorer printed {len(lines)} records for {clip.clip_id}, expected 1")
        try:
            rec = json.loads(lines[0])
        except json.JSONDecodeError as exc:
            raise ScorerError(f"scorer output for {clip.clip_id} is not JSON: {exc}") from None
        if rec.get("clip_id") != clip.clip_id:
            raise ScorerError(f"scorer answered for {rec.get('clip_id')!r}, expected {clip.clip_id!r}")
        return rec["scores"]


class ScoreFileScorer:
    """Looks scores up in a line-delimited JSON file of ``{"clip_id", "scores"}`` records."""

    def __init__(self, path):
        self.table = read_scores(path)

    def __call__(self, clip: ClipSpec) -> dict:
        try:
            return self.table[clip.clip_id]
        except KeyError:
            raise ScorerError(f"no precomputed scores for {clip.clip_id}") from None


def read_scores(path) -> dict[str, dict]:
    table = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if line.strip():
            rec = json.loads(line)
            if "clip_id" not in rec or "scores" not in rec:
                raise ValueError(f"{path}:{n}: expected clip_id and scores")
            table[rec["clip_id"]] = rec["scores"]
    return table


def write_scores(table: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for clip_id, scores in table.items():
            fh.write(json.dumps({"clip_id": clip_id, "scores": scores}) + "\n")


@dataclass
class PipelineResult:
    events: list[BehaviourEvent] = field(default_factory=list)
    windows: list[WindowResult] = field(default_factory=list)
    failures: list[tuple[str, str]] = field(default_factory=list)
    tracklets: list[Track] = field(default_factory=list)

    def to_vtt(self) -> str:
        return serialize_vtt(BehaviourCue(e.cow_id, e.label, e.start, e.end) for e in self.events)


def run_pipeline(
    detections,
    clock: ClockMap,
    scorer,
    window: float = 1.0,
    stride: float = 0.5,
    gap_tolerance: float = 0.5,
    min_duration: float = 0.0,
    frame_size: tuple[int, int] = (1920, 1080),
    video_ref: str = "video",
    labels=None,
    workers: int = 1,
) -> PipelineResult:
    """Detections in, behaviour events out.

    Windows whose scorer call fails, or that would need boxes outside
    their tracklet (tracklets shorter than one window), are skipped and
    listed in ``failures``.
    """
    fps = clock.frame_rate
    result = PipelineResult(tracklets=build_tracklets(list(detections), fps, gap_tolerance))
    n = seconds_to_frames(window, fps)
    step = seconds_to_frames(stride, fps)

    clips: list[ClipSpec] = []
    for track in result.tracklets:
        for f0 in tile_windows(track.first_frame, track.last_frame + 1, n, step):
            try:
                clips.append(make_clip(track, range(f0, f0 + n), "", fps, frame_size, video_ref))
            except SpanError:
                result.failures.append((f"{video_ref}_cow{track.cow_id}_{f0:07d}",
                                        "tracklet shorter than one window"))

    def score(clip):
        try:
            return ActionScore(clip.clip_id, dict(scorer(clip)))
        except (ScorerError, ValueError, KeyError) as exc:
            return exc

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        outcomes = list(pool.map(score, clips))

    for clip, out in zip(clips, outcomes):
        if isinstance(out, Exception):
            result.failures.append((clip.clip_id, str(out)))
            continue
        label, conf = out.best(labels)
        result.windows.append(WindowResult(clip.clip_id, clip.cow_id, clip.start_ms, clip.end_ms,
                                           label, conf))
    result.events = merge_events(result.windows, min_duration)
    return result


def write_events(events, path, clock: ClockMap | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in events:
            fh.write(json.dumps(e.to_record(clock)) + "\n")
