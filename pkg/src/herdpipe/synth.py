"""Synthetic scenes with known ground truth, and exact reference metrics.

Scenes are drawn from ``numpy.random.Generator(PCG64(seed))``; the
generator name and seed travel with the serialized fixture.  Cows move
piecewise-linearly between integer keyframes inside their own vertical
lane, and each cow's behaviour schedule tiles the whole video with
alternating labels, so a zero-noise scene is recoverable exactly.

The reference metrics here use exact rational arithmetic and a direct
reading of the matching and precision-recall definitions.  They share no
code with :mod:`herdpipe.metrics` and are meant to check it.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from .clipgeom import ClipSpec, plan_clips
from .metrics import Detection, GroundTruth
from .tracks import BBox, Track, densify
from .vtt import DEFAULT_LABELS, BehaviourCue, active_cues

PRNG = "PCG64"
FIXTURE_FORMAT = "herdpipe-scene/1"


class InfeasibleScene(ValueError):
    pass


class OracleTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    n_cows: int = 3
    frame_w: int = 1920
    frame_h: int = 1080
    duration_s: float = 120.0
    frame_rate: int = 30
    keyframe_stride: int = 9
    box_min: tuple[int, int] = (160, 120)
    box_max: tuple[int, int] = (360, 300)
    step_px: int = 24
    mean_event_s: float = 12.0
    min_event_s: float = 3.0
    labels: tuple[str, ...] = DEFAULT_LABELS
    label_probs: tuple[float, ...] = (0.3, 0.3, 0.4)
    box_jitter: float = 0.0
    drop_rate: float = 0.0
    score_temperature: float = 0.0
    window_s: float = 1.0

    def __post_init__(self):
        if not 0 <= self.drop_rate <= 1:
            raise ValueError(f"drop_rate must be in [0, 1], got {self.drop_rate}")
        if min(self.frame_w, self.frame_h, self.duration_s, self.frame_rate, self.n_cows) <= 0:
            raise ValueError("frame size, duration, frame rate and cow count must be positive")
        if self.box_jitter < 0 or self.score_temperature < 0:
            raise ValueError("noise parameters must be non-negative")
        if len(self.label_probs) != len(self.labels) or any(p < 0 for p in self.label_probs):
            raise ValueError("label_probs must give one non-negative weight per label")

    @property
    def n_frames(self) -> int:
        return round(self.duration_s * self.frame_rate)

    @property
    def duration_ms(self) -> int:
        return round(self.duration_s * 1000)


def soften(label: str, labels, temperature: float) -> dict[str, float]:
    """One-hot scores for ``label``, passed through a softmax at ``temperature`` (0 keeps one-hot)."""
    if temperature == 0:
        return {name: float(name == label) for name in labels}
    logits = np.array([1.0 if name == label else 0.0 for name in labels]) / temperature
    p = np.exp(logits - logits.max())
    p /= p.sum()
    return {name: float(v) for name, v in zip(labels, p)}


@dataclass
class Scene:
    spec: SceneSpec
    tracks: list[Track]
    cues: list[BehaviourCue]
    detections: list[Detection]
    scores: dict[str, dict[str, float]] = field(default_factory=dict)

    def ground_truth(self) -> list[GroundTruth]:
        return [GroundTruth(f, box, t.cow_id) for t in self.tracks for f, box in densify(t)]

    def clips(self) -> list[ClipSpec]:
        s = self.spec
        return plan_clips(self.tracks, self.cues, s.frame_rate, window=s.window_s,
                          frame_size=(s.frame_w, s.frame_h), video_ref=f"scene{s.seed}.mp4").clips

    def oracle_scorer(self):
        """Scorer giving the (softened) label of the cue active at each window's midpoint."""
        cues, s = self.cues, self.spec
        fallback = "Other" if "Other" in s.labels else s.labels[-1]

        def score(clip: ClipSpec) -> dict[str, float]:
            mid = (clip.start_ms + clip.end_ms) // 2
            hits = [c for c in active_cues(cues, mid) if c.cow_id == clip.cow_id]
            return soften(hits[0].action if hits else fallback, s.labels, s.score_temperature)

        return score

    def to_json(self) -> str:
        doc = {
            "format": FIXTURE_FORMAT,
            "prng": PRNG,
            "seed": self.spec.seed,
            "spec": asdict(self.spec),
            "tracks": [
                {"cow_id": t.cow_id, "keyframes": [[f, b.as_list()] for f, b in t.keyframes]}
                for t in self.tracks
            ],
            "cues": [asdict(c) for c in self.cues],
            "detections": [
                {"frame": d.frame, "bbox": d.bbox.as_list(), "category": d.category, "score": d.score}
                for d in self.detections
            ],
            "scores": self.scores,
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "Scene":
        doc = json.loads(text)
        if doc.get("format") != FIXTURE_FORMAT:
            raise ValueError(f"not a scene fixture (format {doc.get('format')!r})")
        raw = doc["spec"]
        for key in ("box_min", "box_max", "labels", "label_probs"):
            raw[key] = tuple(raw[key])
        spec = SceneSpec(**raw)
        tracks = [
            Track(t["cow_id"], tuple((f, BBox.from_xywh(b)) for f, b in t["keyframes"]))
            for t in doc["tracks"]
        ]
        cues = [BehaviourCue(**c) for c in doc["cues"]]
        dets = [Detection(d["frame"], BBox.from_xywh(d["bbox"]), d["category"], d["score"])
                for d in doc["detections"]]
        return cls(spec, tracks, cues, dets, doc["scores"])


def _schedule(rng, spec: SceneSpec, cow_id: int) -> list[BehaviourCue]:
    total = spec.duration_ms
    min_ms = round(spec.min_event_s * 1000)
    probs = np.asarray(spec.label_probs, dtype=float)
    cues, t, prev = [], 0, None
    while t < total:
        length = max(min_ms, 1000 * round(rng.exponential(spec.mean_event_s)))
        if total - (t + length) < min_ms:
            length = total - t
        p = probs.copy()
        if prev is not None:
            p[spec.labels.index(prev)] = 0
        if p.sum() == 0:
            p = np.ones_like(p)
            if prev is not None:
                p[spec.labels.index(prev)] = 0
        label = spec.labels[int(rng.choice(len(p), p=p / p.sum()))]
        cues.append(BehaviourCue(cow_id, label, t, t + length))
        prev, t = label, t + length
    return cues


def generate(spec: SceneSpec) -> Scene:
    lane_w = spec.frame_w // spec.n_cows
    (min_w, min_h), (max_w, max_h) = spec.box_min, spec.box_max
    if min_w > lane_w or min_h > spec.frame_h:
        raise InfeasibleScene(
            f"{spec.n_cows} cows with boxes at least {min_w}x{min_h} px do not fit "
            f"a {spec.frame_w}x{spec.frame_h} frame"
        )
    max_w, max_h = min(max_w, lane_w), min(max_h, spec.frame_h)
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    last = spec.n_frames - 1
    key_frames = list(range(0, last, spec.keyframe_stride)) + [last]

    tracks = []
    for cow in range(1, spec.n_cows + 1):
        lane_x = (cow - 1) * lane_w
        w = int(rng.integers(min_w, max_w + 1))
        h = int(rng.integers(min_h, max_h + 1))
        x = int(rng.integers(lane_x, lane_x + lane_w - w + 1))
        y = int(rng.integers(0, spec.frame_h - h + 1))
        kfs = []
        for f in key_frames:
            kfs.append((f, BBox(float(x), float(y), float(w), float(h))))
            dw, dh = (int(v) for v in rng.integers(-4, 5, size=2))
            w = min(max(w + dw, min_w), max_w)
            h = min(max(h + dh, min_h), max_h)
            dx, dy = (int(v) for v in rng.integers(-spec.step_px, spec.step_px + 1, size=2))
            x = min(max(x + dx, lane_x), lane_x + lane_w - w)
            y = min(max(y + dy, 0), spec.frame_h - h)
        tracks.append(Track(cow, tuple(kfs)))

    cues = []
    for cow in range(1, spec.n_cows + 1):
        cues.extend(_schedule(rng, spec, cow))
    cues.sort(key=lambda c: (c.start, c.cow_id))

    detections = []
    noisy = spec.box_jitter > 0 or spec.drop_rate > 0
    for track in tracks:
        dense = densify(track)
        keep = rng.random(len(dense)) >= spec.drop_rate
        jitter = (rng.normal(0.0, spec.box_jitter, size=(len(dense), 4))
                  if spec.box_jitter > 0 else np.zeros((len(dense), 4)))
        scores = rng.uniform(0.5, 1.0, size=len(dense)) if noisy else np.ones(len(dense))
        for k, (f, box) in enumerate(dense):
            if not keep[k]:
                continue
            if spec.box_jitter > 0:
                jx, jy, jw, jh = jitter[k]
                box = BBox(box.x + jx, box.y + jy, max(1.0, box.w + jw), max(1.0, box.h + jh))
            detections.append(Detection(f, box, track.cow_id, float(scores[k])))
    detections.sort(key=lambda d: (d.frame, d.category))

    scene = Scene(spec, tracks, cues, detections)
    scene.scores = {c.clip_id: soften(c.label, spec.labels, spec.score_temperature)
                    for c in scene.clips()}
    return scene


# --- exact reference metrics -------------------------------------------------

def _exact_iou(a: BBox, b: BBox) -> Fraction:
    ax0, ay0, aw, ah = (Fraction(v) for v in a.as_list())
    bx0, by0, bw, bh = (Fraction(v) for v in b.as_list())
    iw = min(ax0 + aw, bx0 + bw) - max(ax0, bx0)
    ih = min(ay0 + ah, by0 + bh) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return Fraction(0)
    inter = iw * ih
    return inter / (aw * ah + bw * bh - inter)


def oracle_detection_metrics(gt, pred, iou_thresholds=(0.5,), recall_points: int = 101,
                             max_dets: int = 100, limits=(5, 8)) -> dict:
    """Exact AP/AR for small instances (at most ``limits`` GT/predictions per frame and class)."""
    gt_cells = defaultdict(list)
    for k, g in enumerate(gt):
        gt_cells[(g.frame, g.category)].append(k)
    pred_cells = defaultdict(list)
    for k, p in enumerate(pred):
        pred_cells[(p.frame, p.category)].append(k)
    for cell in set(gt_cells) | set(pred_cells):
        if len(gt_cells[cell]) > limits[0] or len(pred_cells[cell]) > limits[1]:
            raise OracleTooLarge(f"cell {cell} exceeds {limits[0]} GT / {limits[1]} predictions")
    classes = sorted({g.category for g in gt})
    if not classes:
        raise ValueError("no ground truth")

    iou_cache: dict = {}
    ap_sum = Fraction(0)
    ar_sum = Fraction(0)
    per_class = {}
    steps = recall_points - 1
    for c in classes:
        n_pos = sum(1 for g in gt if g.category == c)
        ap_c = Fraction(0)
        ar_c = Fraction(0)
        for t in iou_thresholds:
            thr = Fraction(str(t))
            tp_of = {}
            for cell, pks in pred_cells.items():
                if cell[1] != c:
                    continue
                ranked = sorted(pks, key=lambda k: (-Fraction(pred[k].score), k))[:max_dets]
                claimed = set()
                for k in ranked:
                    best = None
                    for g in gt_cells.get(cell, []):
                        if g in claimed:
                            continue
                        if (k, g) not in iou_cache:
                            iou_cache[k, g] = _exact_iou(pred[k].bbox, gt[g].bbox)
                        v = iou_cache[k, g]
                        if v >= thr and (best is None or v > best[0]):
                            best = (v, g)
                    tp_of[k] = best is not None
                    if best is not None:
                        claimed.add(best[1])
            ranked_all = sorted(tp_of, key=lambda k: (-Fraction(pred[k].score), k))
            # (recall, precision) after each ranked prediction
            curve, tp = [], 0
            for n, k in enumerate(ranked_all, 1):
                tp += tp_of[k]
                curve.append((Fraction(tp, n_pos), Fraction(tp, n)))
            total = Fraction(0)
            for i in range(recall_points):
                level = Fraction(i, steps)
                reachable = [p for r, p in curve if r >= level]
                total += max(reachable) if reachable else 0
            ap_c += total / recall_points
            ar_c += Fraction(tp, n_pos)
        ap_c /= len(iou_thresholds)
        ar_c /= len(iou_thresholds)
        per_class[c] = (ap_c, ar_c)
        ap_sum += ap_c
        ar_sum += ar_c
    return {
        "ap": float(ap_sum / len(classes)),
        "ar": float(ar_sum / len(classes)),
        "ap_per_class": {c: float(v[0]) for c, v in per_class.items()},
        "ar_per_class": {c: float(v[1]) for c, v in per_class.items()},
        "exact": (ap_sum / len(classes), ar_sum / len(classes)),
    }


def oracle_accuracy(gt_labels, pred_labels) -> dict:
    """Exact per-label and overall accuracy by counting."""
    if len(gt_labels) != len(pred_labels):
        raise ValueError("label lists differ in length")
    right, seen = defaultdict(int), defaultdict(int)
    for t, p in zip(gt_labels, pred_labels):
        seen[t] += 1
        right[t] += t == p
    per = {lab: Fraction(right[lab], seen[lab]) for lab in seen}
    overall = Fraction(sum(right.values()), len(gt_labels)) if gt_labels else None
    return {"per_class": per, "overall": overall}


def oracle_metrics(scene: Scene, predictions, iou_thresholds=(0.5,), **kwargs) -> dict:
    """Exact AP/AR of ``predictions`` against the scene's dense ground-truth boxes."""
    return oracle_detection_metrics(scene.ground_truth(), predictions, iou_thresholds, **kwargs)


def random_instance(rng, max_gt: int = 5, max_pred: int = 8, frames: int = 2, classes: int = 2,
                    size: int = 24):
    """Small random detection problem with integer boxes, for cross-checking metrics."""
    gt, pred = [], []
    n_gt = int(rng.integers(1, max_gt + 1))
    n_pred = int(rng.integers(0, max_pred + 1))

    def box():
        x, y = (int(v) for v in rng.integers(0, size, size=2))
        w, h = (int(v) for v in rng.integers(1, size // 2 + 1, size=2))
        return BBox(float(x), float(y), float(w), float(h))

    for _ in range(n_gt):
        gt.append(GroundTruth(int(rng.integers(frames)), box(), int(rng.integers(1, classes + 1))))
    for _ in range(n_pred):
        if gt and rng.random() < 0.6:
            g = gt[int(rng.integers(len(gt)))]
            b = g.bbox
            dx, dy = (int(v) for v in rng.integers(-3, 4, size=2))
            dw, dh = (int(v) for v in rng.integers(-2, 3, size=2))
            bb = BBox(b.x + dx, b.y + dy, max(1.0, b.w + dw), max(1.0, b.h + dh))
            frame, cat = g.frame, g.category
            if rng.random() < 0.15:
                cat = int(rng.integers(1, classes + 1))
        else:
            bb, frame, cat = box(), int(rng.integers(frames)), int(rng.integers(1, classes + 1))
        # coarse scores make ties common
        score = math.floor(float(rng.random()) * 10) / 10
        pred.append(Detection(frame, bb, cat, score))
    return gt, pred
