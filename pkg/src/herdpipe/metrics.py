"""Detection and action-classification metrics.

Detection follows the COCO protocol: per frame and category, predictions
in descending score order greedily claim the unmatched ground-truth box
of highest IoU at or above the threshold.  AP samples the interpolated
precision envelope at evenly spaced recall points; AR is the final recall.
Both are averaged over IoU thresholds, then over categories that have
ground truth.

Recall points are compared with integer arithmetic (``tp * (R - 1) >=
i * n_gt``), so recall levels that land exactly on a sampling point are
never lost to float rounding.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .tracks import BBox, image_frame_index
from .vtt import DEFAULT_LABELS

COCO_IOU_THRESHOLDS = tuple(round(0.50 + 0.05 * k, 2) for k in range(10))
RECALL_POINTS = 101
MAX_DETS = 100


class GroundTruth(NamedTuple):
    frame: int
    bbox: BBox
    category: int


class Detection(NamedTuple):
    frame: int
    bbox: BBox
    category: int
    score: float


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of ``(n, 4)`` and ``(m, 4)`` arrays of ``[x, y, w, h]`` boxes."""
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    ax2, ay2 = a[:, 0] + a[:, 2], a[:, 1] + a[:, 3]
    bx2, by2 = b[:, 0] + b[:, 2], b[:, 1] + b[:, 3]
    iw = np.minimum(ax2[:, None], bx2[None]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(ay2[:, None], by2[None]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    union = (a[:, 2] * a[:, 3])[:, None] + (b[:, 2] * b[:, 3])[None] - inter
    return np.where(inter > 0, inter / np.where(union > 0, union, 1), 0.0)


def _greedy(ious: np.ndarray, threshold: float) -> np.ndarray:
    """Rows are predictions already in claim order; returns the claimed GT column or -1."""
    n_pred, n_gt = ious.shape
    taken = np.zeros(n_gt, dtype=bool)
    out = np.full(n_pred, -1, dtype=int)
    for p in range(n_pred):
        row = np.where(taken | (ious[p] < threshold), -1.0, ious[p])
        if n_gt and row.max() >= 0:
            # argmax returns the lowest index among ties
            g = int(np.argmax(row))
            taken[g] = True
            out[p] = g
    return out


def _groups(gt, pred, max_dets):
    """Index lists per (frame, category); predictions sorted by (-score, input order)."""
    gt_idx: dict = defaultdict(list)
    for k, g in enumerate(gt):
        gt_idx[(g.frame, g.category)].append(k)
    pred_idx: dict = defaultdict(list)
    for k, p in enumerate(pred):
        pred_idx[(p.frame, p.category)].append(k)
    for key, idx in pred_idx.items():
        idx.sort(key=lambda k: (-pred[k].score, k))
        if max_dets is not None:
            del idx[max_dets:]
    return gt_idx, pred_idx


@dataclass
class MatchResult:
    matches: list[tuple[int, int, float]] = field(default_factory=list)
    """``(pred_index, gt_index, iou)`` into the caller's lists."""
    unmatched_gt: list[int] = field(default_factory=list)
    unmatched_pred: list[int] = field(default_factory=list)

    @property
    def tp(self) -> int:
        return len(self.matches)

    @property
    def fp(self) -> int:
        return len(self.unmatched_pred)

    @property
    def fn(self) -> int:
        return len(self.unmatched_gt)


def match_detections(gt, pred, iou_threshold: float = 0.5, max_dets: int | None = None) -> MatchResult:
    if not 0 < iou_threshold <= 1:
        raise ValueError(f"IoU threshold must be in (0, 1], got {iou_threshold}")
    gt_idx, pred_idx = _groups(gt, pred, max_dets)
    result = MatchResult()
    kept = set()
    for key in sorted(set(gt_idx) | set(pred_idx)):
        gi, pi = gt_idx.get(key, []), pred_idx.get(key, [])
        kept.update(pi)
        ious = iou_matrix([pred[k].bbox.as_list() for k in pi], [gt[k].bbox.as_list() for k in gi])
        claim = _greedy(ious, iou_threshold)
        hit = set()
        for row, col in enumerate(claim):
            if col >= 0:
                result.matches.append((pi[row], gi[col], float(ious[row, col])))
                hit.add(gi[col])
            else:
                result.unmatched_pred.append(pi[row])
        result.unmatched_gt.extend(k for k in gi if k not in hit)
    # predictions beyond max_dets never take part in matching
    result.unmatched_pred.extend(k for k in range(len(pred)) if k not in kept)
    result.matches.sort()
    result.unmatched_gt.sort()
    result.unmatched_pred.sort()
    return result


@dataclass
class DetectionMetrics:
    ap: float
    ar: float
    ap_per_class: dict[int, float]
    ar_per_class: dict[int, float]
    ap_per_threshold: dict[float, float]
    iou_thresholds: tuple[float, ...]

    def as_dict(self) -> dict:
        return {
            "ap": self.ap,
            "ar": self.ar,
            "ap_per_class": {str(k): v for k, v in self.ap_per_class.items()},
            "ar_per_class": {str(k): v for k, v in self.ar_per_class.items()},
            "ap_per_threshold": {f"{k:.2f}": v for k, v in self.ap_per_threshold.items()},
            "iou_thresholds": list(self.iou_thresholds),
        }


def _pr_points(tp_flags: np.ndarray, n_gt: int, recall_points: int) -> tuple[float, float]:
    """Sampled interpolated precision (AP) and final recall for one class/threshold."""
    if tp_flags.size == 0:
        return 0.0, 0.0
    tp = np.cumsum(tp_flags, dtype=np.int64)
    ranks = np.arange(1, tp.size + 1)
    precision = tp / ranks
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    steps = recall_points - 1
    need = np.arange(recall_points, dtype=np.int64) * n_gt
    first = np.searchsorted(tp * steps, need, side="left")
    sampled = np.where(first < tp.size, envelope[np.minimum(first, tp.size - 1)], 0.0)
    return float(sampled.mean()), float(tp[-1] / n_gt)


def average_precision(gt, pred, iou_thresholds=COCO_IOU_THRESHOLDS,
                      recall_points: int = RECALL_POINTS, max_dets: int = MAX_DETS) -> DetectionMetrics:
    """COCO-style AP and AR.  Pass ``iou_thresholds=(0.5,)`` for AP@0.5."""
    if not gt:
        raise ValueError("no ground truth boxes to evaluate against")
    if recall_points < 2:
        raise ValueError("need at least 2 recall points")
    thresholds = tuple(float(t) for t in iou_thresholds)
    gt_idx, pred_idx = _groups(gt, pred, max_dets)
    classes = sorted({g.category for g in gt})
    n_gt = {c: sum(1 for g in gt if g.category == c) for c in classes}

    # IoU matrices are threshold independent
    cache = {}
    for key in set(gt_idx) | set(pred_idx):
        if key[1] not in n_gt:
            continue
        gi, pi = gt_idx.get(key, []), pred_idx.get(key, [])
        cache[key] = (gi, pi, iou_matrix([pred[k].bbox.as_list() for k in pi],
                                          [gt[k].bbox.as_list() for k in gi]))

    ap = np.zeros((len(classes), len(thresholds)))
    ar = np.zeros_like(ap)
    for ci, c in enumerate(classes):
        keys = [k for k in cache if k[1] == c]
        order_keys = []
        for key in keys:
            order_keys.extend(cache[key][1])
        order_keys.sort(key=lambda k: (-pred[k].score, k))
        for ti, t in enumerate(thresholds):
            is_tp = {}
            for key in keys:
                gi, pi, ious = cache[key]
                claim = _greedy(ious, min(t, 1 - 1e-10))
                for row, col in enumerate(claim):
                    is_tp[pi[row]] = col >= 0
            flags = np.array([is_tp[k] for k in order_keys], dtype=bool)
            ap[ci, ti], ar[ci, ti] = _pr_points(flags, n_gt[c], recall_points)

    return DetectionMetrics(
        ap=float(ap.mean()),
        ar=float(ar.mean()),
        ap_per_class={c: float(ap[ci].mean()) for ci, c in enumerate(classes)},
        ar_per_class={c: float(ar[ci].mean()) for ci, c in enumerate(classes)},
        ap_per_threshold={t: float(ap[:, ti].mean()) for ti, t in enumerate(thresholds)},
        iou_thresholds=thresholds,
    )


@dataclass
class ConfusionMatrix:
    """Rows are true labels, columns predicted labels."""

    counts: np.ndarray
    labels: tuple[str, ...] = DEFAULT_LABELS

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        self.labels = tuple(self.labels)
        k = len(self.labels)
        if self.counts.shape != (k, k):
            raise ValueError(f"confusion counts must be {k}x{k}, got shape {self.counts.shape}")
        if (self.counts < 0).any():
            raise ValueError("confusion counts must be non-negative")

    @property
    def row_sums(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion(gt_labels, pred_labels, labels=DEFAULT_LABELS) -> ConfusionMatrix:
    labels = tuple(labels)
    if len(gt_labels) != len(pred_labels):
        raise ValueError(f"{len(gt_labels)} true labels but {len(pred_labels)} predictions")
    pos = {name: k for k, name in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for t, p in zip(gt_labels, pred_labels):
        for name in (t, p):
            if name not in pos:
                raise ValueError(f"label {name!r} not in {list(labels)}")
        counts[pos[t], pos[p]] += 1
    return ConfusionMatrix(counts, labels)


def per_class_accuracy(cm: ConfusionMatrix) -> np.ndarray:
    """Diagonal over row sum; NaN for labels with no true examples."""
    rows = cm.row_sums
    diag = np.diag(cm.counts).astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(rows > 0, diag / np.where(rows > 0, rows, 1), np.nan)


def overall_accuracy(cm: ConfusionMatrix) -> float:
    """Micro accuracy, trace over total."""
    if cm.total == 0:
        raise ValueError("overall accuracy of an empty confusion matrix is undefined")
    return float(np.trace(cm.counts) / cm.total)


def macro_accuracy(cm: ConfusionMatrix) -> float:
    """Unweighted mean of the defined per-class accuracies."""
    acc = per_class_accuracy(cm)
    if np.isnan(acc).all():
        raise ValueError("no label has true examples")
    return float(np.nanmean(acc))


def classification_report(cm: ConfusionMatrix) -> dict:
    acc = per_class_accuracy(cm)
    return {
        "labels": list(cm.labels),
        "counts": cm.counts.tolist(),
        "support": cm.row_sums.tolist(),
        "per_class_accuracy": {n: (None if np.isnan(a) else float(a)) for n, a in zip(cm.labels, acc)},
        "overall_accuracy": overall_accuracy(cm) if cm.total else None,
        "macro_accuracy": macro_accuracy(cm) if cm.total else None,
    }


def format_confusion(cm: ConfusionMatrix) -> str:
    """Plain-text table: counts, number of videos and accuracy per true label."""
    acc = per_class_accuracy(cm)
    width = max(10, *(len(n) + 2 for n in cm.labels))
    head = "".rjust(width) + "".join(n.rjust(width) for n in cm.labels)
    head += "No. videos".rjust(12) + "Accuracy".rjust(10)
    lines = [head]
    for i, name in enumerate(cm.labels):
        cells = "".join(str(v).rjust(width) for v in cm.counts[i])
        a = "n/a" if np.isnan(acc[i]) else f"{100 * acc[i]:.1f}%"
        lines.append(name.rjust(width) + cells + str(cm.row_sums[i]).rjust(12) + a.rjust(10))
    if cm.total:
        lines.append(f"overall (micro) accuracy: {100 * overall_accuracy(cm):.1f}%")
        lines.append(f"mean per-class (macro) accuracy: {100 * macro_accuracy(cm):.1f}%")
    return "\n".join(lines)


def detection_record(d: Detection) -> dict:
    return {"frame": d.frame, "bbox": d.bbox.as_list(), "category": d.category, "score": d.score}


def write_detections(dets, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in dets:
            fh.write(json.dumps(detection_record(d)) + "\n")


def read_detections(path) -> list[Detection]:
    """Line-delimited JSON, one ``{"frame", "bbox", "category", "score"}`` record per detection."""
    out = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        rec = json.loads(line)
        try:
            score = float(rec["score"])
            if not 0 <= score <= 1:
                raise ValueError(f"score {score} outside [0, 1]")
            out.append(Detection(int(rec["frame"]), BBox.from_xywh(rec["bbox"]),
                                 int(rec["category"]), score))
        except (KeyError, ValueError, TypeError) as exc:
            raise ValueError(f"{path}:{n}: bad detection record ({exc})") from None
    return out


def ground_truth_from_coco(doc: dict) -> list[GroundTruth]:
    frame_of = {img["id"]: image_frame_index(img) for img in doc["images"]}
    return [
        GroundTruth(frame_of[a["image_id"]], BBox.from_xywh(a["bbox"]), int(a["category_id"]))
        for a in doc["annotations"]
    ]
