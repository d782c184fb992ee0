"""Dataset export: train/val/test splits, COCO identification data, Kinetics-style clips."""

from __future__ import annotations

import csv
import io
import random
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .clipgeom import ClipSpec
from .extract import DEFAULT_EXTRACTOR, ExternalCommandError, extract_clip
from .tracks import densify

SPLITS = ("train", "val", "test")
DEFAULT_RATIOS = (0.70, 0.05, 0.25)
MANIFEST_FIELDS = ("path", "label", "cow_id", "video_ref", "start_ms", "end_ms", "split")


class ExportError(ValueError):
    pass


def split_sizes(n: int, ratios=DEFAULT_RATIOS) -> tuple[int, ...]:
    """Largest-remainder apportionment of ``n`` items.

    Leftover items go to the largest fractional remainders; equal
    remainders are served in split order (train, val, test).
    """
    fr = [Fraction(r).limit_denominator(10**9) for r in ratios]
    if any(r <= 0 for r in fr):
        raise ValueError(f"split ratios must be positive, got {ratios}")
    if abs(sum(fr) - 1) > Fraction(1, 10**9):
        raise ValueError(f"split ratios must sum to 1, got {ratios}")
    total = sum(fr)
    quotas = [n * r / total for r in fr]
    sizes = [q.numerator // q.denominator for q in quotas]
    order = sorted(range(len(fr)), key=lambda k: (-(quotas[k] - sizes[k]), k))
    for k in order[: n - sum(sizes)]:
        sizes[k] += 1
    return tuple(sizes)


@dataclass
class SplitAssignment:
    assignment: dict
    seed: int
    ratios: tuple = DEFAULT_RATIOS
    names: tuple = SPLITS

    def sizes(self) -> dict[str, int]:
        counts = Counter(self.assignment.values())
        return {name: counts.get(name, 0) for name in self.names}

    def items(self, split: str) -> list:
        return [k for k, v in self.assignment.items() if v == split]

    def __getitem__(self, item_id) -> str:
        return self.assignment[item_id]

    def __contains__(self, item_id) -> bool:
        return item_id in self.assignment

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["item", "split"])
        for item in sorted(self.assignment, key=str):
            w.writerow([item, self.assignment[item]])
        return buf.getvalue()


def split(item_ids, ratios=DEFAULT_RATIOS, seed: int = 0, mode: str = "random",
          groups: dict | None = None, names=SPLITS) -> SplitAssignment:
    """Partition items into splits.

    ``mode="random"`` shuffles the sorted item list with ``random.Random(seed)``
    so the result does not depend on input order; ``"chronological"`` keeps
    sorted order (train first).  Passing ``groups`` (item -> group key) keeps
    every group in one split; groups are dealt in shuffled order to the
    split with the largest shortfall against its target size.
    """
    items = sorted(item_ids, key=lambda v: (str(type(v)), v))
    if not items:
        raise ValueError("cannot split an empty item list")
    if len(set(items)) != len(items):
        dupes = [k for k, c in Counter(items).items() if c > 1]
        raise ValueError(f"duplicate item ids: {dupes[:5]}")
    if mode not in ("random", "chronological"):
        raise ValueError(f"unknown split mode {mode!r}")
    sizes = split_sizes(len(items), ratios)
    rng = random.Random(seed)

    if groups is None:
        if mode == "random":
            rng.shuffle(items)
        assignment, pos = {}, 0
        for name, size in zip(names, sizes):
            for item in items[pos:pos + size]:
                assignment[item] = name
            pos += size
        return SplitAssignment(assignment, seed, tuple(ratios), tuple(names))

    members: dict = {}
    for item in items:
        members.setdefault(groups[item], []).append(item)
    keys = sorted(members, key=str)
    if mode == "random":
        rng.shuffle(keys)
    filled = [0] * len(sizes)
    assignment = {}
    for key in keys:
        k = max(range(len(sizes)), key=lambda s: (sizes[s] - filled[s], -s))
        filled[k] += len(members[key])
        for item in members[key]:
            assignment[item] = names[k]
    return SplitAssignment(assignment, seed, tuple(ratios), tuple(names))


@dataclass(frozen=True)
class FrameInfo:
    file_name: str
    width: int
    height: int


def _clamp_box(box, width, height):
    x0, y0 = max(0.0, box.x), max(0.0, box.y)
    x1, y1 = min(float(width), box.x2), min(float(height), box.y2)
    if x1 <= x0 or y1 <= y0:
        return None
    if (x0, y0, x1, y1) == (box.x, box.y, box.x2, box.y2):
        return box.as_list()
    return [x0, y0, x1 - x0, y1 - y0]


def export_coco(tracks, frame_metadata, cow_ids=None) -> dict:
    """COCO detection document with one annotation per (frame, cow), keyframes plus interpolation.

    Categories are cow identities (``id = cow_id``, name ``cow_<id>``);
    pass ``cow_ids`` to declare categories for cows without a track.  Boxes
    are clamped to the image; boxes entirely outside are skipped.
    """
    dense = {t.cow_id: densify(t) for t in tracks}
    frames = sorted({f for boxes in dense.values() for f, _ in boxes})
    missing = [f for f in frames if f not in frame_metadata]
    if missing:
        raise ExportError(f"no frame metadata for frames {missing[:10]}")

    image_id = {f: k + 1 for k, f in enumerate(frames)}
    images = [
        {
            "id": image_id[f],
            "file_name": frame_metadata[f].file_name,
            "width": frame_metadata[f].width,
            "height": frame_metadata[f].height,
            "frame_index": f,
        }
        for f in frames
    ]
    annotations = []
    for cow in sorted(dense):
        for f, box in dense[cow]:
            info = frame_metadata[f]
            bbox = _clamp_box(box, info.width, info.height)
            if bbox is None:
                continue
            annotations.append({
                "id": len(annotations) + 1,
                "image_id": image_id[f],
                "category_id": cow,
                "bbox": bbox,
                "area": bbox[2] * bbox[3],
                "iscrowd": 0,
            })
    cats = sorted(set(dense) | set(cow_ids or ()))
    doc = {
        "images": images,
        "annotations": annotations,
        "categories": [{"id": c, "name": f"cow_{c}", "supercategory": "cow"} for c in cats],
    }
    problems = validate_coco(doc)
    if problems:
        raise ExportError("; ".join(problems))
    return doc


def validate_coco(doc: dict) -> list[str]:
    problems = []
    for key in ("images", "annotations", "categories"):
        ids = [rec["id"] for rec in doc.get(key, [])]
        if len(ids) != len(set(ids)):
            problems.append(f"duplicate {key} ids")
    images = {img["id"]: img for img in doc.get("images", [])}
    cats = {c["id"] for c in doc.get("categories", [])}
    for ann in doc.get("annotations", []):
        img = images.get(ann["image_id"])
        if img is None:
            problems.append(f"annotation {ann['id']} references missing image {ann['image_id']}")
            continue
        if ann["category_id"] not in cats:
            problems.append(f"annotation {ann['id']} references missing category {ann['category_id']}")
        x, y, w, h = ann["bbox"]
        slack = 1e-6
        if (w <= 0 or h <= 0 or x < -slack or y < -slack
                or x + w > img["width"] + slack or y + h > img["height"] + slack):
            problems.append(f"annotation {ann['id']} bbox {ann['bbox']} outside image {img['id']}")
    return problems


@dataclass
class KineticsExport:
    rows: list[dict] = field(default_factory=list)
    failures: list[tuple[str, str]] = field(default_factory=list)

    def class_histogram(self) -> dict[str, int]:
        return dict(Counter(r["label"] for r in self.rows))


def clip_relpath(clip: ClipSpec, split_name: str, ext: str = "mp4") -> str:
    return f"{split_name}/{clip.label}/{clip.clip_id}.{ext}"


def write_manifest(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=MANIFEST_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def read_manifest(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def export_kinetics(clips, assignment, root, template=DEFAULT_EXTRACTOR, frame_rate=30,
                    video_root=None, ext: str = "mp4", workers: int = 1,
                    timeout: float | None = None, retries: int = 0,
                    extract: bool = True) -> KineticsExport:
    """Write clips under ``<root>/<split>/<label>/<clip_id>.<ext>`` plus ``manifest.csv``.

    ``assignment`` maps clip id to split name (a :class:`SplitAssignment`
    works).  Extraction failures are reported and left out of the
    manifest; the rest of the export carries on.  With ``extract=False``
    only the layout, plan and manifest are written.
    """
    root = Path(root)
    seen: dict[str, ClipSpec] = {}
    for clip in clips:
        if clip.clip_id in seen:
            other = seen[clip.clip_id]
            raise ExportError(
                f"clip id {clip.clip_id!r} used twice: {other.video_ref} frames "
                f"{other.first_frame}-{other.last_frame} and {clip.video_ref} frames "
                f"{clip.first_frame}-{clip.last_frame}"
            )
        seen[clip.clip_id] = clip
    unassigned = [c.clip_id for c in clips if c.clip_id not in assignment]
    if unassigned:
        raise ExportError(f"clips without a split: {unassigned[:5]}")

    def job(clip):
        rel = clip_relpath(clip, assignment[clip.clip_id], ext)
        out = root / rel
        if extract:
            extract_clip(clip, out, template, frame_rate, video_root, timeout, retries)
        else:
            out.parent.mkdir(parents=True, exist_ok=True)
        return rel

    result = KineticsExport()
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        futures = [pool.submit(job, clip) for clip in clips]
        for clip, fut in zip(clips, futures):
            try:
                rel = fut.result()
            except ExternalCommandError as exc:
                result.failures.append((clip.clip_id, str(exc)))
                continue
            result.rows.append({
                "path": rel,
                "label": clip.label,
                "cow_id": clip.cow_id,
                "video_ref": clip.video_ref,
                "start_ms": clip.start_ms,
                "end_ms": clip.end_ms,
                "split": assignment[clip.clip_id],
            })
    root.mkdir(parents=True, exist_ok=True)
    write_manifest(result.rows, root / "manifest.csv")
    return result
