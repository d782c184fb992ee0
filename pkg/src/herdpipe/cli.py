"""``herdpipe`` command line: one subcommand per workflow step.

Exit status is 0 on success, 1 when inputs fail validation, and 2 on I/O
or external-command failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import clipgeom, export, metrics, pipeline, synth, timesync, tracks, vtt
from .config import FIELD_TYPES, ConfigError, load_config
from .extract import ExternalCommandError, overlay_filter, render_command, run_command


class ValidationFailed(Exception):
    """Raised by a subcommand whose inputs parsed but did not validate."""


def _read_text(path) -> str:
    return Path(path).read_text(encoding="utf-8")


def _write_json(doc, path=None) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _frame_list(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        if ":" in part:
            a, b = part.split(":", 1)
            out.extend(range(int(a), int(b) + 1))
        elif part.strip():
            out.append(int(part))
    return out


# --- time sync ----------------------------------------------------------------

def cmd_sync_fit(args, cfg):
    readout = timesync.parse_gps_csv(_read_text(args.gps), cfg.gps_column_map, strict=args.strict_rows)
    clock = timesync.fit_clock(readout.samples, cfg.fps, cfg.max_drift)
    doc = timesync.clock_to_dict(clock)
    doc["samples"] = len(readout.samples)
    doc["malformed_rows"] = [{"line": n, "reason": r} for n, r in readout.malformed]
    _write_json(doc, args.out)
    if readout.malformed:
        print(f"{len(readout.malformed)} malformed GPS rows skipped", file=sys.stderr)


def cmd_sync_align(args, cfg):
    src = timesync.clock_from_dict(json.loads(_read_text(args.src)))
    dst = timesync.clock_from_dict(json.loads(_read_text(args.dst)))
    for f in _frame_list(args.frames):
        print(f"{f}\t{timesync.align_frame(src, dst, f)}")


# --- annotations ----------------------------------------------------------------

def cmd_vtt_check(args, cfg):
    cues = vtt.parse_vtt(_read_text(args.vtt), cfg.labels, strict=cfg.strict)
    report = vtt.validate_cues(cues)
    print(f"{len(cues)} cues, {len(report.conflicts)} conflicts, "
          f"{len(report.merge_candidates)} merge candidates")
    for i, j in report.conflicts:
        a, b = cues[i], cues[j]
        print(f"conflict: {a.payload} [{vtt.format_timecode(a.start)}, {vtt.format_timecode(a.end)}) "
              f"overlaps {b.payload} [{vtt.format_timecode(b.start)}, {vtt.format_timecode(b.end)})")
    for i, j in report.merge_candidates:
        print(f"merge candidate: cues {i} and {j} ({cues[i].payload})")
    if args.normalize:
        Path(args.normalize).write_text(vtt.serialize_vtt(cues), encoding="utf-8")
    if not report.ok:
        raise ValidationFailed(f"{len(report.conflicts)} same-cow conflicts")


def _load_tracks(path):
    doc = json.loads(_read_text(path))
    return doc, tracks.tracks_from_coco(doc)


def cmd_interp(args, cfg):
    _, trks = _load_tracks(args.coco)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for t in trks:
            if args.cow is not None and t.cow_id != args.cow:
                continue
            first = t.first_frame if args.first is None else args.first
            last = t.last_frame if args.last is None else args.last
            for f, box in tracks.densify(t, range(first, last + 1)):
                out.write(json.dumps({"cow_id": t.cow_id, "frame": f, "bbox": box.as_list()}) + "\n")
    finally:
        if args.out:
            out.close()


def cmd_plan_clips(args, cfg):
    _, trks = _load_tracks(args.coco)
    cues = vtt.parse_vtt(_read_text(args.vtt), cfg.labels, strict=cfg.strict)
    plan = clipgeom.plan_clips(trks, cues, cfg.fps, window=cfg.window, stride=cfg.export_stride,
                               frame_size=cfg.frame_size, video_ref=args.video_ref,
                               out_size=cfg.out_size)
    clipgeom.write_plan(plan.clips, args.out)
    print(f"{len(plan.clips)} clips planned, {len(plan.dropped)} windows dropped")
    for idx, f0, reason in plan.dropped:
        print(f"dropped: cue {idx} window at frame {f0}: {reason}", file=sys.stderr)


# --- export ---------------------------------------------------------------------

def cmd_export_coco(args, cfg):
    doc, trks = _load_tracks(args.coco)
    meta = {}
    for img in doc.get("images", []):
        meta[tracks.image_frame_index(img)] = export.FrameInfo(img["file_name"], img["width"], img["height"])
    if args.frame_pattern:
        w, h = cfg.frame_size
        for t in trks:
            for f in range(t.first_frame, t.last_frame + 1):
                meta.setdefault(f, export.FrameInfo(args.frame_pattern.format(frame=f), w, h))
    cow_ids = range(1, args.n_cows + 1) if args.n_cows else None
    out = export.export_coco(trks, meta, cow_ids)
    _write_json(out, args.out)
    print(f"{len(out['images'])} images, {len(out['annotations'])} annotations, "
          f"{len(out['categories'])} categories", file=sys.stderr)


def _read_assignment(path) -> dict:
    with open(path, newline="", encoding="utf-8") as fh:
        return {row["item"]: row["split"] for row in csv.DictReader(fh)}


def cmd_export_kinetics(args, cfg):
    clips = clipgeom.read_plan(args.plan)
    if args.splits:
        assignment = _read_assignment(args.splits)
    else:
        ids = [c.clip_id for c in clips]
        if cfg.split_mode == "per-cue":
            groups = {c.clip_id: f"{c.video_ref}#{c.cue_index}" for c in clips}
            assignment = export.split(ids, cfg.split_ratios, cfg.split_seed, groups=groups)
        else:
            assignment = export.split(ids, cfg.split_ratios, cfg.split_seed, mode=cfg.split_mode)
        assignment = assignment.assignment
    result = export.export_kinetics(
        clips, assignment, args.root, template=cfg.extractor, frame_rate=cfg.fps,
        video_root=args.video_root, ext=args.ext, workers=cfg.workers, timeout=cfg.timeout,
        retries=cfg.retries, extract=not args.no_extract,
    )
    clipgeom.write_plan(clips, Path(args.root) / "plan.jsonl", assignment)
    hist = result.class_histogram()
    print(f"{len(result.rows)} clips exported; " + ", ".join(f"{k}: {v}" for k, v in sorted(hist.items())))
    for clip_id, reason in result.failures:
        print(f"failed: {clip_id}: {reason}", file=sys.stderr)
    if result.failures:
        raise ExternalCommandError(f"{len(result.failures)} clips failed to extract")


def _items_from(path) -> list[str]:
    text = _read_text(path)
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if path.endswith(".jsonl"):
        return [json.loads(ln)["clip_id"] for ln in lines]
    if path.endswith(".csv"):
        rows = list(csv.reader(lines))
        return [row[0] for row in rows[1:]]
    return [ln.strip() for ln in lines]


def cmd_split(args, cfg):
    if args.n is not None:
        items = [str(k) for k in range(args.n)]
    else:
        items = _items_from(args.n_from)
    mode = "random" if cfg.split_mode == "per-cue" else cfg.split_mode
    seed = cfg.split_seed if args.seed is None else args.seed
    result = export.split(items, cfg.split_ratios, seed, mode=mode)
    text = result.to_csv()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sizes = result.sizes()
    print(" ".join(f"{k}={v}" for k, v in sizes.items()), file=sys.stderr if not args.out else sys.stdout)
    if not args.out:
        sys.stdout.write(text)


# --- evaluation -----------------------------------------------------------------

def cmd_eval_det(args, cfg):
    gt = metrics.ground_truth_from_coco(json.loads(_read_text(args.gt)))
    pred = metrics.read_detections(args.pred)
    thresholds = (0.5,) if args.ap50 else cfg.iou_thresholds
    res = metrics.average_precision(gt, pred, thresholds, cfg.recall_points, cfg.max_dets)
    print(f"AP: {res.ap:.4f}  AR: {res.ar:.4f}  (IoU {thresholds[0]:.2f}"
          + (f":{thresholds[-1]:.2f}" if len(thresholds) > 1 else "") + ")")
    for c in sorted(res.ap_per_class):
        print(f"  cow_{c}: AP {res.ap_per_class[c]:.4f}  AR {res.ar_per_class[c]:.4f}")
    if args.json:
        _write_json(res.as_dict(), args.json)


def _read_labels(path, labels) -> list[tuple[str | None, str]]:
    """``clip_id label`` / ``clip_id,label`` lines, bare labels, or JSONL score records."""
    out = []
    for n, line in enumerate(_read_text(path).splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("{"):
            rec = json.loads(line)
            label, _ = pipeline.ActionScore(rec["clip_id"], rec["scores"]).best(labels)
            out.append((rec["clip_id"], label))
            continue
        parts = line.replace(",", " ").split()
        if len(parts) == 1:
            out.append((None, parts[0]))
        elif len(parts) == 2:
            out.append((parts[0], parts[1]))
        else:
            raise ValueError(f"{path}:{n}: expected 'clip_id label', got {line!r}")
    return out


def cmd_eval_action(args, cfg):
    gt = _read_labels(args.gt, cfg.labels)
    pred = _read_labels(args.pred, cfg.labels)
    if any(k is None for k, _ in gt) or any(k is None for k, _ in pred):
        if len(gt) != len(pred):
            raise ValueError(f"{len(gt)} true labels but {len(pred)} predictions")
        y_true = [lab for _, lab in gt]
        y_pred = [lab for _, lab in pred]
    else:
        table = dict(pred)
        missing = [k for k, _ in gt if k not in table]
        if missing:
            raise ValueError(f"no prediction for clips {missing[:5]}")
        y_true = [lab for _, lab in gt]
        y_pred = [table[k] for k, _ in gt]
    cm = metrics.confusion(y_true, y_pred, cfg.labels)
    print(metrics.format_confusion(cm))
    if args.json:
        _write_json(metrics.classification_report(cm), args.json)


# --- pipeline / synth / overlays ------------------------------------------------

def cmd_run_pipeline(args, cfg):
    dets = metrics.read_detections(args.detections)
    if args.clock:
        clock = timesync.clock_from_dict(json.loads(_read_text(args.clock)))
    else:
        clock = timesync.ClockMap(0, 1.0, cfg.fps)
    if args.scores:
        scorer = pipeline.ScoreFileScorer(args.scores)
    elif cfg.scorer:
        scorer = pipeline.CommandScorer(cfg.scorer, timeout=cfg.timeout, retries=cfg.retries,
                                        workdir=args.workdir)
    else:
        raise ValueError("no scorer: pass --scores or set the 'scorer' command")
    res = pipeline.run_pipeline(
        dets, clock, scorer, window=cfg.window, stride=cfg.inference_stride,
        gap_tolerance=cfg.gap_tolerance, min_duration=cfg.min_duration,
        frame_size=cfg.frame_size, video_ref=args.video_ref, labels=cfg.labels,
        workers=cfg.workers,
    )
    pipeline.write_events(res.events, args.out, clock if args.clock else None)
    if args.vtt:
        Path(args.vtt).write_text(res.to_vtt(), encoding="utf-8")
    print(f"{len(res.tracklets)} tracklets, {len(res.windows)} windows scored, "
          f"{len(res.events)} events, {len(res.failures)} failures")
    for clip_id, reason in res.failures:
        print(f"skipped: {clip_id}: {reason}", file=sys.stderr)


def cmd_synth(args, cfg):
    extra = {} if len(cfg.labels) == 3 else {"label_probs": tuple(1.0 for _ in cfg.labels)}
    spec = synth.SceneSpec(
        seed=args.seed, n_cows=args.cows, duration_s=args.duration,
        frame_w=cfg.frame_size[0], frame_h=cfg.frame_size[1], frame_rate=int(cfg.fps),
        labels=cfg.labels, box_jitter=args.jitter, drop_rate=args.drop_rate,
        score_temperature=args.temperature, window_s=cfg.window, **extra,
    )
    scene = synth.generate(spec)
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "scene.json").write_text(scene.to_json(), encoding="utf-8")
    frames = {f: export.FrameInfo(f"frame_{f:06d}.jpg", spec.frame_w, spec.frame_h)
              for f in range(spec.n_frames)}
    keyframes = {"images": [], "annotations": [], "categories": []}
    ann_id = 0
    for t in scene.tracks:
        for f, box in t.keyframes:
            ann_id += 1
            keyframes["annotations"].append({"id": ann_id, "image_id": f + 1, "category_id": t.cow_id,
                                             "bbox": box.as_list(), "area": box.area, "iscrowd": 0})
    keyframes["images"] = [{"id": f + 1, "frame_index": f, "file_name": info.file_name,
                            "width": info.width, "height": info.height} for f, info in frames.items()]
    keyframes["categories"] = [{"id": t.cow_id, "name": f"cow_{t.cow_id}"} for t in scene.tracks]
    _write_json(keyframes, out / "keyframes.json")
    (out / "annotations.vtt").write_text(vtt.serialize_vtt(scene.cues), encoding="utf-8")
    metrics.write_detections(scene.detections, out / "detections.jsonl")
    pipeline.write_scores(scene.scores, out / "scores.jsonl")
    with open(out / "clip_labels.txt", "w", encoding="utf-8") as fh:
        for clip in scene.clips():
            fh.write(f"{clip.clip_id} {clip.label}\n")
    # Oracle scores for the inference windows, keyed the way run-pipeline names them.
    video_ref = f"scene{spec.seed}.mp4"
    window_scores = {}
    oracle = scene.oracle_scorer()

    def record(clip):
        window_scores[clip.clip_id] = oracle(clip)
        return window_scores[clip.clip_id]

    pipeline.run_pipeline(scene.detections, timesync.ClockMap(0, 1.0, spec.frame_rate), record,
                          window=cfg.window, stride=cfg.inference_stride,
                          gap_tolerance=cfg.gap_tolerance, frame_size=cfg.frame_size,
                          video_ref=video_ref, labels=cfg.labels)
    pipeline.write_scores(window_scores, out / "window_scores.jsonl")
    print(f"scene seed {spec.seed} ({synth.PRNG}): {len(scene.tracks)} cows, {len(scene.cues)} cues, "
          f"{len(scene.detections)} detections -> {out} (video ref {video_ref})")


def cmd_render_overlays(args, cfg):
    doc, trks = _load_tracks(args.coco)
    cues = vtt.parse_vtt(_read_text(args.vtt), cfg.labels, strict=cfg.strict) if args.vtt else []
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for f in _frame_list(args.frames):
        t_ms = clipgeom.frame_to_ms(f, cfg.fps)
        items = []
        for t in trks:
            if not t.covers(f):
                continue
            acts = [c.action for c in vtt.active_cues(cues, t_ms) if c.cow_id == t.cow_id]
            text = f"Cow {t.cow_id}" + (f" {'/'.join(acts)}" if acts else "")
            items.append((tracks.interpolate(t, f), text))
        target = out / f"overlay_{f:06d}.png"
        filt = overlay_filter(items)
        if "{frame}" not in cfg.overlay_command:
            filt = f"select=eq(n\\,{f})," + filt
        records.append({"frame": f, "output": str(target), "filter": filt,
                        "labels": [txt for _, txt in items]})
        if not args.dry_run:
            argv = render_command(cfg.overlay_command, {"input": args.video, "frame": f,
                                                        "filter": filt, "output": str(target)})
            run_command(argv, timeout=cfg.timeout, retries=cfg.retries)
            if not target.exists():
                raise ExternalCommandError(f"overlay command wrote no {target}")
    with open(out / "overlays.jsonl", "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    print(f"{len(records)} overlay frames " + ("planned" if args.dry_run else "rendered") + f" in {out}")


# --- argument parsing -----------------------------------------------------------

def _config_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("configuration overrides")
    g.add_argument("--config", default=argparse.SUPPRESS,
                   help="YAML config file (default: $HERDPIPE_CONFIG)")
    for name, kind in FIELD_TYPES.items():
        hint = "comma-separated list" if kind.startswith("tuple") else kind
        g.add_argument(f"--{name.replace('_', '-')}", dest=f"cfg_{name}", default=argparse.SUPPRESS,
                       metavar=name.upper(), help=f"override config '{name}' ({hint})")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _config_flags()
    parser = argparse.ArgumentParser(prog="herdpipe", parents=[common],
                                     description="Cattle video annotation, export and evaluation toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help_):
        p = sub.add_parser(name, parents=[common], help=help_, description=help_)
        p.set_defaults(func=func)
        return p

    p = add("sync-fit", cmd_sync_fit, "fit a camera clock map from a GPS CSV")
    p.add_argument("gps", help="GPS CSV (cts,date,lat,lon)")
    p.add_argument("--out", help="write clock JSON here instead of stdout")
    p.add_argument("--strict-rows", action="store_true", help="fail on the first malformed row")

    p = add("sync-align", cmd_sync_align, "map frame indices from one camera to another")
    p.add_argument("--src", required=True, help="source camera clock JSON")
    p.add_argument("--dst", required=True, help="destination camera clock JSON")
    p.add_argument("frames", help="frames, e.g. '0,30,100:110'")

    p = add("vtt-check", cmd_vtt_check, "parse and validate a behaviour VTT file")
    p.add_argument("vtt")
    p.add_argument("--normalize", metavar="OUT", help="also write the cues back out in canonical form")

    p = add("interp", cmd_interp, "interpolate keyframe boxes to every frame")
    p.add_argument("coco", help="COCO document with keyframe boxes")
    p.add_argument("--cow", type=int, help="only this cow")
    p.add_argument("--first", type=int, help="first frame (default: track start)")
    p.add_argument("--last", type=int, help="last frame, inclusive (default: track end)")
    p.add_argument("--out", help="JSONL output (default stdout)")

    p = add("plan-clips", cmd_plan_clips, "tile behaviour cues into cropped clip plans")
    p.add_argument("--coco", required=True, help="COCO document with keyframe boxes")
    p.add_argument("--vtt", required=True, help="behaviour annotations")
    p.add_argument("--video-ref", default="video.mp4", help="source video identifier")
    p.add_argument("--out", required=True, help="plan JSONL")

    p = add("export-coco", cmd_export_coco, "export dense identification ground truth as COCO")
    p.add_argument("--coco", required=True, help="COCO document with keyframe boxes")
    p.add_argument("--out", required=True)
    p.add_argument("--frame-pattern", help="file name pattern for frames missing from the input, "
                                           "e.g. 'frame_{frame:06d}.jpg'")
    p.add_argument("--n-cows", type=int, help="declare categories cow_1..cow_N")

    p = add("export-kinetics", cmd_export_kinetics, "extract planned clips into a Kinetics-style tree")
    p.add_argument("--plan", required=True)
    p.add_argument("--root", required=True)
    p.add_argument("--splits", help="assignment CSV from 'split' (default: split with config seed)")
    p.add_argument("--video-root", help="directory that video refs are relative to")
    p.add_argument("--ext", default="mp4")
    p.add_argument("--no-extract", action="store_true", help="write layout and manifest only")

    p = add("split", cmd_split, "deterministic train/val/test assignment")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--n-from", help="manifest CSV, plan JSONL or one-id-per-line file")
    src.add_argument("--n", type=int, help="split the ids 0..N-1")
    p.add_argument("--seed", type=int, help="PRNG seed (default: config split_seed)")
    p.add_argument("--out", help="assignment CSV")

    p = add("eval-det", cmd_eval_det, "COCO-style AP/AR of detections")
    p.add_argument("--gt", required=True, help="ground truth COCO document")
    p.add_argument("--pred", required=True, help="detections JSONL")
    p.add_argument("--ap50", action="store_true", help="single IoU threshold 0.5")
    p.add_argument("--json", help="also write the report as JSON")

    p = add("eval-action", cmd_eval_action, "confusion matrix and accuracy of behaviour labels")
    p.add_argument("--gt", required=True, help="true labels")
    p.add_argument("--pred", required=True, help="predicted labels or score records")
    p.add_argument("--json", help="also write the report as JSON")

    p = add("run-pipeline", cmd_run_pipeline, "detections + scorer -> behaviour events")
    p.add_argument("--detections", required=True)
    p.add_argument("--clock", help="clock JSON (adds wall-clock times to events)")
    p.add_argument("--scores", help="precomputed scores JSONL instead of the scorer command")
    p.add_argument("--workdir", help="where scorer request files are written")
    p.add_argument("--video-ref", default="video.mp4")
    p.add_argument("--out", required=True, help="events JSONL")
    p.add_argument("--vtt", help="also render events as VTT")

    p = add("synth", cmd_synth, "generate a synthetic scene with known ground truth")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cows", type=int, default=3)
    p.add_argument("--duration", type=float, default=120.0, help="seconds")
    p.add_argument("--jitter", type=float, default=0.0, help="box jitter sigma, px")
    p.add_argument("--drop-rate", type=float, default=0.0)
    p.add_argument("--temperature", type=float, default=0.0, help="score softening")
    p.add_argument("--outdir", required=True)

    p = add("render-overlays", cmd_render_overlays, "annotated still frames for visual checking")
    p.add_argument("--coco", required=True, help="COCO document with boxes")
    p.add_argument("--vtt", help="behaviour annotations")
    p.add_argument("--video", default="video.mp4")
    p.add_argument("--frames", required=True, help="frames, e.g. '0,30,100:110'")
    p.add_argument("--outdir", required=True)
    p.add_argument("--dry-run", action="store_true", help="write overlays.jsonl without running the command")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_")}
    try:
        cfg = load_config(getattr(args, "config", None), overrides)
        args.func(args, cfg)
    except (ValidationFailed, ConfigError, ValueError, KeyError) as exc:
        print(f"herdpipe {args.command}: {exc}", file=sys.stderr)
        return 1
    except (OSError, ExternalCommandError) as exc:
        print(f"herdpipe {args.command}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
