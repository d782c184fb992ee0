import json
import re

import pytest

from conftest import TSN_COUNTS, helper_command
from herdpipe.cli import build_parser, main
from herdpipe.config import ENV_VAR, ConfigError, FIELD_TYPES, load_config

LABELS = ("Drinking", "Grazing", "Other")


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_vtt_check_listing(tmp_path, listing, capsys):
    (tmp_path / "a.vtt").write_text(listing)
    code, out, _ = run(["vtt-check", str(tmp_path / "a.vtt")], capsys)
    assert code == 0 and out.startswith("3 cues, 0 conflicts")


def test_vtt_check_conflict_exit_1(tmp_path, capsys):
    (tmp_path / "b.vtt").write_text("0:00:00.000 --> 0:00:10.000\nCow 2 Drinking\n"
                                   "0:00:05.000 --> 0:00:15.000\nCow 2 Grazing\n")
    code, out, _ = run(["vtt-check", str(tmp_path / "b.vtt")], capsys)
    assert code == 1 and "1 conflicts" in out


def test_eval_action_tsn_counts(tmp_path, capsys):
    gt, pred = [], []
    for i, row in enumerate(TSN_COUNTS):
        for j, n in enumerate(row):
            gt += [LABELS[i]] * n
            pred += [LABELS[j]] * n
    (tmp_path / "g.txt").write_text("".join(f"clip{k} {lab}\n" for k, lab in enumerate(gt)))
    (tmp_path / "p.txt").write_text("".join(f"clip{k},{lab}\n" for k, lab in enumerate(pred)))
    code, out, _ = run(["eval-action", "--gt", str(tmp_path / "g.txt"), "--pred", str(tmp_path / "p.txt"),
                        "--json", str(tmp_path / "r.json")], capsys)
    assert code == 0
    for pct in ("84.4%", "94.4%", "42.7%"):
        assert pct in out
    report = json.loads((tmp_path / "r.json").read_text())
    assert report["support"] == [109, 124, 117]


def test_eval_action_length_mismatch(tmp_path, capsys):
    (tmp_path / "g.txt").write_text("Drinking\nGrazing\n")
    (tmp_path / "p.txt").write_text("Drinking\n")
    code, _, err = run(["eval-action", "--gt", str(tmp_path / "g.txt"), "--pred", str(tmp_path / "p.txt")], capsys)
    assert code == 1 and "2 true labels" in err


def test_split_is_deterministic(tmp_path, capsys):
    rows = "path,label\n" + "".join(f"train/Other/c{k}.mp4,Other\n" for k in range(50))
    (tmp_path / "manifest.csv").write_text(rows)
    for name in ("a.csv", "b.csv"):
        assert run(["split", "--n-from", str(tmp_path / "manifest.csv"), "--seed", "7",
                    "--out", str(tmp_path / name)], capsys)[0] == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_split_sizes_1715(capsys):
    code, out, err = run(["split", "--n", "1715"], capsys)
    assert code == 0 and "train=1200 val=86 test=429" in err


def test_help_lists_every_flag(capsys):
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    for name, p in [("herdpipe", parser)] + list(sub.choices.items()):
        text = p.format_help()
        for action in p._actions:
            for opt in action.option_strings:
                assert opt in text, f"{name}: {opt} missing from help"
    text = parser.format_help()
    for key in FIELD_TYPES:
        assert f"--{key.replace('_', '-')}" in text
    assert sorted(sub.choices) == sorted([
        "sync-fit", "sync-align", "vtt-check", "interp", "plan-clips", "export-coco", "export-kinetics",
        "split", "eval-det", "eval-action", "run-pipeline", "synth", "render-overlays"])


def test_unknown_flag_rejected(capsys):
    with pytest.raises(SystemExit) as info:
        main(["split", "--n", "3", "--bogus"])
    assert info.value.code != 0


def test_exit_codes(tmp_path, capsys):
    assert run(["sync-fit", str(tmp_path / "missing.csv")], capsys)[0] == 2
    assert run(["--window", "-1", "split", "--n", "3"], capsys)[0] == 1
    (tmp_path / "bad.yaml").write_text("windw: 2\n")
    assert run(["split", "--n", "3", "--config", str(tmp_path / "bad.yaml")], capsys)[0] == 1


def test_sync_fit_and_align(tmp_path, capsys):
    def csv(base_s):
        return "cts,date,lat,lon\n" + "".join(
            f"{k * 1000},2020-03-18T01:00:{base_s + k:02d}.000Z,-30.5,151.6\n" for k in range(10))
    (tmp_path / "a.csv").write_text(csv(2))
    (tmp_path / "b.csv").write_text(csv(0) + "bad,row\n")
    assert run(["sync-fit", str(tmp_path / "a.csv"), "--out", str(tmp_path / "a.json")], capsys)[0] == 0
    code, _, err = run(["sync-fit", str(tmp_path / "b.csv"), "--out", str(tmp_path / "b.json")], capsys)
    assert code == 0 and "1 malformed" in err
    code, out, _ = run(["sync-align", "--src", str(tmp_path / "a.json"), "--dst", str(tmp_path / "b.json"),
                        "300,0"], capsys)
    assert code == 0 and out.splitlines() == ["300\t360", "0\t60"]


def test_config_file_env_and_override(tmp_path, monkeypatch):
    cfg = tmp_path / "h.yaml"
    cfg.write_text("frame_rate: 25\nlabels: [Drinking, Grazing, Other, Lying]\nsplit_seed: 4\n")
    monkeypatch.setenv(ENV_VAR, str(cfg))
    c = load_config()
    assert c.fps == 25 and c.labels[-1] == "Lying" and c.split_seed == 4
    c = load_config(overrides={"split_seed": "9", "frame_size": "640x480"})
    assert c.split_seed == 9 and c.frame_size == (640, 480)
    with pytest.raises(ConfigError):
        load_config(overrides={"split_ratios": "0.5,0.6,0.1"})
    cfg.write_text("- not\n- a mapping\n")
    with pytest.raises(ConfigError):
        load_config()


def test_full_chain(tmp_path, capsys):
    d = tmp_path
    assert run(["synth", "--seed", "3", "--cows", "2", "--duration", "12", "--outdir", str(d / "s")], capsys)[0] == 0
    assert run(["plan-clips", "--coco", str(d / "s/keyframes.json"), "--vtt", str(d / "s/annotations.vtt"),
                "--video-ref", "scene3.mp4", "--out", str(d / "plan.jsonl")], capsys)[0] == 0
    extractor = helper_command("fake_extractor.py") + " {plan} {output}"
    code, out, _ = run(["--extractor", extractor, "export-kinetics", "--plan", str(d / "plan.jsonl"),
                        "--root", str(d / "kin")], capsys)
    assert code == 0 and "24 clips exported" in out
    assert (d / "kin/manifest.csv").exists()

    assert run(["export-coco", "--coco", str(d / "s/keyframes.json"), "--out", str(d / "gt.json")], capsys)[0] == 0
    code, out, _ = run(["eval-det", "--gt", str(d / "gt.json"), "--pred", str(d / "s/detections.jsonl")], capsys)
    assert code == 0 and out.startswith("AP: 1.0000  AR: 1.0000")
    code, out, _ = run(["eval-action", "--gt", str(d / "s/clip_labels.txt"), "--pred", str(d / "s/scores.jsonl")],
                       capsys)
    assert code == 0 and "overall (micro) accuracy: 100.0%" in out

    scorer = helper_command("fake_scorer.py", "Grazing")
    code, out, _ = run(["--scorer", scorer, "--workers", "2", "run-pipeline", "--detections",
                        str(d / "s/detections.jsonl"), "--out", str(d / "ev.jsonl"), "--vtt", str(d / "ev.vtt")],
                       capsys)
    assert code == 0
    events = [json.loads(x) for x in (d / "ev.jsonl").read_text().splitlines()]
    assert {e["label"] for e in events} == {"Grazing"} and len(events) == 2

    overlay = helper_command("fake_overlay.py") + " {frame} {filter} {output}"
    code, out, _ = run(["--overlay-command", overlay, "render-overlays", "--coco", str(d / "gt.json"),
                        "--vtt", str(d / "s/annotations.vtt"), "--frames", "0,30:31", "--outdir", str(d / "ov")],
                       capsys)
    assert code == 0 and len(list((d / "ov").glob("overlay_*.png"))) == 3
    first = (d / "ov/overlay_000000.png").read_text()
    assert re.search(r"Cow 1 (Drinking|Grazing|Other)", first)


def test_extractor_failure_exit_2(tmp_path, capsys):
    run(["synth", "--seed", "3", "--cows", "1", "--duration", "6", "--outdir", str(tmp_path / "s")], capsys)
    run(["plan-clips", "--coco", str(tmp_path / "s/keyframes.json"), "--vtt", str(tmp_path / "s/annotations.vtt"),
         "--out", str(tmp_path / "plan.jsonl")], capsys)
    code, _, err = run(["--extractor", "false {output}", "export-kinetics", "--plan", str(tmp_path / "plan.jsonl"),
                        "--root", str(tmp_path / "kin")], capsys)
    assert code == 2 and "failed" in err


def test_idempotent_outputs(tmp_path, capsys):
    for name in ("a", "b"):
        run(["synth", "--seed", "8", "--cows", "1", "--duration", "6", "--outdir", str(tmp_path / name)], capsys)
        run(["interp", str(tmp_path / name / "keyframes.json"), "--out", str(tmp_path / f"{name}.jsonl")], capsys)
    for f in ("scene.json", "keyframes.json", "annotations.vtt", "detections.jsonl", "window_scores.jsonl"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
