import json
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from conftest import helper_command
from herdpipe.clipgeom import plan_clips
from herdpipe.export import (
    ExportError, FrameInfo, export_coco, export_kinetics, read_manifest, split, split_sizes,
    validate_coco,
)
from herdpipe.tracks import BBox, Track
from herdpipe.vtt import BehaviourCue

RATIOS = (0.70, 0.05, 0.25)


def largest_remainder(n, ratios):
    """Independent reference: exact quotas, floor, then leftovers by remainder (ties to earlier split)."""
    quotas = [Fraction(str(r)) * n for r in ratios]
    floors = [q.numerator // q.denominator for q in quotas]
    order = sorted(range(len(ratios)), key=lambda k: (-(quotas[k] - floors[k]), k))
    for k in order[: n - sum(floors)]:
        floors[k] += 1
    return tuple(floors)


@pytest.mark.parametrize("n,expected", [(1715, (1200, 86, 429)), (20, (14, 1, 5)), (1, (1, 0, 0))])
def test_split_sizes(n, expected):
    assert split_sizes(n, RATIOS) == expected
    assert largest_remainder(n, RATIOS) == expected


@given(st.integers(1, 5000))
def test_split_sizes_match_reference(n):
    assert split_sizes(n, RATIOS) == largest_remainder(n, RATIOS)


@given(st.lists(st.text(min_size=1, max_size=6), min_size=1, max_size=60, unique=True), st.integers(0, 99))
def test_split_partition_and_determinism(items, seed):
    a = split(items, RATIOS, seed)
    b = split(list(reversed(items)), RATIOS, seed)
    assert a.assignment == b.assignment
    assert set(a.assignment) == set(items)
    assert tuple(a.sizes().values()) == split_sizes(len(items), RATIOS)


def test_split_seed_changes_assignment():
    items = [f"clip{k}" for k in range(200)]
    assert split(items, seed=1).assignment != split(items, seed=2).assignment


def test_chronological_split():
    res = split(range(10), (0.5, 0.2, 0.3), mode="chronological")
    assert res.items("train") == [0, 1, 2, 3, 4] and res.items("test") == [7, 8, 9]


def test_grouped_split_keeps_groups_together():
    items = [f"c{k}" for k in range(40)]
    groups = {it: int(it[1:]) // 4 for it in items}
    res = split(items, RATIOS, seed=3, groups=groups)
    for g in set(groups.values()):
        assert len({res[it] for it in items if groups[it] == g}) == 1


def test_split_errors():
    with pytest.raises(ValueError):
        split([], RATIOS)
    with pytest.raises(ValueError):
        split(["a", "a"], RATIOS)
    with pytest.raises(ValueError):
        split_sizes(10, (0.5, 0.6))


def _meta(frames, w=1920, h=1080):
    return {f: FrameInfo(f"frame_{f:06d}.jpg", w, h) for f in frames}


def test_export_coco_densifies():
    t = Track(1, ((0, BBox(0, 0, 10, 10)), (9, BBox(90, 0, 10, 10))))
    doc = export_coco([t], _meta(range(10)))
    assert len(doc["annotations"]) == 10 and len(doc["categories"]) == 1
    assert [a["bbox"][0] for a in doc["annotations"]] == [float(10 * k) for k in range(10)]
    assert validate_coco(doc) == []


def test_export_coco_empty_and_categories():
    empty = export_coco([], {})
    assert empty["annotations"] == [] and validate_coco(empty) == []
    doc = export_coco([], {}, cow_ids=range(1, 9))
    assert [c["name"] for c in doc["categories"]] == [f"cow_{k}" for k in range(1, 9)]


def test_export_coco_clamps_and_needs_metadata():
    t = Track(2, ((0, BBox(1900, -10, 100, 50)),))
    doc = export_coco([t], _meta([0]))
    assert doc["annotations"][0]["bbox"] == [1900.0, 0.0, 20.0, 40.0]
    with pytest.raises(ValueError):
        export_coco([t], {})


def _clips():
    track = Track(1, ((0, BBox(100, 100, 80, 40)), (900, BBox(300, 200, 80, 40))))
    cues = [BehaviourCue(1, "Drinking", 0, 1000), BehaviourCue(1, "Grazing", 2000, 3000),
            BehaviourCue(1, "Other", 4000, 5000)]
    return plan_clips([track], cues, 30, video_ref="v.mp4").clips


def test_kinetics_layout(tmp_path):
    clips = _clips()
    assign = {c.clip_id: "train" for c in clips}
    template = helper_command("fake_extractor.py") + " {plan} {output}"
    res = export_kinetics(clips, assign, tmp_path, template=template)
    assert sorted(p.name for p in (tmp_path / "train").iterdir()) == ["Drinking", "Grazing", "Other"]
    rows = read_manifest(tmp_path / "manifest.csv")
    assert [r["label"] for r in rows] == ["Drinking", "Grazing", "Other"]
    written = json.loads((tmp_path / rows[0]["path"]).read_text())
    assert written["frames"] == [0, 29]
    assert res.class_histogram() == {"Drinking": 1, "Grazing": 1, "Other": 1}


def test_kinetics_failure_is_reported(tmp_path):
    clips = _clips()
    assign = {c.clip_id: "test" for c in clips}
    template = helper_command("fake_extractor.py") + " {plan} {output} --fail-on grazing"
    res = export_kinetics(clips, assign, tmp_path, template=template)
    assert len(res.rows) == 2 and len(res.failures) == 1
    assert "grazing" in res.failures[0][0]


def test_kinetics_duplicate_ids(tmp_path):
    clips = _clips()
    with pytest.raises(ExportError, match="used twice"):
        export_kinetics([clips[0], clips[0]], {clips[0].clip_id: "train"}, tmp_path, extract=False)


def test_kinetics_needs_assignment(tmp_path):
    with pytest.raises(ExportError, match="without a split"):
        export_kinetics(_clips(), {}, tmp_path, extract=False)
