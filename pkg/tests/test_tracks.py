from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from herdpipe.tracks import BBox, SpanError, Track, densify, interpolate, iou, tracks_from_coco

TRACK = Track(1, ((0, BBox(0, 0, 10, 10)), (9, BBox(90, 0, 10, 10))))


def test_interpolate_examples():
    assert interpolate(TRACK, 3) == BBox(30, 0, 10, 10)
    assert interpolate(TRACK, 9) == BBox(90, 0, 10, 10)
    with pytest.raises(SpanError):
        interpolate(TRACK, 10)


def test_densify_examples():
    boxes = densify(TRACK, range(0, 10))
    assert [b.x for _, b in boxes] == list(range(0, 100, 10))
    single = Track(3, ((5, BBox(1, 2, 3, 4)),))
    assert densify(single) == [(5, BBox(1, 2, 3, 4))]
    assert densify(TRACK, range(0, 0)) == []


def test_iou_examples():
    a = BBox(0, 0, 10, 10)
    assert iou(a, a) == 1.0
    assert iou(a, BBox(5, 0, 10, 10)) == pytest.approx(1 / 3, abs=1e-15)
    assert iou(a, BBox(20, 20, 5, 5)) == 0.0


def test_track_validation():
    with pytest.raises(ValueError):
        Track(1, ())
    with pytest.raises(ValueError):
        Track(1, ((3, BBox(0, 0, 1, 1)), (3, BBox(0, 0, 1, 1))))
    with pytest.raises(ValueError):
        BBox(0, 0, 0, 5)


def test_tracks_from_coco():
    doc = {
        "images": [{"id": 1, "frame_index": 0}, {"id": 2, "frame_index": 9}],
        "annotations": [
            {"id": 1, "image_id": 1, "category_id": 2, "bbox": [0, 0, 10, 10]},
            {"id": 2, "image_id": 2, "category_id": 2, "bbox": [90, 0, 10, 10]},
        ],
    }
    (t,) = tracks_from_coco(doc)
    assert t.cow_id == 2 and t.frames == [0, 9]
    assert interpolate(t, 3) == BBox(30, 0, 10, 10)


coord = st.integers(-2000, 2000)
side = st.integers(1, 800)


@st.composite
def tracks(draw):
    n = draw(st.integers(1, 6))
    gaps = draw(st.lists(st.integers(1, 20), min_size=n - 1, max_size=n - 1))
    frames = [draw(st.integers(0, 100))]
    for g in gaps:
        frames.append(frames[-1] + g)
    boxes = [BBox(draw(coord), draw(coord), draw(side), draw(side)) for _ in frames]
    return Track(draw(st.integers(1, 8)), tuple(zip(frames, boxes)))


@given(tracks())
def test_matches_closed_form(track):
    """Every frame equals the correctly rounded exact linear interpolant; keyframes unchanged."""
    for f, box in densify(track):
        for k in range(len(track.frames) - 1):
            f0, f1 = track.frames[k], track.frames[k + 1]
            if f0 <= f <= f1:
                b0, b1 = track.keyframes[k][1], track.keyframes[k + 1][1]
                t = Fraction(f - f0, f1 - f0)
                for name in "xywh":
                    a, b = Fraction(getattr(b0, name)), Fraction(getattr(b1, name))
                    assert getattr(box, name) == float(a + (b - a) * t)
                break
    for f, box in track.keyframes:
        assert interpolate(track, f) == box


@given(tracks(), st.integers(1, 9))
def test_second_differences_vanish_on_integer_grid(track, scale):
    """Keyframe spacing times slope integer: interpolated values are exact, so second differences are 0."""
    kfs = []
    for f, b in track.keyframes:
        kfs.append((f * scale, b))
    # rescale coordinates so each segment's slope is integral
    stretched = []
    prev = None
    for f, b in kfs:
        if prev is None:
            stretched.append((f, b))
        else:
            pf, pb = stretched[-1]
            d = f - pf
            stretched.append((f, BBox(pb.x + d * round(b.x - pb.x), pb.y + d * round(b.y - pb.y),
                                      pb.w + d * abs(round(b.w)), pb.h + d * abs(round(b.h)))))
        prev = b
    t = Track(track.cow_id, tuple(stretched))
    dense = densify(t)
    for k in range(len(t.frames) - 1):
        seg = [b for f, b in dense if t.frames[k] <= f <= t.frames[k + 1]]
        for a, b, c in zip(seg, seg[1:], seg[2:]):
            for name in "xywh":
                assert getattr(a, name) - 2 * getattr(b, name) + getattr(c, name) == 0


@given(st.tuples(coord, coord, side, side), st.tuples(coord, coord, side, side))
def test_iou_bounds_and_symmetry(a, b):
    a, b = BBox(*a), BBox(*b)
    v = iou(a, b)
    assert 0.0 <= v <= 1.0
    assert v == iou(b, a)
