from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from herdpipe.metrics import average_precision
from herdpipe.synth import (
    FIXTURE_FORMAT, PRNG, InfeasibleScene, OracleTooLarge, Scene, SceneSpec, generate,
    oracle_detection_metrics, oracle_metrics, random_instance, soften,
)
from herdpipe.tracks import densify
from herdpipe.vtt import validate_cues

SMALL = SceneSpec(seed=5, n_cows=2, duration_s=20.0)


def test_zero_noise_detections_are_ground_truth():
    scene = generate(SMALL)
    gt = scene.ground_truth()
    assert [(d.frame, d.bbox, d.category) for d in scene.detections] == \
        sorted(((g.frame, g.bbox, g.category) for g in gt), key=lambda t: (t[0], t[2]))
    assert all(d.score == 1.0 for d in scene.detections)


def test_drop_rate_one():
    assert generate(SceneSpec(seed=1, duration_s=5.0, drop_rate=1.0)).detections == []


def test_deterministic_and_fixture_round_trip():
    a, b = generate(SMALL), generate(SMALL)
    assert a.to_json() == b.to_json()
    again = Scene.from_json(a.to_json())
    assert again.to_json() == a.to_json()
    assert f'"format": "{FIXTURE_FORMAT}"' in a.to_json() and f'"prng": "{PRNG}"' in a.to_json()
    assert generate(SceneSpec(seed=6, n_cows=2, duration_s=20.0)).to_json() != a.to_json()


def test_spec_validation():
    with pytest.raises(ValueError):
        SceneSpec(drop_rate=1.5)
    with pytest.raises(InfeasibleScene):
        generate(SceneSpec(n_cows=20, duration_s=2.0))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 5), st.floats(5.0, 60.0))
def test_cues_valid_and_tracks_in_frame(seed, cows, duration):
    spec = SceneSpec(seed=seed, n_cows=cows, duration_s=duration)
    scene = generate(spec)
    assert validate_cues(scene.cues).conflicts == []
    for t in scene.tracks:
        for f, b in densify(t):
            assert 0 <= b.x and b.x2 <= spec.frame_w and 0 <= b.y and b.y2 <= spec.frame_h
        assert t.first_frame == 0 and t.last_frame == spec.n_frames - 1
    for cow in range(1, cows + 1):
        mine = sorted((c for c in scene.cues if c.cow_id == cow), key=lambda c: c.start)
        assert mine[0].start == 0 and mine[-1].end == spec.duration_ms
        assert all(a.end == b.start and a.action != b.action for a, b in zip(mine, mine[1:]))


def test_oracle_examples():
    scene = generate(SMALL)
    perfect = oracle_metrics(scene, scene.detections)
    assert perfect["ap"] == 1.0 and perfect["ar"] == 1.0
    assert oracle_metrics(scene, [])["ap"] == 0.0


def test_oracle_hand_trace():
    from herdpipe.metrics import Detection, GroundTruth
    from herdpipe.tracks import BBox
    a = BBox(0, 0, 10, 10)
    gt = [GroundTruth(0, a, 1), GroundTruth(1, a, 1)]
    pred = [Detection(0, a, 1, 0.9), Detection(0, BBox(50, 50, 5, 5), 1, 0.8), Detection(1, a, 1, 0.7)]
    out = oracle_detection_metrics(gt, pred)
    assert out["exact"][0] == (51 + 50 * Fraction(2, 3)) / 101


def test_oracle_refuses_large_cells():
    rng = np.random.Generator(np.random.PCG64(0))
    gt, pred = random_instance(rng, max_gt=5, max_pred=8, frames=1, classes=1)
    with pytest.raises(OracleTooLarge):
        oracle_detection_metrics(gt * 3, pred)


def test_soften():
    assert soften("Grazing", ("Drinking", "Grazing", "Other"), 0.0) == {"Drinking": 0.0, "Grazing": 1.0, "Other": 0.0}
    soft = soften("Grazing", ("Drinking", "Grazing", "Other"), 1.0)
    assert max(soft, key=soft.get) == "Grazing" and sum(soft.values()) == pytest.approx(1.0)


def test_noisy_scene_degrades_metrics():
    scene = generate(SceneSpec(seed=2, n_cows=2, duration_s=10.0, box_jitter=30.0, drop_rate=0.2))
    res = average_precision(scene.ground_truth(), scene.detections)
    assert 0.0 < res.ap < 1.0 and res.ar < 1.0
