import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cpselect.comms import stream
from cpselect.errors import ContractError, DomainError
from cpselect.fusion import (FALSE_POSITIVE, BoundingBox, DetectionSet, FusedDetections, degrade,
                             fuse_confidence_max, fuse_iou_max, fuse_many, iou, load_detections,
                             loads_detections, match_predictions, metrics, save_detections,
                             synthesize_detections, dumps_detections)
from cpselect.scenario import generate_scenario

GT = (BoundingBox(0, 0, 10, 10, 1.0, 0), BoundingBox(100, 0, 110, 10, 1.0, 1))


def shifted(gt, dx, conf=0.9):
    return BoundingBox(gt.x_min + dx, gt.y_min, gt.x_max + dx, gt.y_max, conf, gt.object_id)


def test_iou_identical():
    assert iou(GT[0], GT[0]) == 1.0


def test_iou_disjoint():
    assert iou(GT[0], GT[1]) == 0.0


def test_iou_half_offset_unit_squares():
    a = BoundingBox(0, 0, 1, 1)
    b = BoundingBox(0.5, 0, 1.5, 1)
    assert iou(a, b) == pytest.approx(1 / 3)


def test_degenerate_box_rejected():
    with pytest.raises(ContractError):
        BoundingBox(1, 0, 1, 5)


def test_helper_covers_ego_miss():
    ego = DetectionSet(0, GT, ())
    # IoU (10 - d) / (10 + d) = 0.7 -> d = 30 / 17
    helper = DetectionSet(1, GT, (shifted(GT[0], 30 / 17),))
    fused = fuse_iou_max(ego, helper)
    assert fused.ious[0] == pytest.approx(0.7)
    assert fused.ious[1] == 0.0


def test_fusion_takes_max_of_sources():
    def d(t):
        return 10 * (1 - t) / (1 + t)
    ego = DetectionSet(0, GT, (shifted(GT[0], d(0.42)),))
    helper = DetectionSet(2, GT, (shifted(GT[0], -d(0.74)),))
    assert fuse_iou_max(ego, helper).ious[0] == pytest.approx(0.74)


def test_fusion_mismatched_ground_truth():
    with pytest.raises(ContractError):
        fuse_iou_max(DetectionSet(0, GT), DetectionSet(1, GT[:1]))


def random_set(rng, vid, n_obj=6, n_pred=8):
    gt = tuple(BoundingBox(50.0 * j, 0.0, 50.0 * j + 20, 30.0, 1.0, j) for j in range(n_obj))
    preds = []
    for _ in range(n_pred):
        j = int(rng.integers(-1, n_obj))
        x = rng.uniform(-10, 50 * n_obj)
        preds.append(BoundingBox(x, rng.uniform(-5, 5), x + rng.uniform(5, 30), 30 + rng.uniform(-5, 5),
                                 float(rng.uniform()), j if j >= 0 else FALSE_POSITIVE))
    return DetectionSet(vid, gt, tuple(preds))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_fusion_algebra(seed):
    rng = np.random.default_rng(seed)
    a, b = random_set(rng, 0), random_set(rng, 1)
    ab, ba = fuse_iou_max(a, b), fuse_iou_max(b, a)
    assert ab.ious == ba.ious
    best_a, _, _ = match_predictions(a)
    best_b, _, _ = match_predictions(b)
    for k, oid in enumerate(ab.object_ids):
        assert ab.ious[k] == max(best_a[oid], best_b[oid])
    assert fuse_iou_max(a, a).ious == tuple(best_a[o] for o in a.object_ids)


def test_greedy_matching_for_unknown_ids():
    preds = (BoundingBox(1, 0, 11, 10, 0.8, None), BoundingBox(100, 0, 110, 10, 0.8, None),
             BoundingBox(500, 0, 510, 10, 0.8, None))
    best, fp, _ = match_predictions(DetectionSet(0, GT, preds))
    assert best[0] == pytest.approx(9 / 11)
    assert best[1] == 1.0
    assert fp == 1


def test_confidence_fusion_picks_confident_box():
    ego = DetectionSet(0, GT, (shifted(GT[0], 1.0, conf=0.3),))
    helper = DetectionSet(1, GT, (shifted(GT[0], 5.0, conf=0.9),))
    fused = fuse_confidence_max(ego, helper)
    assert fused.ious[0] == pytest.approx(iou(shifted(GT[0], 5.0), GT[0]))


def test_degrade_zero_is_identity():
    ds = random_set(np.random.default_rng(1), 0)
    assert degrade(ds, 0.0, stream(1)) == ds


def test_degrade_survival_fraction():
    gt = (BoundingBox(0, 0, 1, 1, 1.0, 0),)
    preds = tuple(BoundingBox(0, 0, 1, 1, 0.5, 0) for _ in range(10_000))
    kept = degrade(DetectionSet(0, gt, preds), 0.3, stream(2))
    assert abs(len(kept.predictions) / 10_000 - 0.7) < 0.02
    assert kept.ground_truth == gt


def test_degrade_near_one_drops_almost_everything():
    ds = random_set(np.random.default_rng(1), 0, n_pred=200)
    assert len(degrade(ds, 0.999, stream(3)).predictions) <= 2


def test_degrade_domain():
    with pytest.raises(DomainError):
        degrade(DetectionSet(0, GT), 1.0, stream(1))


def test_degrade_nested_under_same_stream():
    ds = random_set(np.random.default_rng(4), 0, n_pred=50)
    lo = set(degrade(ds, 0.2, stream(9)).predictions)
    hi = set(degrade(ds, 0.6, stream(9)).predictions)
    assert hi <= lo


def test_perfect_metrics():
    assert metrics([1.0, 1.0, 1.0]) == metrics(FusedDetections((0, 1, 2), (1.0, 1.0, 1.0)))
    m = metrics([1.0, 1.0, 1.0])
    assert (m.mean_iou, m.recall, m.f1) == (1.0, 1.0, 1.0)


def test_metrics_counts_false_positives():
    m = metrics(FusedDetections((0, 1), (0.8, 0.3), false_positives=1), 0.5)
    assert m.recall == 0.5
    assert m.precision == pytest.approx(1 / 3)
    assert m.f1 == pytest.approx(2 * (1 / 3) * 0.5 / (1 / 3 + 0.5))
    assert m.mean_iou == pytest.approx(0.55)


def test_metrics_errors():
    with pytest.raises(ContractError):
        metrics([])
    with pytest.raises(ContractError):
        metrics([0.5], 1.0)


def test_synthetic_helper_lifts_ego():
    s = generate_scenario(0)
    dets = synthesize_detections(s, stream(0, 1))
    ego = fuse_many([dets[0]])
    both = fuse_many([dets[0], *(dets[v.id] for v in s.candidates[:3])])
    assert all(b >= e for b, e in zip(both.ious, ego.ious))
    assert metrics(both).mean_iou > metrics(ego).mean_iou


def test_synthesis_deterministic():
    s = generate_scenario(3)
    assert synthesize_detections(s, stream(3, 1)) == synthesize_detections(s, stream(3, 1))


def test_detection_file_round_trip(tmp_path):
    s = generate_scenario(1)
    dets = synthesize_detections(s, stream(1, 1))
    p = tmp_path / "dets.jsonl"
    save_detections(dets.values(), p)
    assert load_detections(p) == dets
    first = p.read_text().splitlines()[0]
    for key in ("vehicle_id", "object_id", "box", "confidence"):
        assert key in first


def test_detection_file_errors():
    with pytest.raises(ContractError):
        loads_detections('{"vehicle_id": 0, "kind": "gt"}\n')
    with pytest.raises(ContractError):
        loads_detections('{"vehicle_id": 0, "kind": "what", "box": [0, 0, 1, 1], "object_id": 0}\n')
    assert loads_detections(dumps_detections([DetectionSet(0, GT)]))[0] == DetectionSet(0, GT)
