from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nadsnet.annotations import FrameAnnotation, PersonAnnotation, Seatbelt
from nadsnet.exceptions import ConfigError, ShapeError
from nadsnet.metrics import (Confusion, FrameCounts, MetricConfig, MetricReport, aggregate, breakdown,
                             confusion_rates, curve_distance, evaluate_frame, format_breakdown, match_persons,
                             mpckh, pckh_counts, segmentation_metrics)
from nadsnet.parsing import FrameDetections, PersonSkeleton, skeletonize_mask
from nadsnet.targets import TargetConfig, render_seatbelt_mask
from nadsnet.topology import DEFAULT_TOPOLOGY as TOPO

from oracles import all_pairs_mean_nn
from synth import synthetic_frame

NINE = [(100.0 + 10 * j, 100.0) for j in range(9)]


# -- mPCKh ---------------------------------------------------------------------

@pytest.mark.parametrize("dx, hit", [(84, True), (85, True), (86, False)])
def test_tolerance_boundary_at_reference_170(dx, hit):
    gt = [[(100.0, 100.0)]]
    pred = [[(100.0 + dx, 100.0)]]
    correct, annotated, _ = pckh_counts(pred, gt, 170, neck=None)
    assert (correct, annotated) == ([int(hit)], [1])


def test_perfect_prediction():
    per_joint, overall = mpckh([NINE], [NINE], 170)
    assert overall == 1.0 and set(per_joint.values()) == {1.0}
    assert list(per_joint) == list(TOPO.joints)


def test_three_of_nine():
    pred = [p if j < 3 else (p[0], p[1] + 200) for j, p in enumerate(NINE)]
    _, overall = mpckh([pred], [NINE], 170, exact=True)
    assert overall == Fraction(3, 9)


def test_invisible_joints_are_not_annotated():
    gt = [NINE[:4] + [None] * 5]
    correct, annotated, _ = pckh_counts([NINE], gt, 170)
    assert annotated == [1, 1, 1, 1, 0, 0, 0, 0, 0] and correct == annotated


def test_missing_prediction_counts_as_miss():
    correct, annotated, fp = pckh_counts([], [NINE], 170)
    assert sum(correct) == 0 and sum(annotated) == 9 and fp == 0


def test_unmatched_predictions_are_false_positives():
    far = [(x + 300, y) for x, y in NINE]
    _, _, fp = pckh_counts([NINE, far], [NINE], 170)
    assert fp == 1


def test_nonpositive_reference_rejected():
    with pytest.raises(ValueError):
        pckh_counts([NINE], [NINE], 0)


def test_bad_metric_config():
    with pytest.raises(ConfigError):
        MetricConfig(alpha=0)
    with pytest.raises(ConfigError):
        MetricConfig(match_strategy="hungarian")


def test_match_persons_by_neck_then_centroid():
    a = [None, (10.0, 10.0)] + [None] * 7
    b = [None, (200.0, 10.0)] + [None] * 7
    headless = [(205.0, 12.0)] + [None] * 8
    assert match_persons([b, a], [a, b]) == {0: 1, 1: 0}
    assert match_persons([headless], [a, b]) == {1: 0}


def _people(r, n):
    return [[None if r.random() < 0.2 else tuple(r.uniform(0, 300, 2)) for _ in range(9)] for _ in range(n)]


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31), a1=st.floats(0.05, 2), a2=st.floats(0.05, 2), shift=st.tuples(
    st.integers(-500, 500), st.integers(-500, 500)))
def test_pckh_properties(seed, a1, a2, shift):
    r = np.random.default_rng(seed)
    gt = _people(r, int(r.integers(1, 3)))
    pred = [[None if j is None else (j[0] + r.normal(0, 40), j[1] + r.normal(0, 40)) for j in p] for p in gt]
    lo, hi = sorted((a1, a2))
    c_lo, ann, _ = pckh_counts(pred, gt, 170, MetricConfig(alpha=lo))
    c_hi, _, _ = pckh_counts(pred, gt, 170, MetricConfig(alpha=hi))
    assert all(a <= b <= n for a, b, n in zip(c_lo, c_hi, ann))
    # the tolerance depends only on alpha * reference
    c_ref, _, _ = pckh_counts(pred, gt, 340, MetricConfig(alpha=lo / 2))
    assert c_ref == c_lo
    move = lambda people: [[None if j is None else (j[0] + shift[0], j[1] + shift[1]) for j in p] for p in people]
    assert pckh_counts(move(pred), move(gt), 170, MetricConfig(alpha=lo))[0] == c_lo


# -- seat-belt metrics ---------------------------------------------------------

def fixture_masks():
    gt = np.zeros((4, 4), bool)
    pred = np.zeros((4, 4), bool)
    gt[0, 0] = gt[0, 1] = gt[1, 0] = True
    pred[0, 0] = pred[0, 1] = pred[2, 2] = True
    return pred, gt


def test_four_by_four_fixture_exact():
    pred, gt = fixture_masks()
    assert Confusion.from_masks(pred, gt) == Confusion(2, 1, 1, 12)
    m = segmentation_metrics(pred, gt, exact=True)
    assert m == {"sensitivity": Fraction(2, 3), "specificity": Fraction(12, 13), "precision": Fraction(2, 3),
                 "f1": Fraction(2, 3), "iou": Fraction(1, 2)}


def test_disjoint_masks():
    a = np.zeros((4, 4), bool)
    b = np.zeros((4, 4), bool)
    a[0, 0] = b[3, 3] = True
    m = segmentation_metrics(a, b, exact=True)
    assert m["iou"] == 0 and m["f1"] == 0 and m["sensitivity"] == 0 and m["precision"] == 0


def test_empty_conventions():
    empty = np.zeros((3, 3), bool)
    m = segmentation_metrics(empty, empty)
    assert m["iou"] == 1.0 and m["f1"] == 1.0 and m["specificity"] == 1.0
    assert m["sensitivity"] is None and m["precision"] is None
    full = np.ones((3, 3), bool)
    assert segmentation_metrics(full, full)["specificity"] is None


def test_mask_shape_mismatch():
    with pytest.raises(ShapeError):
        Confusion.from_masks(np.zeros((2, 2)), np.zeros((2, 3)))


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**31), density=st.floats(0, 1))
def test_segmentation_properties(seed, density):
    r = np.random.default_rng(seed)
    pred, gt = r.random((2, 8, 8)) < density
    m = segmentation_metrics(pred, gt, exact=True)
    present = [m[k] for k in ("sensitivity", "precision") if m[k] is not None]
    if present:
        assert m["iou"] <= min(present)
    if m["sensitivity"] is not None and m["precision"] is not None and m["sensitivity"] + m["precision"] > 0:
        assert m["f1"] == 2 * m["precision"] * m["sensitivity"] / (m["precision"] + m["sensitivity"])
    c = Confusion.from_masks(pred, gt)
    assert c.tp + c.fp + c.fn + c.tn == 64
    assert all(v is None or 0 <= v <= 1 for v in m.values())


# -- curve distance ------------------------------------------------------------

def test_identical_curves_distance_zero():
    m = np.zeros((20, 20), bool)
    m[5:9, 2:18] = True
    assert curve_distance(m, m) == 0.0


def test_parallel_lines_five_apart():
    a = np.zeros((20, 30), bool)
    b = np.zeros((20, 30), bool)
    a[5, 3:25] = True
    b[10, 3:25] = True
    assert curve_distance(a, b) == pytest.approx(5.0)


def test_curve_distance_absent_when_empty():
    a = np.zeros((5, 5), bool)
    b = a.copy()
    b[2, 2] = True
    assert curve_distance(a, b) is None


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_curve_distance_matches_all_pairs_and_is_symmetric(seed):
    r = np.random.default_rng(seed)
    a, b = r.random((2, 14, 14)) < 0.3
    if not a.any() or not b.any():
        return
    d = curve_distance(a, b)
    expected = all_pairs_mean_nn(np.argwhere(skeletonize_mask(a)), np.argwhere(skeletonize_mask(b)))
    assert d == pytest.approx(expected, abs=1e-9)
    assert curve_distance(b, a) == pytest.approx(d, abs=1e-12)


# -- frame evaluation and breakdown --------------------------------------------

def perfect_detections(frame, stride=4):
    mask = render_seatbelt_mask(frame, TargetConfig(stride=stride))[:, :, 0] > 0
    persons = [PersonSkeleton(tuple(None if j is None else (j[0], j[1], 1.0) for j in p.joints), 1.0)
               for p in frame.persons]
    return FrameDetections(frame.image_id, frame.image_size, stride, tuple(persons), mask)


def test_evaluate_frame_perfect():
    frame = synthetic_frame(4)
    counts = evaluate_frame(perfect_detections(frame), frame)
    assert counts.correct == counts.annotated
    assert counts.belt.fp == counts.belt.fn == 0
    assert counts.curve_sum == 0.0 and counts.curve_frames == 1


def test_evaluate_frame_without_persons():
    frame = FrameAnnotation("x", (64, 64), [], [Seatbelt([(5, 5), (60, 60)], 8)])
    det = FrameDetections("x", (64, 64), 4, (), np.zeros((16, 16), bool))
    counts = evaluate_frame(det, frame)
    assert counts.correct == counts.annotated == [0] * 9
    assert counts.belt.fn > 0 and counts.curve_frames == 0


def _random_counts(r):
    return FrameCounts(list(r.integers(0, 3, 9)), list(r.integers(3, 5, 9)),
                       Confusion(*map(int, r.integers(0, 50, 4))), float(r.random()), 1, int(r.integers(0, 2)))


def test_breakdown_is_micro_average():
    r = np.random.default_rng(0)
    frames = [synthetic_frame(s) for s in range(6)]
    per_frame = {f.image_id: _random_counts(r) for f in frames}
    table = breakdown(per_frame, frames, "illumination")
    assert list(table) == ["daytime", "nighttime"]
    for value, rep in table.items():
        rows = [per_frame[f.image_id] for f in frames if f.attributes["illumination"] == value]
        pooled = aggregate(rows, 9)
        assert rep.frame_count == len(rows) == 3
        assert rep.overall_mpckh == sum(pooled.correct) / sum(pooled.annotated)
        assert rep.belt == confusion_rates(pooled.belt)
    text = format_breakdown(table, "illumination")
    assert len(text.splitlines()) == 3


def test_breakdown_single_value_row_equals_overall():
    frames = [synthetic_frame(s) for s in (0, 2, 4)]
    r = np.random.default_rng(1)
    per_frame = {f.image_id: _random_counts(r) for f in frames}
    table = breakdown(per_frame, frames, "illumination")
    overall = MetricReport.from_counts(aggregate(per_frame.values(), 9))
    assert list(table) == ["daytime"]
    assert table["daytime"].to_dict() == overall.to_dict()


def test_breakdown_empty_and_unknown_key():
    assert breakdown({}, [], "illumination") == {}
    frames = [synthetic_frame(0)]
    with pytest.raises(ValueError):
        breakdown({frames[0].image_id: FrameCounts.empty(9)}, frames, "weather")


def test_report_text_and_absent_values():
    rep = MetricReport.from_counts(FrameCounts.empty(9))
    assert rep.overall_mpckh is None and rep.curve_distance is None
    text = rep.format_text()
    assert "n/a" in text and "absent" in text
