import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selfimpute.core import AnomalyInterval
from selfimpute.metrics import (
    ConfusionCounts,
    auprc,
    auroc,
    confusion,
    evaluate,
    match_intervals,
    point_adjust,
    point_prf,
    prf_from_counts,
)

from oracles import enumerated_auprc, pairwise_auroc


def flags_for(tp, fp, fn, tn):
    pred = [1] * tp + [1] * fp + [0] * fn + [0] * tn
    truth = [1] * tp + [0] * fp + [1] * fn + [0] * tn
    return np.array(pred), np.array(truth)


@pytest.mark.parametrize("counts, expected", [
    ((2, 1, 1, 5), (2 / 3, 2 / 3, 2 / 3)),
    ((4, 0, 0, 3), (1.0, 1.0, 1.0)),
    ((0, 0, 3, 4), (0.0, 0.0, 0.0)),
    ((3, 1, 0, 0), (0.75, 1.0, 6 / 7)),
    ((1, 3, 1, 5), (0.25, 0.5, 1 / 3)),
    ((0, 2, 0, 5), (0.0, 0.0, 0.0)),
])
def test_prf_matches_hand_counts(counts, expected):
    pred, truth = flags_for(*counts)
    assert confusion(pred, truth) == ConfusionCounts(*counts)
    assert point_prf(pred, truth) == pytest.approx(expected, abs=1e-15)


def test_length_mismatch():
    with pytest.raises(ValueError, match="length mismatch"):
        point_prf([1, 0], [1, 0, 0])


def test_confusion_total_is_length():
    rng = np.random.default_rng(0)
    c = confusion(rng.random(37) < 0.3, rng.random(37) < 0.2)
    assert c.total == 37


@pytest.mark.parametrize("scores, labels, expected", [
    ([0.9, 0.8, 0.1], [1, 0, 0], 1.0),
    ([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0], 0.5),
    ([0.1, 0.8, 0.9], [1, 0, 0], 0.0),
])
def test_auroc_examples(scores, labels, expected):
    assert auroc(scores, labels) == expected


def test_auprc_examples():
    assert auprc([0.9, 0.2, 0.1], [1, 0, 0]) == 1.0
    assert auprc([0.3] * 8, [1, 0, 0, 1, 0, 0, 1, 0]) == pytest.approx(3 / 8)


def test_degenerate_labels():
    with pytest.raises(ValueError, match="degenerate labels"):
        auroc([0.1, 0.2], [1, 1])
    with pytest.raises(ValueError, match="no positive labels"):
        auprc([0.1, 0.2], [0, 0])


def random_case(seed, n=50, ties=False):
    rng = np.random.default_rng(seed)
    scores = rng.integers(0, 6, n).astype(float) if ties else rng.random(n)
    labels = rng.random(n) < 0.3
    labels[0], labels[1] = True, False
    return scores, labels


@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize("ties", [False, True])
def test_areas_match_brute_force(seed, ties):
    scores, labels = random_case(seed, ties=ties)
    assert abs(auroc(scores, labels) - pairwise_auroc(scores, labels)) < 1e-12
    assert abs(auprc(scores, labels) - enumerated_auprc(scores, labels)) < 1e-12


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6))
def test_auroc_invariances(seed):
    scores, labels = random_case(seed, n=30, ties=seed % 2 == 0)
    base = auroc(scores, labels)
    assert auroc(np.exp(3 * scores) + 1, labels) == pytest.approx(base, abs=1e-12)
    assert auroc(scores, ~labels) == pytest.approx(1 - base, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.booleans(), min_size=1, max_size=40), st.integers(0, 10**6))
def test_f1_bounded_by_twice_min_of_p_and_r(truth, seed):
    pred = np.random.default_rng(seed).random(len(truth)) < 0.5
    p, r, f1 = point_prf(pred, truth)
    assert 0 <= f1 <= min(2 * p, 2 * r) + 1e-15
    assert f1 <= max(p, r) + 1e-15


def test_point_adjust_fills_touched_segments_only():
    truth = np.array([0, 1, 1, 1, 0, 1, 1, 0])
    pred = np.array([0, 0, 1, 0, 0, 0, 0, 1])
    np.testing.assert_array_equal(point_adjust(pred, truth), [0, 1, 1, 1, 0, 0, 0, 1])
    assert point_prf(pred, truth, adjust=True) == pytest.approx((0.75, 0.6, 2 * 0.45 / 1.35))


def test_prf_from_counts_zero_denominators():
    assert prf_from_counts(ConfusionCounts(0, 0, 0, 10)) == (0.0, 0.0, 0.0)


def test_interval_matching():
    truth = [AnomalyInterval(10, 20), AnomalyInterval(40, 50)]
    pred = [AnomalyInterval(12, 21), AnomalyInterval(60, 61)]
    m = match_intervals(pred, truth)
    assert m.recall == 0.5 and m.precision == 0.5
    assert m.start_errors == [2] and m.end_errors == [1]
    assert m.max_boundary_error == 2
    assert match_intervals([], truth).recall == 0.0
    assert match_intervals(pred, []).precision == 0.0


def test_interval_matching_picks_largest_overlap():
    m = match_intervals([AnomalyInterval(0, 11), AnomalyInterval(12, 40)], [AnomalyInterval(10, 30)])
    assert m.start_errors == [2] and m.end_errors == [10]


def test_report_json_has_required_fields():
    scores, labels = random_case(3)
    pred = scores > 0.7
    report = evaluate(pred, labels, scores, point_adjusted=True)
    data = json.loads(report.to_json())
    for key in ("precision", "recall", "f1", "auroc", "auprc", "counts", "adjusted"):
        assert key in data
    assert set(data["counts"]) == {"TP", "FP", "FN", "TN"}
    assert data["auroc"] == auroc(scores, labels)


def test_report_skips_areas_for_single_class_truth():
    report = evaluate([0, 1], [0, 0], scores=[0.1, 0.9])
    assert report.auroc is None and report.auprc is None
