import numpy as np
import pytest

from mvweak.errors import ShapeError
from mvweak.metrics import (
    average_precision,
    average_precision_reference,
    evaluate_frames,
    f1_score,
    precision_recall_curve,
)


def test_perfect_scores():
    labels = np.array([[1, 0], [0, 1], [1, 1], [0, 0]])
    report = evaluate_frames(labels.astype(float), labels)
    assert (report.accuracy, report.mean_ap, report.macro_f1) == (1.0, 1.0, 1.0)


def test_inverted_scores():
    labels = np.array([[1, 0], [0, 1], [1, 1]])
    assert evaluate_frames(1.0 - labels, labels).accuracy == 0.0


def test_threshold_is_inclusive():
    report = evaluate_frames(np.array([[0.5], [0.49]]), np.array([[1], [0]]))
    assert report.accuracy == 1.0


def test_ap_matches_reference_on_random_cases():
    rng = np.random.default_rng(0)
    for i in range(100):
        scores, labels = rng.random((20, 3)), rng.integers(0, 2, (20, 3))
        if i % 2:
            scores = np.round(scores, 1)
        for c in range(3):
            ref = average_precision_reference(scores[:, c], labels[:, c])
            fast = average_precision(scores[:, c], labels[:, c])
            assert (ref is None and fast is None) or abs(fast - ref) <= 1e-9


def test_ap_hand_example():
    # ranks: 0.9 (+), 0.8 (-), 0.7 (+) -> precisions 1, 2/3 at recalls 0.5, 1
    assert average_precision([0.9, 0.8, 0.7], [1, 0, 1]) == pytest.approx(0.5 * 1 + 0.5 * 2 / 3)


def test_tied_scores_form_one_threshold():
    p, r, thr = precision_recall_curve([0.5, 0.5, 0.2], [1, 0, 1])
    assert thr.tolist() == [0.5, 0.2]
    assert p.tolist() == [0.5, 2 / 3] and r.tolist() == [0.5, 1.0]


def test_class_without_positives_is_flagged():
    labels = np.array([[1, 0], [0, 0]])
    report = evaluate_frames(np.array([[0.9, 0.1], [0.2, 0.3]]), labels, ["a", "b"])
    assert report.undefined_ap == ["b"]
    assert report.mean_ap == 1.0
    assert report.per_class[1]["ap"] is None
    assert report.undefined_f1 == ["b"] and report.macro_f1 == 1.0


def test_f1_cases():
    assert f1_score([1, 1, 0], [1, 0, 0]) == pytest.approx(2 / 3)
    assert f1_score([0, 0], [0, 0]) is None


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        evaluate_frames(np.zeros((3, 2)), np.zeros((3, 1)))


def test_values_in_unit_interval():
    rng = np.random.default_rng(1)
    report = evaluate_frames(rng.random((2, 8, 3)), rng.integers(0, 2, (2, 8, 3)))
    for v in (report.accuracy, report.mean_ap, report.macro_f1):
        assert 0.0 <= v <= 1.0
    assert "accuracy" in report.summary()
