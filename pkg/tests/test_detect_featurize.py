import json

import numpy as np
import pytest

from mvweak.core_data import MultiViewSequence
from mvweak.detect_featurize import (
    Box,
    DetectionSet,
    GridSpec,
    NullDetector,
    OracleDetector,
    compute_pd_vector,
    compute_sl_vector,
    detect_persons,
    grid_iou,
    read_detections,
    write_detections,
)
from mvweak.errors import DataError, ShapeError, ValidationError


def rect_iou(a, b):
    """Brute force: count unit-grid samples on a fine lattice is too slow; use interval arithmetic."""
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union


def brute_force_cell(box, grid):
    best, best_iou = 0, -1.0
    for n, cell in enumerate(grid.cells()):
        v = rect_iou(box, cell)
        if v > best_iou:
            best, best_iou = n, v
    return best


def random_detections(rng, S, T, size=64.0):
    boxes = []
    for _ in range(S):
        view = []
        for _ in range(T):
            frame = []
            for _ in range(int(rng.integers(0, 4))):
                x1, y1 = rng.uniform(0, size - 4, 2)
                w, h = rng.uniform(2, size / 2, 2)
                frame.append((x1, y1, min(x1 + w, size), min(y1 + h, size), float(rng.random())))
            view.append(frame)
        boxes.append(view)
    return DetectionSet(boxes)


def test_iou_identity_and_disjoint():
    assert grid_iou((0, 0, 32, 32), (0, 0, 32, 32)) == 1.0
    assert grid_iou((40, 40, 50, 50), (0, 0, 32, 32)) == 0.0


def test_iou_offset_square():
    assert grid_iou((16, 16, 48, 48), (0, 0, 32, 32)) == pytest.approx(256 / 1792)


def test_iou_degenerate_box():
    with pytest.raises(ValidationError):
        grid_iou((5, 5, 5, 10), (0, 0, 32, 32))


def test_pd_cases():
    assert compute_pd_vector(DetectionSet.empty(2, 4)).tolist() == [[0] * 4, [0] * 4]
    full = DetectionSet([[[(0, 0, 4, 4, 1.0)] for _ in range(3)]])
    assert compute_pd_vector(full).tolist() == [[1, 1, 1]]
    sparse = DetectionSet([[[(0, 0, 4, 4, 1.0)] if t in (0, 3) else [] for t in range(5)]])
    assert compute_pd_vector(sparse).tolist() == [[1, 0, 0, 1, 0]]


def test_sl_no_detection_row_is_zero():
    sl = compute_sl_vector(DetectionSet.empty(1, 2), GridSpec(2, 2, 64, 64))
    assert sl.shape == (1, 2, 4) and not sl.any()


def test_sl_box_covering_a_cell():
    grid = GridSpec(2, 2, 64, 64)
    for n, cell in enumerate(grid.cells()):
        sl = compute_sl_vector(DetectionSet([[[(*cell, 0.8)]]]), grid)
        assert sl[0, 0].tolist() == [1.0 if i == n else 0.0 for i in range(4)]


def test_sl_picks_highest_confidence_box():
    grid = GridSpec(2, 2, 64, 64)
    boxes = [(2, 2, 20, 20, 0.3), (40, 40, 60, 60, 0.9)]
    sl = compute_sl_vector(DetectionSet([[boxes]]), grid)
    assert int(sl[0, 0].argmax()) == brute_force_cell(boxes[1], grid) == 3


def test_sl_tie_breaks_on_area_then_order():
    grid = GridSpec(2, 2, 64, 64)
    small, big = (2, 2, 10, 10, 0.5), (36, 36, 62, 62, 0.5)
    assert compute_sl_vector(DetectionSet([[[small, big]]]), grid)[0, 0].argmax() == 3
    a, b = (2, 2, 10, 10, 0.5), (40, 40, 48, 48, 0.5)
    assert compute_sl_vector(DetectionSet([[[a, b]]]), grid)[0, 0].argmax() == 0


def test_sl_width_mismatch():
    with pytest.raises(ShapeError):
        compute_sl_vector(DetectionSet.empty(1, 1), GridSpec(4, 4), expected_cells=9)


def test_sl_contracts_random():
    rng = np.random.default_rng(0)
    grid = GridSpec(4, 4, 64, 64)
    for _ in range(20):
        dets = random_detections(rng, 2, 6)
        sl, pd = compute_sl_vector(dets, grid), compute_pd_vector(dets)
        assert set(np.unique(sl.sum(-1))) <= {0.0, 1.0}
        assert np.array_equal(pd == 0, sl.sum(-1) == 0)
        for s in range(2):
            for t in range(6):
                if dets[s, t]:
                    best = max(dets[s, t], key=lambda b: (b.conf, b.area))
                    assert sl[s, t].argmax() == brute_force_cell(best, grid)


def test_translation_inside_cell_keeps_cell():
    grid = GridSpec(4, 4, 64, 64)
    rng = np.random.default_rng(5)
    for _ in range(50):
        n = int(rng.integers(16))
        cx1, cy1, cx2, cy2 = grid.cells()[n]
        w, h = rng.uniform(1, 15, 2)
        for _ in range(3):
            x, y = rng.uniform(cx1, cx2 - w), rng.uniform(cy1, cy2 - h)
            sl = compute_sl_vector(DetectionSet([[[(x, y, x + w, y + h, 1.0)]]]), grid)
            assert sl[0, 0].argmax() == n


def test_null_and_oracle_detectors():
    seq = MultiViewSequence(np.zeros((2, 3, 8, 8, 3)))
    assert detect_persons(seq, NullDetector()) == DetectionSet.empty(2, 3)
    truth = DetectionSet([[[(0, 0, 2, 2, 1.0)], [], []], [[], [(1, 1, 3, 3, 0.5)], []]])
    assert detect_persons(seq, OracleDetector(truth)) == truth


def test_detector_failure_reports_location():
    class Broken:
        def detect(self, image, *, view, frame):
            if (view, frame) == (1, 2):
                raise RuntimeError("boom")
            return []

    with pytest.raises(RuntimeError, match="view 1, frame 2"):
        detect_persons(MultiViewSequence(np.zeros((2, 3, 4, 4, 3))), Broken())


def test_detections_jsonl_roundtrip(tmp_path):
    dets = DetectionSet([[[(0, 0, 4, 5, 0.5)], []], [[], [(1, 2, 3, 4, 0.25), (5, 5, 8, 8, 1.0)]]])
    write_detections(tmp_path / "d.jsonl", dets)
    assert read_detections(tmp_path / "d.jsonl", 2, 2) == dets
    first = json.loads((tmp_path / "d.jsonl").read_text().splitlines()[0])
    assert first == {"view": 0, "frame": 0, "boxes": [[0.0, 0.0, 4.0, 5.0, 0.5]]}


def test_detections_jsonl_malformed_line(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text('{"view": 0, "frame": 0, "boxes": []}\n{"view": 0, "frame": 1, "boxes": [[1, 2]]}\n')
    with pytest.raises(DataError, match=":2:"):
        read_detections(path, 1, 2)


def test_box_clamp():
    assert Box(-3, -3, 10, 70).clamp(64, 64) == Box(0, 0, 10, 64)
