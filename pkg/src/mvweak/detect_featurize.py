"""Person detections to PD (presence) and SL (grid location) input vectors."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Protocol

import numpy as np

from mvweak.errors import DataError, ShapeError, ValidationError


class Box(NamedTuple):
    x1: float
    y1: float
    x2: float
    y2: float
    conf: float = 1.0

    @property
    def area(self):
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def clamp(self, width, height):
        return Box(
            min(max(self.x1, 0.0), width),
            min(max(self.y1, 0.0), height),
            min(max(self.x2, 0.0), width),
            min(max(self.y2, 0.0), height),
            self.conf,
        )


def _validated(box):
    box = Box(*(float(v) for v in box))
    if not (box.x1 < box.x2 and box.y1 < box.y2):
        raise ValidationError(f"degenerate box {tuple(box)}")
    if not 0.0 <= box.conf <= 1.0:
        raise ValidationError(f"confidence {box.conf} outside [0, 1]")
    return box


class DetectionSet:
    """Boxes per (view, frame): ``dets[s][t]`` is a list of :class:`Box`."""

    def __init__(self, boxes):
        self.boxes = [[[_validated(b) for b in frame] for frame in view] for view in boxes]
        lengths = {len(view) for view in self.boxes}
        if len(lengths) > 1:
            raise ShapeError(f"views carry different frame counts: {sorted(lengths)}")

    @classmethod
    def empty(cls, num_views, num_frames):
        return cls([[[] for _ in range(num_frames)] for _ in range(num_views)])

    @property
    def num_views(self):
        return len(self.boxes)

    @property
    def num_frames(self):
        return len(self.boxes[0]) if self.boxes else 0

    def __getitem__(self, key):
        s, t = key
        return self.boxes[s][t]

    def __eq__(self, other):
        return isinstance(other, DetectionSet) and self.boxes == other.boxes

    def __repr__(self):
        n = sum(len(f) for v in self.boxes for f in v)
        return f"DetectionSet(S={self.num_views}, T={self.num_frames}, boxes={n})"


@dataclass(frozen=True)
class GridSpec:
    """``rows x cols`` non-overlapping cells tiling a ``width x height`` image."""

    rows: int = 4
    cols: int = 4
    width: float = 64.0
    height: float = 64.0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid needs at least one row and column")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")

    @property
    def num_cells(self):
        return self.rows * self.cols

    def cells(self):
        """Cells in row-major order as (x1, y1, x2, y2)."""
        xs = np.linspace(0.0, self.width, self.cols + 1)
        ys = np.linspace(0.0, self.height, self.rows + 1)
        return [(xs[j], ys[i], xs[j + 1], ys[i + 1]) for i in range(self.rows) for j in range(self.cols)]

    @classmethod
    def parse(cls, text, width, height):
        """Build from an ``"RxC"`` string such as ``"4x4"``."""
        try:
            rows, cols = (int(v) for v in text.lower().split("x"))
        except ValueError:
            raise ValueError(f"grid must look like RxC, got {text!r}") from None
        return cls(rows, cols, width, height)


class Detector(Protocol):
    def detect(self, image, *, view, frame):
        """Return a list of (x1, y1, x2, y2, conf) person boxes for one image."""


class NullDetector:
    def detect(self, image, *, view, frame):
        return []


class OracleDetector:
    """Replays known boxes, e.g. the synthetic generator's ground truth."""

    def __init__(self, detections):
        self.detections = detections

    def detect(self, image, *, view, frame):
        return list(self.detections[view, frame])


class DetectorFailure(RuntimeError):
    def __init__(self, view, frame, cause):
        super().__init__(f"detector failed on view {view}, frame {frame}: {cause}")
        self.view, self.frame = view, frame


def detect_persons(seq, detector):
    """Run ``detector`` on every frame of every view independently."""
    out = []
    for s in range(seq.num_views):
        frames = []
        for t in range(seq.num_frames):
            try:
                frames.append(list(detector.detect(seq.views[s, t], view=s, frame=t)))
            except Exception as exc:  # noqa: BLE001 - re-raised with location
                raise DetectorFailure(s, t, exc) from exc
        out.append(frames)
    return DetectionSet(out)


# -- detections.jsonl -------------------------------------------------------


def read_detections(path, num_views, num_frames):
    """Parse a detections.jsonl file; (view, frame) pairs not listed are empty."""
    boxes = [[[] for _ in range(num_frames)] for _ in range(num_views)]
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except FileNotFoundError:
        raise DataError(f"missing detections file {path}") from None
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            s, t = int(rec["view"]), int(rec["frame"])
            frame_boxes = [_validated(b) for b in rec["boxes"]]
            if any(len(b) != 5 for b in rec["boxes"]):
                raise ValueError("boxes must be [x1, y1, x2, y2, conf]")
        except (ValueError, KeyError, TypeError, ValidationError) as exc:
            raise DataError(f"{path}:{lineno}: malformed detection record: {exc}") from None
        if not (0 <= s < num_views and 0 <= t < num_frames):
            raise DataError(f"{path}:{lineno}: (view {s}, frame {t}) out of range")
        boxes[s][t].extend(frame_boxes)
    return DetectionSet(boxes)


def write_detections(path, dets):
    with open(path, "w") as fh:
        for s in range(dets.num_views):
            for t in range(dets.num_frames):
                rec = {"view": s, "frame": t, "boxes": [[float(v) for v in b] for b in dets[s, t]]}
                fh.write(json.dumps(rec) + "\n")


# -- vectors ----------------------------------------------------------------


def compute_pd_vector(dets):
    """S x T binary array: 1 where the frame has at least one box."""
    pd = np.zeros((dets.num_views, dets.num_frames), dtype=np.float32)
    for s in range(dets.num_views):
        for t in range(dets.num_frames):
            pd[s, t] = 1.0 if dets[s, t] else 0.0
    return pd


def grid_iou(box, cell):
    """Intersection over union of two axis-aligned rectangles."""
    bx1, by1, bx2, by2 = (float(v) for v in box[:4])
    cx1, cy1, cx2, cy2 = (float(v) for v in cell[:4])
    box_area = (bx2 - bx1) * (by2 - by1)
    cell_area = (cx2 - cx1) * (cy2 - cy1)
    if box_area <= 0 or cell_area <= 0:
        raise ValidationError(f"zero-area rectangle: box={tuple(box[:4])}, cell={tuple(cell[:4])}")
    iw = max(0.0, min(bx2, cx2) - max(bx1, cx1))
    ih = max(0.0, min(by2, cy2) - max(by1, cy1))
    inter = iw * ih
    return inter / (box_area + cell_area - inter)


def select_box(boxes):
    """Highest confidence, then largest area, then earliest in the list."""
    best = min(range(len(boxes)), key=lambda i: (-boxes[i].conf, -boxes[i].area, i))
    return boxes[best]


def _grids_per_view(grid, num_views):
    grids = [grid] * num_views if isinstance(grid, GridSpec) else list(grid)
    if len(grids) != num_views:
        raise ShapeError(f"need one GridSpec per view ({num_views}), got {len(grids)}")
    return grids


def compute_sl_vector(dets, grid, expected_cells=None):
    """S x T x N array; each row is one-hot at the max-IOU cell or all zero.

    ``grid`` is one :class:`GridSpec` shared by all views or a list with one
    per view. ``expected_cells`` (the model's N) is checked when given.
    """
    grids = _grids_per_view(grid, dets.num_views)
    n_cells = {g.num_cells for g in grids}
    if len(n_cells) != 1:
        raise ShapeError(f"per-view grids disagree on N: {sorted(n_cells)}")
    (n,) = n_cells
    if expected_cells is not None and n != expected_cells:
        raise ShapeError(f"grid has N={n} cells but the model expects {expected_cells}")
    sl = np.zeros((dets.num_views, dets.num_frames, n), dtype=np.float32)
    for s, g in enumerate(grids):
        cells = g.cells()
        for t in range(dets.num_frames):
            if not dets[s, t]:
                continue
            boxes = [b.clamp(g.width, g.height) for b in dets[s, t]]
            if any(b.area <= 0 for b in boxes):
                raise ValidationError(f"box outside the {g.width}x{g.height} image at view {s}, frame {t}")
            box = select_box(boxes)
            ious = [grid_iou(box, c) for c in cells]
            sl[s, t, int(np.argmax(ious))] = 1.0
    return sl


def featurize(dets, grid, expected_cells=None):
    """Return ``(pd, sl)`` for one sequence."""
    return compute_pd_vector(dets), compute_sl_vector(dets, grid, expected_cells)


def featurize_corpus(index, rows=4, cols=4, detections_dir=None, expected_cells=None):
    """Write ``pd.mvt`` (S x T) and ``sl.mvt`` (S x T x N) into every sequence directory.

    Detections come from each sequence's own ``detections.jsonl`` (the oracle
    output written by the generator) unless ``detections_dir`` is given, in
    which case ``<detections_dir>/<sequence_id>.jsonl`` is read.
    """
    from mvweak.core_data import read_meta, read_tensor, write_tensor

    for entry in index.entries:
        directory = index.directory(entry)
        meta = read_meta(directory)
        S, T = meta["num_views"], meta["num_frames"]
        h, w = read_tensor(directory / "view_0.mvt").shape[1:3]
        if detections_dir is None:
            path = directory / "detections.jsonl"
        else:
            path = Path(detections_dir) / f"{entry.sequence_id}.jsonl"
        dets = read_detections(path, S, T)
        grid = GridSpec(rows, cols, float(w), float(h))
        pd, sl = featurize(dets, grid, expected_cells)
        write_tensor(directory / "pd.mvt", pd)
        write_tensor(directory / "sl.mvt", sl)
