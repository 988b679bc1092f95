"""Synthetic multi-view "office" scenes with exact ground truth.

Each action class is a colored square moving near a class-specific spot of a
shared 2-D room. Every camera sees the room through its own affine placement
(a dihedral turn/flip, scale and offset) plus independent pixel noise, so the
views are correlated the way fixed office cameras are.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from mvweak.core_data import (
    DatasetIndex,
    IndexEntry,
    MultiViewSequence,
    derive_action_bag,
    write_sequence,
)
from mvweak.detect_featurize import Box, DetectionSet, write_detections
from mvweak.errors import ConfigError, DataError

_BASE_COLORS = [
    (0.95, 0.10, 0.10),
    (0.10, 0.85, 0.15),
    (0.15, 0.25, 0.95),
    (0.95, 0.90, 0.10),
    (0.90, 0.15, 0.90),
    (0.10, 0.90, 0.90),
]


def default_colors(num_classes):
    colors = list(_BASE_COLORS[:num_classes])
    extra = num_classes - len(colors)
    for i in range(extra):
        hue = (i + 0.5) / extra
        colors.append(colorsys.hsv_to_rgb(hue, 0.6, 0.6))
    return colors


def default_view_params(num_views):
    """Dihedral placements cycling through turns and flips."""
    return [{"turns": s % 4, "flip": bool((s // 4) % 2), "scale": 1.0} for s in range(num_views)]


@dataclass
class ScenarioConfig:
    num_views: int = 2
    num_frames: int = 16
    image_size: int = 32
    num_classes: int = 3
    block_size: int = 6
    event_count: tuple[int, int] = (0, 3)
    event_length: tuple[int, int] = (3, 10)
    motion_speed: float = 0.03
    noise_std: float = 0.03
    background: float = 0.45
    fps: float = 2.5
    class_names: list[str] | None = None
    class_colors: list[tuple[float, float, float]] | None = None
    class_anchors: list[tuple[float, float]] | None = None
    view_params: list[dict] | None = None
    fixed_events: list[tuple[int, int, int]] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.num_views < 1 or self.num_frames < 1 or self.num_classes < 1:
            raise ConfigError("need num_views, num_frames, num_classes >= 1")
        lo, hi = self.event_count
        if not 0 <= lo <= hi:
            raise ConfigError(f"bad event_count range {self.event_count}")
        lo, hi = self.event_length
        if not 1 <= lo <= hi:
            raise ConfigError(f"bad event_length range {self.event_length}")
        if self.class_names is None:
            self.class_names = [f"action_{c}" for c in range(self.num_classes)]
        if self.class_colors is None:
            self.class_colors = default_colors(self.num_classes)
        if self.class_anchors is None:
            rng = np.random.default_rng(10_000 + self.num_classes)
            self.class_anchors = [tuple(float(v) for v in rng.uniform(0.15, 0.85, 2)) for _ in range(self.num_classes)]
        if self.view_params is None:
            self.view_params = default_view_params(self.num_views)
        for name, seq in (("class_names", self.class_names), ("class_colors", self.class_colors), ("class_anchors", self.class_anchors)):
            if len(seq) != self.num_classes:
                raise ConfigError(f"{name} needs {self.num_classes} entries, got {len(seq)}")
        if len(self.view_params) != self.num_views:
            raise ConfigError(f"view_params needs {self.num_views} entries")
        for c, start, end in self.fixed_events or []:
            if not (0 <= c < self.num_classes and 0 <= start < end <= self.num_frames):
                raise ConfigError(f"fixed event {(c, start, end)} outside [0, {self.num_frames})")


@dataclass
class Event:
    cls: int
    start: int
    end: int
    origin: tuple[float, float]
    conf: float


@dataclass
class SceneGroundTruth:
    frame_labels: np.ndarray
    boxes: DetectionSet
    events: list[Event] = field(default_factory=list)

    @property
    def action_bag(self):
        return derive_action_bag(self.frame_labels).bag


def _room_to_view(u, v, params):
    for _ in range(params.get("turns", 0) % 4):
        u, v = 1.0 - v, u
    if params.get("flip", False):
        u = 1.0 - u
    scale = params.get("scale", 1.0)
    ox, oy = params.get("offset", (0.0, 0.0))
    return 0.5 + scale * (u - 0.5) + ox, 0.5 + scale * (v - 0.5) + oy


def _reflect(x):
    x = np.mod(x, 2.0)
    return 2.0 - x if x > 1.0 else x


def _position(event, t, cfg):
    angle = 2.0 * np.pi * event.cls / cfg.num_classes
    step = t - event.start
    u = _reflect(event.origin[0] + cfg.motion_speed * step * np.cos(angle))
    v = _reflect(event.origin[1] + cfg.motion_speed * step * np.sin(angle))
    return u, v


def _sample_events(cfg, rng):
    if cfg.fixed_events is not None:
        return [Event(c, s, e, cfg.class_anchors[c], 1.0) for c, s, e in cfg.fixed_events]
    lo, hi = cfg.event_count
    n = min(int(rng.integers(lo, hi + 1)), cfg.num_classes)
    classes = rng.choice(cfg.num_classes, size=n, replace=False)
    events = []
    for c in classes:
        length = int(rng.integers(cfg.event_length[0], min(cfg.event_length[1], cfg.num_frames) + 1))
        length = min(length, cfg.num_frames)
        start = int(rng.integers(0, cfg.num_frames - length + 1))
        anchor = np.asarray(cfg.class_anchors[c])
        origin = np.clip(anchor + rng.uniform(-0.08, 0.08, 2), 0.0, 1.0)
        events.append(Event(int(c), start, start + length, (float(origin[0]), float(origin[1])), float(rng.uniform(0.5, 1.0))))
    return events


def generate_scene(cfg, seed=None):
    """Render one sequence; returns ``(MultiViewSequence, SceneGroundTruth)``."""
    size, block = cfg.image_size, cfg.block_size
    if size < 2 * block:
        raise ConfigError(f"image_size {size} too small for block_size {block}")
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    events = _sample_events(cfg, rng)

    S, T, C = cfg.num_views, cfg.num_frames, cfg.num_classes
    labels = np.zeros((T, C), dtype=np.uint8)
    for ev in events:
        labels[ev.start:ev.end, ev.cls] = 1

    colors = np.asarray(cfg.class_colors, dtype=np.float32)
    views = np.empty((S, T, size, size, 3), dtype=np.float32)
    boxes = [[[] for _ in range(T)] for _ in range(S)]
    free = size - block
    for s in range(S):
        params = cfg.view_params[s]
        shade = cfg.background + 0.08 * (s % 3 - 1)
        for t in range(T):
            frame = np.full((size, size, 3), shade, dtype=np.float32)
            for ev in events:
                if not ev.start <= t < ev.end:
                    continue
                x, y = _room_to_view(*_position(ev, t, cfg), params)
                x0 = int(round(np.clip(x, 0.0, 1.0) * free))
                y0 = int(round(np.clip(y, 0.0, 1.0) * free))
                frame[y0:y0 + block, x0:x0 + block] = colors[ev.cls]
                boxes[s][t].append(Box(x0, y0, x0 + block, y0 + block, ev.conf))
            views[s, t] = frame
        views[s] += rng.normal(0.0, cfg.noise_std, views[s].shape).astype(np.float32)
    np.clip(views, 0.0, 1.0, out=views)

    seq = MultiViewSequence(views, sequence_id=f"scene_{seed}", fps=cfg.fps, class_names=list(cfg.class_names))
    return seq, SceneGroundTruth(labels, DetectionSet(boxes), events)


def sequence_seed(seed, i, pool=0):
    """Seed of sequence ``i``; ``pool`` 1 is the weak-label-only pool."""
    key = [seed, i] if pool == 0 else [seed, i, pool]
    return int(np.random.SeedSequence(key).generate_state(1)[0])


def build_corpus(cfg, n_sequences, seed, out_dir, n_weak=0):
    """Write ``n_sequences`` frame-labelled scenes, ``n_weak`` scenes that keep
    only their action bag, oracle detections for all, and ``index.json``."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create {out_dir}: {exc}") from None
    jobs = [(f"seq_{i:05d}", sequence_seed(seed, i), True) for i in range(n_sequences)]
    jobs += [(f"weak_{i:05d}", sequence_seed(seed, i, pool=1), False) for i in range(n_weak)]
    entries = []
    for seq_id, scene_seed, labelled in jobs:
        seq, truth = generate_scene(cfg, scene_seed)
        seq.sequence_id = seq_id
        path = out_dir / seq_id
        try:
            write_sequence(path, seq, truth.action_bag, truth.frame_labels if labelled else None)
            write_detections(path / "detections.jsonl", truth.boxes)
        except OSError as exc:
            raise DataError(f"writing {path}: {exc}") from None
        entries.append(IndexEntry(seq_id, seq_id, labelled))
    index = DatasetIndex(entries, {}, out_dir)
    index.save()
    return index
