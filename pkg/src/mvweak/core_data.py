"""Domain types, the action-bag rule, the MVT1 tensor format and dataset layout.

A sequence lives in its own directory::

    <seq>/view_0.mvt ... view_{S-1}.mvt   T x H x W x 3 float32 in [0, 1]
    <seq>/meta.json                       ids, fps, class names, labels, bag
    <seq>/detections.jsonl                optional, see detect_featurize
    <seq>/pd.mvt, <seq>/sl.mvt            optional, written by featurize

A corpus directory holds sequence directories plus ``index.json``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from mvweak.errors import DataError, FormatError, ShapeError, ValidationError

MVT_MAGIC = b"MVT1"
MVT_MAX_RANK = 5
INDEX_FILE = "index.json"
META_FILE = "meta.json"


def _check_binary(arr, what):
    arr = np.asarray(arr)
    bad = np.argwhere((arr != 0) & (arr != 1))
    if bad.size:
        where = tuple(int(i) for i in bad[0])
        raise ValidationError(f"{what} must be binary; entry {where} is {arr[where]!r}")
    return arr.astype(np.uint8)


@dataclass
class MultiViewSequence:
    """Synchronized S-view, T-frame video block.

    ``views`` is stored as one ``(S, T, H, W, 3)`` float32 array.
    """

    views: np.ndarray
    sequence_id: str = "seq"
    fps: float = 2.5
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if isinstance(self.views, (list, tuple)):
            shapes = {np.shape(v) for v in self.views}
            if len(shapes) > 1:
                raise ShapeError(f"views disagree in shape: {sorted(shapes)}")
            if not self.views:
                raise ShapeError("a sequence needs at least one view")
            self.views = np.stack([np.asarray(v) for v in self.views])
        views = np.asarray(self.views, dtype=np.float32)
        if views.ndim != 5 or views.shape[-1] != 3:
            raise ShapeError(f"views must be S x T x H x W x 3, got {views.shape}")
        if views.shape[0] < 1 or views.shape[1] < 1:
            raise ShapeError("need S >= 1 and T >= 1")
        if views.size and (views.min() < 0.0 or views.max() > 1.0):
            raise ValidationError("pixel values must lie in [0, 1]")
        self.views = views

    @property
    def num_views(self):
        return self.views.shape[0]

    @property
    def num_frames(self):
        return self.views.shape[1]

    @property
    def image_size(self):
        return self.views.shape[2], self.views.shape[3]


@dataclass
class FrameLabelMatrix:
    """T x C binary per-frame labels."""

    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise ShapeError(f"frame labels must be T x C, got {labels.shape}")
        self.labels = _check_binary(labels, "frame labels")


@dataclass
class ActionBag:
    """C-dim binary sequence-level label."""

    bag: np.ndarray

    def __post_init__(self):
        bag = np.asarray(self.bag)
        if bag.ndim != 1:
            raise ShapeError(f"action bag must be 1-D, got {bag.shape}")
        self.bag = _check_binary(bag, "action bag")


def derive_action_bag(labels):
    """Collapse frame labels to a bag: class c is present iff any frame has it.

    Accepts a :class:`FrameLabelMatrix` or anything array-like of shape T x C.
    """
    if not isinstance(labels, FrameLabelMatrix):
        labels = FrameLabelMatrix(labels)
    return ActionBag(labels.labels.any(axis=0).astype(np.uint8))


# -- MVT1 tensors -----------------------------------------------------------


def encode_tensor(tensor):
    arr = np.asarray(tensor, dtype=np.float32)
    if arr.ndim > MVT_MAX_RANK:
        raise ShapeError(f"MVT1 supports rank <= {MVT_MAX_RANK}, got {arr.ndim}")
    if any(n >= 2**32 for n in arr.shape):
        raise ShapeError(f"dimension too large for MVT1: {arr.shape}")
    header = MVT_MAGIC + struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def decode_tensor(buf):
    buf = bytes(buf)
    if len(buf) < 5:
        raise FormatError("truncated header", offset=len(buf))
    if buf[:4] != MVT_MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}", offset=0)
    rank = buf[4]
    if rank > MVT_MAX_RANK:
        raise FormatError(f"rank {rank} exceeds {MVT_MAX_RANK}", offset=4)
    dims_end = 5 + 4 * rank
    if len(buf) < dims_end:
        raise FormatError("truncated dimension list", offset=len(buf))
    shape = struct.unpack(f"<{rank}I", buf[5:dims_end])
    count = 1
    for i, n in enumerate(shape):
        count *= n
        if count * 4 >= 2**63:
            raise FormatError(f"dimension {i} ({n}) overflows the addressable size", offset=5 + 4 * i)
    expected = dims_end + 4 * count
    if len(buf) < expected:
        raise FormatError(f"truncated payload, expected {4 * count} bytes", offset=len(buf))
    if len(buf) > expected:
        raise FormatError(f"{len(buf) - expected} trailing bytes after payload", offset=expected)
    return np.frombuffer(buf, dtype="<f4", count=count, offset=dims_end).reshape(shape).astype(np.float32)


def write_tensor(path, tensor):
    Path(path).write_bytes(encode_tensor(tensor))


def read_tensor(path):
    return decode_tensor(Path(path).read_bytes())


# -- sequences on disk ------------------------------------------------------


@dataclass
class SequenceRecord:
    """A sequence together with its labels as stored in meta.json."""

    sequence: MultiViewSequence
    action_bag: ActionBag
    frame_labels: FrameLabelMatrix | None = None


def write_sequence(directory, sequence, action_bag, frame_labels=None):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for s in range(sequence.num_views):
        write_tensor(directory / f"view_{s}.mvt", sequence.views[s])
    meta = {
        "sequence_id": sequence.sequence_id,
        "fps": float(sequence.fps),
        "class_names": list(sequence.class_names),
        "action_bag": [int(v) for v in ActionBag(np.asarray(getattr(action_bag, "bag", action_bag))).bag],
        "num_views": int(sequence.num_views),
        "num_frames": int(sequence.num_frames),
    }
    if frame_labels is not None:
        labels = FrameLabelMatrix(np.asarray(getattr(frame_labels, "labels", frame_labels))).labels
        meta["frame_labels"] = labels.astype(int).tolist()
    (directory / META_FILE).write_text(json.dumps(meta, indent=1))


def read_meta(directory):
    path = Path(directory) / META_FILE
    try:
        meta = json.loads(path.read_text())
    except FileNotFoundError:
        raise DataError(f"missing {path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: {exc}") from None
    for key in ("sequence_id", "action_bag", "num_views", "num_frames"):
        if key not in meta:
            raise DataError(f"{path}: missing key {key!r}")
    return meta


def read_sequence(directory):
    directory = Path(directory)
    meta = read_meta(directory)
    try:
        views = [read_tensor(directory / f"view_{s}.mvt") for s in range(meta["num_views"])]
    except FileNotFoundError as exc:
        raise DataError(f"missing view tensor: {exc.filename}") from None
    seq = MultiViewSequence(
        views,
        sequence_id=meta["sequence_id"],
        fps=meta.get("fps", 2.5),
        class_names=meta.get("class_names", []),
    )
    if seq.num_frames != meta["num_frames"]:
        raise DataError(f"{directory}: meta says {meta['num_frames']} frames, views have {seq.num_frames}")
    labels = meta.get("frame_labels")
    return SequenceRecord(
        seq,
        ActionBag(np.asarray(meta["action_bag"])),
        FrameLabelMatrix(np.asarray(labels)) if labels is not None else None,
    )


# -- dataset index ----------------------------------------------------------


@dataclass(frozen=True)
class IndexEntry:
    sequence_id: str
    path: str
    has_frame_labels: bool = True


@dataclass
class DatasetIndex:
    """Sequence directories of a corpus plus an optional train/test split.

    Entry paths are relative to ``root``.
    """

    entries: list[IndexEntry]
    splits: dict[str, str] = field(default_factory=dict)
    root: Path = Path(".")

    def __post_init__(self):
        self.root = Path(self.root)
        ids = [e.sequence_id for e in self.entries]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise ValidationError(f"duplicate sequence ids: {dup}")
        unknown = set(self.splits) - set(ids)
        if unknown:
            raise ValidationError(f"split names unknown sequences: {sorted(unknown)}")
        bad = {v for v in self.splits.values()} - {"train", "test", "weak"}
        if bad:
            raise ValidationError(f"split values must be 'train', 'test' or 'weak', got {sorted(bad)}")

    def __len__(self):
        return len(self.entries)

    def directory(self, entry):
        return self.root / entry.path

    def subset(self, split):
        return [e for e in self.entries if self.splits.get(e.sequence_id) == split]

    def check_paths(self):
        for e in self.entries:
            if not self.directory(e).is_dir():
                raise DataError(f"sequence directory missing: {self.directory(e)}")

    def to_json(self):
        return {
            "entries": [
                {"sequence_id": e.sequence_id, "path": e.path, "has_frame_labels": e.has_frame_labels}
                for e in self.entries
            ],
            "splits": dict(sorted(self.splits.items())),
        }

    def save(self, root=None):
        root = Path(root) if root is not None else self.root
        (root / INDEX_FILE).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def load(cls, root):
        root = Path(root)
        path = root / INDEX_FILE
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError:
            raise DataError(f"missing {path}") from None
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: {exc}") from None
        entries = [IndexEntry(e["sequence_id"], e["path"], bool(e.get("has_frame_labels", True))) for e in raw["entries"]]
        index = cls(entries, raw.get("splits", {}), root)
        index.check_paths()
        return index


def split_dataset(index, train_fraction=0.5, seed=0):
    """Assign whole frame-labelled sequences to train/test; deterministic in ``seed``.

    Sequences without frame labels (a weak-label-only pool) go to split
    ``"weak"`` and take no part in the train/test draw.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    ids = sorted(e.sequence_id for e in index.entries if e.has_frame_labels)
    n = len(ids)
    if n < 2:
        raise ValueError("need at least two frame-labelled sequences to split")
    n_train = min(max(int(round(train_fraction * n)), 1), n - 1)
    order = np.random.default_rng(seed).permutation(n)
    train = {ids[i] for i in order[:n_train]}
    splits = {i: ("train" if i in train else "test") for i in ids}
    splits.update({e.sequence_id: "weak" for e in index.entries if not e.has_frame_labels})
    return DatasetIndex(list(index.entries), splits, index.root)
