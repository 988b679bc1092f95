"""Frame-level metrics: accuracy, all-points interpolated AP / mAP, macro-F1."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from mvweak.errors import ShapeError

THRESHOLD = 0.5


def precision_recall_curve(scores, labels):
    """Precision and recall at every distinct score threshold, highest first.

    Tied scores are one threshold. Returns ``(precision, recall, thresholds)``.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    ends = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tp = np.cumsum(y)[ends]
    predicted = ends + 1
    n_pos = y.sum()
    precision = tp / predicted
    recall = tp / n_pos if n_pos else np.zeros_like(precision, dtype=float)
    return precision, recall, s[ends]


def average_precision(scores, labels):
    """Area under the interpolated PR curve (all points); ``None`` without positives."""
    labels = np.asarray(labels).ravel()
    if not labels.any():
        return None
    precision, recall, _ = precision_recall_curve(scores, labels)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.diff(np.r_[0.0, recall])
    return float(np.sum(steps * envelope))


def average_precision_reference(scores, labels):
    """Quadratic-time AP used as an independent check of :func:`average_precision`."""
    scores = [float(v) for v in np.ravel(scores)]
    labels = [bool(v) for v in np.ravel(labels)]
    n_pos = sum(labels)
    if n_pos == 0:
        return None
    points = []
    for thr in sorted(set(scores), reverse=True):
        tp = sum(1 for s, y in zip(scores, labels) if s >= thr and y)
        fp = sum(1 for s, y in zip(scores, labels) if s >= thr and not y)
        points.append((tp / n_pos, tp / (tp + fp)))
    ap, prev_recall = 0.0, 0.0
    for recall, _ in points:
        best = max(p for r, p in points if r >= recall)
        ap += (recall - prev_recall) * best
        prev_recall = recall
    return ap


def f1_score(pred, labels):
    pred, labels = np.asarray(pred, bool).ravel(), np.asarray(labels, bool).ravel()
    tp = np.sum(pred & labels)
    fp = np.sum(pred & ~labels)
    fn = np.sum(~pred & labels)
    if tp + fp + fn == 0:
        return None
    return float(2 * tp / (2 * tp + fp + fn))


@dataclass
class MetricsReport:
    task: str
    accuracy: float
    mean_ap: float | None
    macro_f1: float | None
    per_class: list[dict] = field(default_factory=list)
    undefined_ap: list[str] = field(default_factory=list)
    undefined_f1: list[str] = field(default_factory=list)

    def to_json(self):
        return asdict(self)

    def summary(self):
        fmt = lambda v: "n/a" if v is None else f"{v:.4f}"  # noqa: E731
        lines = [f"task={self.task} accuracy={self.accuracy:.4f} mAP={fmt(self.mean_ap)} macro-F1={fmt(self.macro_f1)}"]
        for row in self.per_class:
            lines.append(f"  {row['class']:>12s}  AP={fmt(row['ap'])}  F1={fmt(row['f1'])}  support={row['support']}")
        if self.undefined_ap:
            lines.append(f"  AP undefined (no positives): {', '.join(self.undefined_ap)}")
        return "\n".join(lines)


def evaluate_frames(frame_scores, frame_labels, class_names=None, task="recognition", threshold=THRESHOLD):
    """Compare scores with binary labels; any leading axes are flattened."""
    scores = np.asarray(frame_scores, dtype=np.float64)
    labels = np.asarray(frame_labels)
    if scores.shape != labels.shape:
        raise ShapeError(f"scores {scores.shape} and labels {labels.shape} differ")
    if scores.ndim == 1:
        scores, labels = scores[:, None], labels[:, None]
    C = scores.shape[-1]
    scores = scores.reshape(-1, C)
    labels = labels.reshape(-1, C).astype(bool)
    names = list(class_names) if class_names is not None else [f"class_{c}" for c in range(C)]
    if len(names) != C:
        raise ShapeError(f"{len(names)} class names for {C} score columns")

    pred = scores >= threshold
    accuracy = float(np.mean(pred == labels))
    per_class, aps, f1s, undefined_ap, undefined_f1 = [], [], [], [], []
    for c in range(C):
        ap = average_precision(scores[:, c], labels[:, c])
        f1 = f1_score(pred[:, c], labels[:, c])
        if ap is None:
            undefined_ap.append(names[c])
        else:
            aps.append(ap)
        if f1 is None:
            undefined_f1.append(names[c])
        else:
            f1s.append(f1)
        per_class.append({"class": names[c], "ap": ap, "f1": f1, "support": int(labels[:, c].sum())})
    return MetricsReport(
        task=task,
        accuracy=accuracy,
        mean_ap=float(np.mean(aps)) if aps else None,
        macro_f1=float(np.mean(f1s)) if f1s else None,
        per_class=per_class,
        undefined_ap=undefined_ap,
        undefined_f1=undefined_f1,
    )
