"""Loss assembly, training loops, embedding extraction, evaluation, ablations."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from mvweak.base_model import build_base_model
from mvweak.checkpoint import read_embedding_store, stack_embeddings, write_embedding_store
from mvweak.config import DownstreamConfig, ModelConfig, TrainConfig
from mvweak.core_data import read_meta, read_tensor
from mvweak.downstream_model import build_downstream_model
from mvweak.errors import ConfigError, DataError, NumericalError, ShapeError
from mvweak.metrics import evaluate_frames
from mvweak.weak_latent_loss import TripletParams, weak_label_latent_loss

log = logging.getLogger(__name__)

BCE_EPS = 1e-7
TASKS = ("detection", "recognition")


# -- data -------------------------------------------------------------------


@dataclass
class SequenceArrays:
    """In-memory stack of N featurized sequences."""

    ids: list[str]
    video: np.ndarray  # N, S, T, H, W, 3
    pd: np.ndarray  # N, S, T
    sl: np.ndarray  # N, S, T, N_cells
    bags: np.ndarray  # N, C
    frame_labels: np.ndarray | None = None  # N, T, C
    class_names: list[str] | None = None

    def __len__(self):
        return len(self.ids)

    def take(self, idx):
        idx = np.asarray(idx)
        fl = None if self.frame_labels is None else self.frame_labels[idx]
        return SequenceArrays([self.ids[i] for i in idx], self.video[idx], self.pd[idx], self.sl[idx],
                              self.bags[idx], fl, self.class_names)


def load_arrays(index, split=None, require_frame_labels=False):
    """Load featurized sequences (all, or those in ``split``) from a corpus."""
    entries = index.entries if split is None else index.subset(split)
    if not entries:
        raise DataError(f"no sequences in split {split!r}" if split else "empty dataset")
    ids, video, pd, sl, bags, labels, names = [], [], [], [], [], [], None
    for e in entries:
        d = index.directory(e)
        meta = read_meta(d)
        try:
            video.append(np.stack([read_tensor(d / f"view_{s}.mvt") for s in range(meta["num_views"])]))
            pd.append(read_tensor(d / "pd.mvt"))
            sl.append(read_tensor(d / "sl.mvt"))
        except FileNotFoundError as exc:
            raise DataError(f"{exc.filename} missing (run featurize first?)") from None
        ids.append(meta["sequence_id"])
        bags.append(np.asarray(meta["action_bag"], dtype=np.float32))
        fl = meta.get("frame_labels")
        if fl is None and require_frame_labels:
            raise DataError(f"{d}: frame labels required but absent")
        labels.append(None if fl is None else np.asarray(fl, dtype=np.float32))
        names = names or meta.get("class_names")
    frame_labels = np.stack(labels) if all(x is not None for x in labels) else None
    return SequenceArrays(ids, np.stack(video), np.stack(pd), np.stack(sl), np.stack(bags), frame_labels, names)


def task_targets(frame_labels, task):
    """Detection: per-frame OR over classes (width 1). Recognition: raw labels."""
    if task == "detection":
        return frame_labels.max(axis=-1, keepdims=True)
    if task == "recognition":
        return frame_labels
    raise ConfigError(f"task must be one of {TASKS}, got {task!r}")


def _tensors(arrays, idx, dtype):
    return (torch.as_tensor(arrays.video[idx], dtype=dtype),
            torch.as_tensor(arrays.pd[idx], dtype=dtype),
            torch.as_tensor(arrays.sl[idx], dtype=dtype))


def _batches(n, batch_size, seed, epoch):
    order = np.random.default_rng([seed, epoch]).permutation(n)
    n_batches = max(1, -(-n // batch_size))
    return [b for b in np.array_split(order, n_batches) if b.size]


# -- losses -----------------------------------------------------------------


def binary_cross_entropy(pred, target, eps=BCE_EPS):
    p = pred.clamp(eps, 1.0 - eps)
    return -(target * torch.log(p) + (1.0 - target) * torch.log(1.0 - p)).mean()


def base_total_loss(outputs, bags, latent_weight=1.0, triplet=TripletParams()):
    """``BCE(bag_pred, bags) + latent_weight * sum_s latent_loss(rho_s, bags)``.

    Returns ``(total, bce, per_view)`` with ``per_view`` a list of scalar tensors.
    """
    bags = torch.as_tensor(bags, dtype=outputs.bag_pred.dtype)
    if outputs.bag_pred.shape != bags.shape:
        raise ShapeError(f"bag_pred {tuple(outputs.bag_pred.shape)} vs bags {tuple(bags.shape)}")
    bce = binary_cross_entropy(outputs.bag_pred, bags)
    per_view = [weak_label_latent_loss(outputs.rho[:, s], bags, triplet) for s in range(outputs.rho.shape[1])]
    total = bce + latent_weight * torch.stack(per_view).sum() if per_view else bce
    return total, bce, per_view


def _optimizer(model, train):
    return torch.optim.Adam(model.parameters(), lr=train.lr, betas=(train.beta1, train.beta2))


def _check_finite(loss, epoch, step):
    if not torch.isfinite(loss):
        raise NumericalError(f"non-finite loss {float(loss)} at epoch {epoch}, step {step}")


# -- base training ----------------------------------------------------------


def train_base(arrays, model_cfg: ModelConfig, train: TrainConfig, log_every=0):
    """Train the base model on bags only. Returns ``(model, history)``."""
    if len(arrays) < 2:
        raise DataError("base training needs at least two sequences")
    if arrays.bags.shape[1] != model_cfg.num_bag_classes:
        raise ConfigError(f"data has {arrays.bags.shape[1]} bag classes, model expects {model_cfg.num_bag_classes}")
    torch.manual_seed(train.seed)
    model = build_base_model(model_cfg, seed=train.seed)
    opt = _optimizer(model, train)
    triplet = TripletParams(train.margin, train.distance)
    history = []
    for epoch in range(train.epochs):
        model.train()
        sums, n_batches = None, 0
        for step, idx in enumerate(_batches(len(arrays), train.batch_size, train.seed, epoch)):
            if idx.size < 2:
                continue
            out = model(*_tensors(arrays, idx, torch.float32))
            total, bce, per_view = base_total_loss(out, arrays.bags[idx], train.latent_weight, triplet)
            _check_finite(total, epoch, step)
            opt.zero_grad()
            total.backward()
            opt.step()
            vals = np.array([total.item(), bce.item()] + [v.item() for v in per_view])
            sums = vals if sums is None else sums + vals
            n_batches += 1
        means = sums / n_batches
        history.append({"epoch": epoch, "total": float(means[0]), "bce": float(means[1]),
                        "latent_per_view": [float(v) for v in means[2:]]})
        if log_every and (epoch % log_every == 0 or epoch == train.epochs - 1):
            log.info("base epoch %d total=%.4f bce=%.4f", epoch, means[0], means[1])
    return model, history


@torch.no_grad()
def predict_base(model, arrays, batch_size=16):
    """Run the base model; returns numpy ``(rho, frame_scores, bag_pred)``."""
    model.eval()
    dtype = next(model.parameters()).dtype
    rho, frames, bags = [], [], []
    for start in range(0, len(arrays), batch_size):
        idx = np.arange(start, min(start + batch_size, len(arrays)))
        out = model(*_tensors(arrays, idx, dtype))
        rho.append(out.rho.numpy())
        frames.append(out.frame_scores.numpy())
        bags.append(out.bag_pred.numpy())
    return np.concatenate(rho), np.concatenate(frames), np.concatenate(bags)


def extract_embeddings(model, arrays, out_dir=None):
    """Latents ``rho`` for every sequence, keyed by id; written as a store if ``out_dir``."""
    rho, _, _ = predict_base(model, arrays)
    store = {sid: rho[i] for i, sid in enumerate(arrays.ids)}
    if out_dir is not None:
        write_embedding_store(out_dir, store, model.cfg)
    return store


def load_embeddings(store_dir, arrays, model_cfg=None):
    store, manifest = read_embedding_store(store_dir, arrays.ids)
    if model_cfg is not None and manifest["d_model"] != model_cfg.d_model:
        raise ConfigError(f"embedding width {manifest['d_model']} != downstream d_model {model_cfg.d_model}")
    return stack_embeddings(store, arrays.ids)


# -- downstream training ----------------------------------------------------


def train_downstream(arrays, latents, cfg: DownstreamConfig, train: TrainConfig, task="recognition", base=None):
    """Frame-level BCE training. ``latents`` is ``(N, S', T, d)`` or None."""
    if arrays.frame_labels is None:
        raise DataError("downstream training needs frame labels")
    targets = task_targets(arrays.frame_labels, task)
    if targets.shape[-1] != cfg.num_task_classes:
        raise ConfigError(f"task {task!r} has {targets.shape[-1]} outputs but num_task_classes={cfg.num_task_classes}")
    if cfg.use_latents and latents is None:
        raise DataError("use_latents is set but no embeddings were provided")
    torch.manual_seed(train.seed)
    model = build_downstream_model(cfg, seed=train.seed, base=base)
    opt = _optimizer(model, train)
    history = []
    for epoch in range(train.epochs):
        model.train()
        total, n_batches = 0.0, 0
        for step, idx in enumerate(_batches(len(arrays), train.batch_size, train.seed, epoch)):
            rho = torch.as_tensor(latents[idx], dtype=torch.float32) if cfg.use_latents else None
            scores = model(*_tensors(arrays, idx, torch.float32), rho)
            loss = binary_cross_entropy(scores, torch.as_tensor(targets[idx]))
            _check_finite(loss, epoch, step)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item()
            n_batches += 1
        history.append({"epoch": epoch, "total": total / n_batches, "bce": total / n_batches, "latent_per_view": []})
    return model, history


@torch.no_grad()
def predict_frames(model, arrays, latents=None, batch_size=16):
    model.eval()
    dtype = next(model.parameters()).dtype
    out = []
    for start in range(0, len(arrays), batch_size):
        idx = np.arange(start, min(start + batch_size, len(arrays)))
        rho = torch.as_tensor(latents[idx], dtype=dtype) if model.cfg.use_latents else None
        out.append(model(*_tensors(arrays, idx, dtype), rho).numpy())
    return np.concatenate(out)


def evaluate_downstream(model, arrays, latents=None, task="recognition"):
    if task == "detection" and model.cfg.num_task_classes != 1:
        raise ConfigError(f"detection needs num_task_classes=1, model has {model.cfg.num_task_classes}")
    scores = predict_frames(model, arrays, latents)
    targets = task_targets(arrays.frame_labels, task)
    names = ["action"] if task == "detection" else arrays.class_names
    return evaluate_frames(scores, targets, names, task=task)


def evaluate_bags(model, arrays):
    _, _, bag_pred = predict_base(model, arrays)
    return evaluate_frames(bag_pred, arrays.bags, arrays.class_names, task="bag")


# -- histories and reports --------------------------------------------------


def write_history(path, history):
    with open(path, "w") as fh:
        for rec in history:
            fh.write(json.dumps(rec) + "\n")


def write_metrics(path, report):
    Path(path).write_text(json.dumps(report.to_json(), indent=1, sort_keys=True))


# -- ablation matrix --------------------------------------------------------

ABLATIONS = {
    "Proposed": dict(use_sl=True, use_pd=True, ptb_op="max", latent_mode="per_view"),
    "Ablation-A": dict(use_sl=False, use_pd=False, ptb_op="max", latent_mode="per_view"),
    "Ablation-B": dict(use_sl=True, use_pd=True, ptb_op="sum", latent_mode="per_view"),
    "Ablation-C": dict(use_sl=True, use_pd=True, ptb_op="mean", latent_mode="per_view"),
    "Ablation-D": dict(use_sl=True, use_pd=True, ptb_op="mean", latent_mode="single"),
}
TABLE_COLUMNS = ["Algo.", "SL", "PD", "PTB opera.", "Latent Space", "Action Det.", "Action Recog."]


def run_variant(train_arrays, test_arrays, model_cfg, down_cfg, base_train, down_train, variant, seed, tasks=TASKS,
                base_arrays=None):
    """Train one ablation variant (base, then one downstream per task); returns metric reports.

    The base learns from ``base_arrays`` (default: ``train_arrays``) bags.
    """
    switches = ABLATIONS[variant] if isinstance(variant, str) else variant
    mcfg = dataclasses.replace(model_cfg, **switches)
    base_arrays = train_arrays if base_arrays is None else base_arrays
    base, _ = train_base(base_arrays, mcfg, dataclasses.replace(base_train, seed=seed))
    train_rho = stack_embeddings(extract_embeddings(base, train_arrays), train_arrays.ids)
    test_rho = stack_embeddings(extract_embeddings(base, test_arrays), test_arrays.ids)
    reports = {}
    for task in tasks:
        n_out = 1 if task == "detection" else train_arrays.frame_labels.shape[-1]
        dcfg = dataclasses.replace(down_cfg, use_sl=switches["use_sl"], use_pd=switches["use_pd"],
                                   ptb_op=switches["ptb_op"], num_task_classes=n_out, use_latents=True)
        down, _ = train_downstream(train_arrays, train_rho, dcfg, dataclasses.replace(down_train, seed=seed), task, base)
        reports[task] = evaluate_downstream(down, test_arrays, test_rho, task)
    return reports


def run_ablation_matrix(train_arrays, test_arrays, model_cfg, down_cfg, base_train, down_train,
                        seeds=(0, 1, 2), metric="accuracy", variants=tuple(ABLATIONS), base_arrays=None):
    """Median-over-seeds metric per variant, laid out as rows of the ablation table."""
    rows, raw = [], {}
    for name in variants:
        results = [run_variant(train_arrays, test_arrays, model_cfg, down_cfg, base_train, down_train, name, s,
                               base_arrays=base_arrays) for s in seeds]
        raw[name] = [{t: r.to_json() for t, r in res.items()} for res in results]
        sw = ABLATIONS[name]

        def med(task):
            vals = [getattr(res[task], metric) for res in results]
            return float(np.median([v for v in vals if v is not None])) if any(v is not None for v in vals) else None

        rows.append({
            "Algo.": name,
            "SL": "yes" if sw["use_sl"] else "no",
            "PD": "yes" if sw["use_pd"] else "no",
            "PTB opera.": sw["ptb_op"],
            "Latent Space": "multiple" if sw["latent_mode"] == "per_view" else "single",
            "Action Det.": med("detection"),
            "Action Recog.": med("recognition"),
        })
    return rows, raw


def write_table_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TABLE_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})
