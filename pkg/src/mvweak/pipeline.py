"""Run-config driven pipeline steps shared by the CLI and the demos."""

from __future__ import annotations

import dataclasses
import logging
from pathlib import Path

from mvweak.checkpoint import load_checkpoint, save_checkpoint
from mvweak.config import RunConfig
from mvweak.core_data import DatasetIndex, split_dataset
from mvweak.detect_featurize import featurize_corpus
from mvweak.errors import ConfigError
from mvweak.synth_office import ScenarioConfig, build_corpus
from mvweak.train_eval import (
    evaluate_downstream,
    extract_embeddings,
    load_arrays,
    load_embeddings,
    train_base,
    train_downstream,
    write_history,
    write_metrics,
)

log = logging.getLogger(__name__)


def check_consistency(cfg: RunConfig):
    """Cross-section checks; errors name the offending key paths."""
    sc, m, d = cfg.scenario, cfg.model, cfg.downstream
    pairs = [
        ("model.image_size", m.image_size, "scenario.image_size", sc.image_size),
        ("model.num_bag_classes", m.num_bag_classes, "scenario.num_classes", sc.num_classes),
        ("model.sl_width", m.sl_width, "grid.rows*grid.cols", cfg.grid.rows * cfg.grid.cols),
        ("downstream.num_views", d.num_views, "model.num_views", m.num_views),
        ("downstream.num_frames", d.num_frames, "model.num_frames", m.num_frames),
        ("downstream.image_size", d.image_size, "model.image_size", m.image_size),
        ("downstream.sl_width", d.sl_width, "model.sl_width", m.sl_width),
        ("downstream.d_model", d.d_model, "model.d_model", m.d_model),
    ]
    for ka, a, kb, b in pairs:
        if a != b:
            raise ConfigError(f"{ka}={a} does not match {kb}={b}")
    check_task(cfg.task, d.num_task_classes, sc.num_classes)


def check_task(task, num_task_classes, num_classes):
    expected = 1 if task == "detection" else num_classes
    if task not in ("detection", "recognition"):
        raise ConfigError(f"task must be 'detection' or 'recognition', got {task!r}")
    if num_task_classes != expected:
        raise ConfigError(f"task {task!r} needs downstream.num_task_classes={expected}, got {num_task_classes}")


def scenario_config(cfg: RunConfig, seed=None):
    sc = cfg.scenario
    return ScenarioConfig(
        num_views=cfg.model.num_views,
        num_frames=cfg.model.num_frames,
        image_size=sc.image_size,
        num_classes=sc.num_classes,
        block_size=sc.block_size,
        event_count=tuple(sc.event_count),
        event_length=tuple(sc.event_length),
        noise_std=sc.noise_std,
        seed=cfg.seed if seed is None else seed,
    )


def gen_data(cfg: RunConfig, out, n=None, seed=None, n_weak=None):
    seed = cfg.seed if seed is None else seed
    n = cfg.scenario.num_sequences if n is None else n
    n_weak = cfg.scenario.num_weak_sequences if n_weak is None else n_weak
    index = build_corpus(scenario_config(cfg, seed), n, seed, out, n_weak)
    if n >= 2:
        index = split_dataset(index, cfg.scenario.train_fraction, seed)
        index.save()
    return index


def featurize(data, rows, cols, detections_dir=None, expected_cells=None):
    index = DatasetIndex.load(data)
    featurize_corpus(index, rows, cols, detections_dir, expected_cells)
    return index


def base_split(index):
    """The base model learns from the weak-label pool when there is one, else from train."""
    if index.subset("weak"):
        return "weak"
    return "train" if index.splits else None


def train_base_step(cfg: RunConfig, data, out, seed=None):
    index = DatasetIndex.load(data)
    arrays = load_arrays(index, base_split(index))
    train = dataclasses.replace(cfg.train, seed=cfg.seed if seed is None else seed)
    model, history = train_base(arrays, cfg.model, train, log_every=10)
    out = Path(out)
    save_checkpoint(model, out, "base")
    write_history(out / "history.jsonl", history)
    return model, history


def export_embeddings_step(checkpoint, data, out):
    model = load_checkpoint(checkpoint, "base")
    arrays = load_arrays(DatasetIndex.load(data))
    return extract_embeddings(model, arrays, out)


def train_downstream_step(cfg: RunConfig, data, embeddings, out, task=None, seed=None, base_checkpoint=None):
    task = task or cfg.task
    check_task(task, cfg.downstream.num_task_classes, cfg.scenario.num_classes)
    index = DatasetIndex.load(data)
    arrays = load_arrays(index, "train" if index.splits else None, require_frame_labels=True)
    latents = load_embeddings(embeddings, arrays, cfg.downstream) if cfg.downstream.use_latents else None
    train = dataclasses.replace(cfg.downstream_train, seed=cfg.seed if seed is None else seed)
    base = None
    if cfg.downstream.transfer_weights:
        if base_checkpoint is None:
            raise ConfigError("downstream.transfer_weights needs a base checkpoint")
        base = load_checkpoint(base_checkpoint, "base")
    model, history = train_downstream(arrays, latents, cfg.downstream, train, task, base)
    out = Path(out)
    save_checkpoint(model, out, "downstream")
    write_history(out / "history.jsonl", history)
    return model, history


def evaluate_step(checkpoint, data, embeddings, task, metrics_out=None, split="test", plot_dir=None):
    model = load_checkpoint(checkpoint, "downstream")
    index = DatasetIndex.load(data)
    arrays = load_arrays(index, split if index.splits else None, require_frame_labels=True)
    latents = load_embeddings(embeddings, arrays, model.cfg) if model.cfg.use_latents else None
    report = evaluate_downstream(model, arrays, latents, task)
    if metrics_out is not None:
        Path(metrics_out).parent.mkdir(parents=True, exist_ok=True)
        write_metrics(metrics_out, report)
    if plot_dir is not None:
        from mvweak.plots import plot_pr_curves
        from mvweak.train_eval import predict_frames, task_targets

        scores = predict_frames(model, arrays, latents)
        plot_pr_curves(scores, task_targets(arrays.frame_labels, task), plot_dir,
                       ["action"] if task == "detection" else arrays.class_names)
    return report


def run_pipeline(cfg: RunConfig, workdir):
    """gen-data -> featurize -> train-base -> export -> train-downstream -> evaluate."""
    check_consistency(cfg)
    workdir = Path(workdir)
    p = {k: workdir / v for k, v in dataclasses.asdict(cfg.paths).items()}
    gen_data(cfg, p["data"])
    featurize(p["data"], cfg.grid.rows, cfg.grid.cols, expected_cells=cfg.model.sl_width)
    train_base_step(cfg, p["data"], p["base"])
    export_embeddings_step(p["base"], p["data"], p["embeddings"])
    train_downstream_step(cfg, p["data"], p["embeddings"], p["downstream"], base_checkpoint=p["base"])
    return evaluate_step(p["downstream"], p["data"], p["embeddings"], cfg.task, p["metrics"])


def compare_latent_variants(base_data, train, test, cfg: RunConfig, seeds=(0, 1, 2), task="recognition"):
    """Per seed: proposed base (per-view latents, max PTB) with and without its
    latents downstream, and the single-latent mean-PTB variant with latents.
    Bases learn from ``base_data`` bags; downstreams from ``train`` frame labels.

    Returns one dict per seed with the base bag macro-F1 and the downstream
    frame accuracy of each variant.
    """
    from mvweak.checkpoint import stack_embeddings
    from mvweak.train_eval import ABLATIONS, evaluate_bags

    n_out = 1 if task == "detection" else train.frame_labels.shape[-1]
    down_cfg = dataclasses.replace(cfg.downstream, num_task_classes=n_out)
    records = []
    for seed in seeds:
        rec = {"seed": seed}
        base_train = dataclasses.replace(cfg.train, seed=seed)
        down_train = dataclasses.replace(cfg.downstream_train, seed=seed)
        for name, key in (("Proposed", "per_view"), ("Ablation-D", "single")):
            sw = ABLATIONS[name]
            base, _ = train_base(base_data, dataclasses.replace(cfg.model, **sw), base_train)
            if key == "per_view":
                rec["bag_macro_f1"] = evaluate_bags(base, test).macro_f1
            rho_tr = stack_embeddings(extract_embeddings(base, train), train.ids)
            rho_te = stack_embeddings(extract_embeddings(base, test), test.ids)
            dcfg = dataclasses.replace(down_cfg, use_sl=sw["use_sl"], use_pd=sw["use_pd"], ptb_op=sw["ptb_op"],
                                       use_latents=True)
            down, _ = train_downstream(train, rho_tr, dcfg, down_train, task)
            rec[key] = evaluate_downstream(down, test, rho_te, task).accuracy
        down, _ = train_downstream(train, None, dataclasses.replace(down_cfg, use_latents=False), down_train, task)
        rec["no_latents"] = evaluate_downstream(down, test, None, task).accuracy
        log.info("seed %d: %s", seed, rec)
        records.append(rec)
    return records
