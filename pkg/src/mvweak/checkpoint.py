"""Model checkpoints and the latent-embedding store, both built on MVT1 files.

Checkpoint directory::

    manifest.json   {"kind", "config", "tensors": {param name: file}}
    tensors/*.mvt

Embedding store directory::

    manifest.json   {"latent_mode", "num_latent_views", "num_frames", "d_model",
                     "sequences": {sequence_id: file}}
    <sequence_id>.mvt   S' x T x d
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np
import torch

from mvweak.base_model import build_base_model
from mvweak.config import DownstreamConfig, ModelConfig
from mvweak.core_data import read_tensor, write_tensor
from mvweak.downstream_model import DownstreamModel
from mvweak.errors import ConfigError, DataError

MANIFEST = "manifest.json"


def _read_manifest(directory):
    path = Path(directory) / MANIFEST
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise DataError(f"missing {path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: {exc}") from None


def save_checkpoint(model, directory, kind):
    directory = Path(directory)
    (directory / "tensors").mkdir(parents=True, exist_ok=True)
    tensors = {}
    for name, value in model.state_dict().items():
        rel = f"tensors/{name}.mvt"
        write_tensor(directory / rel, value.detach().cpu().numpy())
        tensors[name] = rel
    manifest = {"kind": kind, "config": dataclasses.asdict(model.cfg), "tensors": tensors}
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=1))


def load_checkpoint(directory, expect_kind=None):
    """Rebuild the model stored in ``directory`` with its exact parameters."""
    directory = Path(directory)
    manifest = _read_manifest(directory)
    kind = manifest.get("kind")
    if expect_kind is not None and kind != expect_kind:
        raise ConfigError(f"{directory} holds a {kind!r} checkpoint, expected {expect_kind!r}")
    try:
        if kind == "base":
            model = build_base_model(ModelConfig(**manifest["config"]))
        elif kind == "downstream":
            model = DownstreamModel(DownstreamConfig(**manifest["config"]))
        else:
            raise ConfigError(f"unknown checkpoint kind {kind!r}")
    except TypeError as exc:
        raise ConfigError(f"{directory}: checkpoint config does not match this build: {exc}") from None
    state = {name: torch.from_numpy(read_tensor(directory / rel)) for name, rel in manifest["tensors"].items()}
    missing = set(model.state_dict()) ^ set(state)
    if missing:
        raise ConfigError(f"{directory}: parameter names differ from the model: {sorted(missing)[:5]}")
    model.load_state_dict(state)
    return model


def write_embedding_store(directory, embeddings, cfg):
    """``embeddings`` maps sequence id -> ``(S', T, d)`` array of unit rows."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {}
    for seq_id, rho in embeddings.items():
        write_tensor(directory / f"{seq_id}.mvt", rho)
        files[seq_id] = f"{seq_id}.mvt"
    manifest = {
        "latent_mode": cfg.latent_mode,
        "num_latent_views": cfg.num_latent_views,
        "num_frames": cfg.num_frames,
        "d_model": cfg.d_model,
        "sequences": dict(sorted(files.items())),
    }
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=1))


def read_embedding_store(directory, sequence_ids=None):
    directory = Path(directory)
    manifest = _read_manifest(directory)
    files = manifest["sequences"]
    ids = list(files) if sequence_ids is None else list(sequence_ids)
    out = {}
    for seq_id in ids:
        if seq_id not in files:
            raise DataError(f"embedding store {directory} has no entry for {seq_id}")
        rho = read_tensor(directory / files[seq_id])
        expected = (manifest["num_latent_views"], manifest["num_frames"], manifest["d_model"])
        if rho.shape != expected:
            raise DataError(f"{directory / files[seq_id]}: shape {rho.shape}, manifest says {expected}")
        out[seq_id] = rho
    return out, manifest


def stack_embeddings(store, sequence_ids):
    return np.stack([store[i] for i in sequence_ids])
