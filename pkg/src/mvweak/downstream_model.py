"""Downstream frame-level model fed with the base model's latent embeddings."""

from __future__ import annotations

import torch
from torch import nn

from mvweak.base_model import MultiViewTrunk, ViewFusion, as_batch, ptb_fuse
from mvweak.config import DownstreamConfig
from mvweak.errors import ConfigError, ShapeError


class LatentEmbeddingModule(nn.Module):
    """View-mean of the transferred latents, then a linear width-d layer."""

    def __init__(self, cfg):
        super().__init__()
        self.proj = nn.Linear(cfg.d_model, cfg.d_model)

    def forward(self, rho):
        if rho.ndim != 4 or rho.shape[-1] != self.proj.in_features:
            raise ShapeError(f"latents must be (K, S, T, {self.proj.in_features}), got {tuple(rho.shape)}")
        return self.proj(ptb_fuse(rho, "mean", dim=1))


def lem(rho, module):
    return module(rho)


class FrameHead(nn.Module):
    def __init__(self, in_width, hidden, num_classes):
        super().__init__()
        layers = []
        for w in hidden:
            layers += [nn.Linear(in_width, w), nn.ReLU()]
            in_width = w
        layers.append(nn.Linear(in_width, num_classes))
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return torch.sigmoid(self.net(x))


class DownstreamModel(nn.Module):
    def __init__(self, cfg: DownstreamConfig):
        super().__init__()
        self.cfg = cfg
        self.trunk = MultiViewTrunk(cfg)
        self.fusion = ViewFusion(cfg.ptb_op)
        self.lem = LatentEmbeddingModule(cfg) if cfg.use_latents else None
        width = cfg.d_model * (2 if cfg.use_latents else 1)
        self.head = FrameHead(width, cfg.head_hidden, cfg.num_task_classes)

    def forward(self, video, pd, sl, rho=None):
        phi_fused = self.fusion(self.trunk(video, pd, sl))
        if self.lem is not None:
            if rho is None:
                raise ConfigError("use_latents is set but no latent embeddings were given")
            if rho.shape[0] != phi_fused.shape[0] or rho.shape[2] != phi_fused.shape[1]:
                raise ShapeError(f"latents {tuple(rho.shape)} do not match batch/frames of {tuple(phi_fused.shape)}")
            phi_fused = torch.cat([phi_fused, self.lem(rho)], dim=-1)
        return self.head(phi_fused)


def build_downstream_model(cfg, seed=None, base=None):
    """Fresh downstream model; with ``cfg.transfer_weights`` the trunk is copied from ``base``."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.init_seed if seed is None else seed)
        model = DownstreamModel(cfg)
    if cfg.transfer_weights:
        if base is None:
            raise ConfigError("transfer_weights needs a base model")
        model.trunk.load_state_dict(base.trunk.state_dict())
    return model


def downstream_forward(video, pd, sl, rho, model):
    """Frame scores ``(T, C_task)`` for one sequence, or ``(K, T, C_task)`` batched."""
    dtype = next(model.parameters()).dtype
    video, pd, sl, single = as_batch(video, pd, sl, dtype)
    if rho is not None:
        rho = torch.as_tensor(rho).to(dtype)
        if single:
            rho = rho[None]
    scores = model(video, pd, sl, rho)
    return scores[0] if single else scores
