"""Base model: shared CNN encoder, input embeddings, per-view transformer
branches, view fusion (PTB) and the latent / bag output heads.

Tensors are batched: video ``(K, S, T, H, W, 3)``, PD ``(K, S, T)``,
SL ``(K, S, T, N)``. The ``base_forward`` helper also accepts one unbatched
sequence.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import torch
from torch import nn

from mvweak.config import ModelConfig
from mvweak.errors import ConfigError, ShapeError

NORM_EPS = 1e-12


class SharedEncoder(nn.Module):
    """Conv(3x3)-ReLU-MaxPool(2x2) blocks, flatten, dense-ReLU to width d."""

    def __init__(self, cfg):
        super().__init__()
        layers, c_in = [], 3
        for f in cfg.conv_filters:
            layers += [nn.Conv2d(c_in, f, 3, padding=1), nn.ReLU(), nn.MaxPool2d(2)]
            c_in = f
        self.convs = nn.Sequential(*layers)
        side = cfg.image_size // 2 ** len(cfg.conv_filters)
        self.dense = nn.Linear(c_in * side * side, cfg.d_model)
        self.act = nn.ReLU()
        self.image_size = cfg.image_size

    def forward(self, frames):
        *lead, h, w, c = frames.shape
        if (h, w, c) != (self.image_size, self.image_size, 3):
            raise ShapeError(f"encoder conv input: expected {self.image_size}x{self.image_size}x3 frames, got {h}x{w}x{c}")
        x = frames.reshape(-1, h, w, c).permute(0, 3, 1, 2)
        x = self.convs(x).flatten(1)
        return self.act(self.dense(x)).reshape(*lead, -1)


def encode_frames(video, encoder):
    """Apply the shared encoder to every frame of every view -> ``(..., S, T, d)``."""
    return encoder(video)


class EmbeddingModule(nn.Module):
    """Adds SL projections, PD, frame-index and camera-index embeddings.

    The frame table is one ``T x d`` parameter shared by all views; the camera
    table has one row per view; SL projections are per view and bias-free.
    """

    def __init__(self, cfg):
        super().__init__()
        S, T, d, N = cfg.num_views, cfg.num_frames, cfg.d_model, cfg.sl_width
        self.frame_table = nn.Parameter(torch.empty(T, d).uniform_(-1 / math.sqrt(d), 1 / math.sqrt(d)))
        self.camera_table = nn.Parameter(torch.empty(S, d).uniform_(-1 / math.sqrt(d), 1 / math.sqrt(d)))
        self.sl_proj = nn.Parameter(torch.empty(S, N, d).uniform_(-1 / math.sqrt(N), 1 / math.sqrt(N)))
        self.use_sl, self.use_pd = cfg.use_sl, cfg.use_pd

    def forward(self, psi, pd, sl):
        K, S, T, d = psi.shape
        if self.frame_table.shape[0] != T or self.camera_table.shape[0] != S:
            raise ShapeError(f"embedding tables are for S={self.camera_table.shape[0]}, T={self.frame_table.shape[0]}; got S={S}, T={T}")
        out = psi + self.frame_table[None, None] + self.camera_table[None, :, None]
        if self.use_sl:
            if sl.shape != (K, S, T, self.sl_proj.shape[1]):
                raise ShapeError(f"SL input must be {(K, S, T, self.sl_proj.shape[1])}, got {tuple(sl.shape)}")
            out = out + torch.einsum("kstn,snd->kstd", sl, self.sl_proj)
        if self.use_pd:
            if pd.shape != (K, S, T):
                raise ShapeError(f"PD input must be {(K, S, T)}, got {tuple(pd.shape)}")
            out = out + pd[..., None]
        return out


def apply_embeddings(psi, pd, sl, tables):
    return tables(psi, pd, sl)


class TransformerBranch(nn.Module):
    """Multi-head self-attention over frames, residual, then FFN, residual."""

    def __init__(self, cfg):
        super().__init__()
        d = cfg.d_model
        if d % cfg.num_heads:
            raise ConfigError(f"num_heads ({cfg.num_heads}) must divide d_model ({d})")
        self.num_heads = cfg.num_heads
        self.q = nn.Linear(d, d)
        self.k = nn.Linear(d, d)
        self.v = nn.Linear(d, d)
        self.out = nn.Linear(d, d)
        self.ffn_in = nn.Linear(d, cfg.ffn_hidden)
        self.ffn_act = nn.ReLU()
        self.ffn_out = nn.Linear(cfg.ffn_hidden, d)
        self.norm1 = nn.LayerNorm(d) if cfg.layer_norm else nn.Identity()
        self.norm2 = nn.LayerNorm(d) if cfg.layer_norm else nn.Identity()

    def attention(self, x):
        K, T, d = x.shape
        h, dh = self.num_heads, d // self.num_heads
        q = self.q(x).reshape(K, T, h, dh).transpose(1, 2)
        k = self.k(x).reshape(K, T, h, dh).transpose(1, 2)
        v = self.v(x).reshape(K, T, h, dh).transpose(1, 2)
        weights = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(dh), dim=-1)
        return self.out((weights @ v).transpose(1, 2).reshape(K, T, d))

    def forward(self, x):
        x = self.norm1(x + self.attention(x))
        return self.norm2(x + self.ffn_out(self.ffn_act(self.ffn_in(x))))


def transformer_branch(x, branch):
    return branch(x)


def ptb_fuse(phi, op="max", dim=1):
    """Element-wise reduction over the view axis (``dim``) of stacked outputs.

    ``phi`` may also be a sequence of per-view tensors, stacked on ``dim``.
    """
    if isinstance(phi, (list, tuple)):
        shapes = {tuple(p.shape) for p in phi}
        if len(shapes) != 1:
            raise ShapeError(f"PTB inputs disagree in shape: {sorted(shapes)}")
        phi = torch.stack(list(phi), dim=dim)
    if op == "max":
        return phi.amax(dim=dim)
    if op == "sum":
        return phi.sum(dim=dim)
    if op == "mean":
        return phi.mean(dim=dim)
    raise ConfigError(f"unknown PTB op {op!r}")


class ViewFusion(nn.Module):
    def __init__(self, op):
        super().__init__()
        self.op = op

    def forward(self, phi):
        return ptb_fuse(phi, self.op, dim=1)


class MultiViewTrunk(nn.Module):
    """Encoder, embeddings and S transformer branches -> ``phi (K, S, T, d)``."""

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        self.encoder = SharedEncoder(cfg)
        self.embed = EmbeddingModule(cfg)
        self.branches = nn.ModuleList(TransformerBranch(cfg) for _ in range(cfg.num_views))

    def forward(self, video, pd, sl):
        if video.ndim != 6 or video.shape[1] != self.cfg.num_views or video.shape[2] != self.cfg.num_frames:
            raise ShapeError(
                f"video must be (K, {self.cfg.num_views}, {self.cfg.num_frames}, H, W, 3), got {tuple(video.shape)}"
            )
        psi_f = self.embed(self.encoder(video), pd, sl)
        return torch.stack([branch(psi_f[:, s]) for s, branch in enumerate(self.branches)], dim=1)


def l2_normalize(x, eps=NORM_EPS):
    return x / torch.sqrt((x * x).sum(dim=-1, keepdim=True) + eps)


class LatentHeads(nn.Module):
    """One linear width-d head per view (or a single head), L2-normalized."""

    def __init__(self, cfg):
        super().__init__()
        self.mode = cfg.latent_mode
        self.heads = nn.ModuleList(nn.Linear(cfg.d_model, cfg.d_model) for _ in range(cfg.num_latent_views))

    def forward(self, phi):
        """``phi``: ``(K, S, T, d)`` per-view, or ``(K, T, d)`` mean-fused in single mode."""
        if self.mode == "single":
            if phi.ndim == 4:
                phi = ptb_fuse(phi, "mean", dim=1)
            return l2_normalize(self.heads[0](phi))[:, None]
        if phi.shape[1] != len(self.heads):
            raise ShapeError(f"latent heads expect {len(self.heads)} views, got {phi.shape[1]}")
        return torch.stack([l2_normalize(head(phi[:, s])) for s, head in enumerate(self.heads)], dim=1)


def latent_heads(phi, heads):
    return heads(phi)


def mil_pool(frame_scores):
    """Mean over the frame axis (-2), summed in fixed frame order."""
    T = frame_scores.shape[-2]
    total = frame_scores[..., 0, :]
    for t in range(1, T):
        total = total + frame_scores[..., t, :]
    return total / T


class BagHead(nn.Module):
    """Per-frame dense-ReLU then dense-sigmoid; bag prediction by MIL mean."""

    def __init__(self, cfg):
        super().__init__()
        self.hidden = nn.Linear(cfg.d_model, cfg.bag_hidden)
        self.act = nn.ReLU()
        self.logits = nn.Linear(cfg.bag_hidden, cfg.num_bag_classes)

    def forward(self, phi_fused):
        frame_scores = torch.sigmoid(self.logits(self.act(self.hidden(phi_fused))))
        return frame_scores, mil_pool(frame_scores)


def bag_head(phi_fused, head):
    return head(phi_fused)


class BaseOutputs(NamedTuple):
    rho: torch.Tensor
    frame_scores: torch.Tensor
    bag_pred: torch.Tensor
    phi_fused: torch.Tensor


class BaseModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.trunk = MultiViewTrunk(cfg)
        self.fusion = ViewFusion(cfg.ptb_op)
        self.latent = LatentHeads(cfg)
        self.bag = BagHead(cfg)

    def forward(self, video, pd, sl):
        phi = self.trunk(video, pd, sl)
        phi_fused = self.fusion(phi)
        rho = self.latent(phi)
        frame_scores, bag_pred = self.bag(phi_fused)
        return BaseOutputs(rho, frame_scores, bag_pred, phi_fused)


def build_base_model(cfg, seed=None):
    """Construct a base model with seeded initialization."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.init_seed if seed is None else seed)
        return BaseModel(cfg)


def as_batch(video, pd, sl, dtype=None):
    """Convert arrays to tensors and add a batch axis to a single sequence."""
    video, pd, sl = (torch.as_tensor(x) for x in (video, pd, sl))
    if dtype is not None:
        video, pd, sl = video.to(dtype), pd.to(dtype), sl.to(dtype)
    single = video.ndim == 5
    if single:
        video, pd, sl = video[None], pd[None], sl[None]
    return video, pd, sl, single


def base_forward(video, pd, sl, model):
    """Run the base model on one sequence or a batch of sequences."""
    dtype = next(model.parameters()).dtype
    video, pd, sl, single = as_batch(video, pd, sl, dtype)
    out = model(video, pd, sl)
    if single:
        out = BaseOutputs(*(x[0] for x in out))
    return out


def kink_signature(model, *inputs):
    """Hashable record of every non-smooth branch taken in a forward pass.

    Captures ReLU sign patterns, max-pool argmax indices and max-fusion argmax
    over views; two points with equal signatures lie on the same smooth piece.
    """
    parts = []

    def relu_hook(mod, args, out):
        parts.append((args[0] > 0).flatten().tolist())

    def pool_hook(mod, args, out):
        _, idx = nn.functional.max_pool2d(args[0], mod.kernel_size, mod.stride, return_indices=True)
        parts.append(idx.flatten().tolist())

    def fusion_hook(mod, args, out):
        if mod.op == "max":
            parts.append(args[0].argmax(dim=1).flatten().tolist())

    handles = []
    for m in model.modules():
        if isinstance(m, nn.ReLU):
            handles.append(m.register_forward_hook(relu_hook))
        elif isinstance(m, nn.MaxPool2d):
            handles.append(m.register_forward_hook(pool_hook))
        elif isinstance(m, ViewFusion):
            handles.append(m.register_forward_hook(fusion_hook))
    try:
        with torch.no_grad():
            model(*inputs)
    finally:
        for h in handles:
            h.remove()
    return tuple(tuple(p) for p in parts)
