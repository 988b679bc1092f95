"""Weak-label latent loss: batch-hard triplet loss per class and frame index.

For one view, a batch of K sequences gives embeddings ``B`` of shape
``(K, T, d)`` and bags ``G`` of shape ``(K, C)``. For every class c the K bag
entries ``G[:, c]`` are the labels, and for every frame index t the K rows
``B[:, t]`` are the points; each (c, t) slice contributes one batch-hard
triplet loss and the slices are averaged.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
import torch

from mvweak.config import DISTANCES
from mvweak.errors import NumericalError, ShapeError


@dataclass(frozen=True)
class TripletParams:
    margin: float = 1.0
    distance: str = "euclidean"

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.distance not in DISTANCES:
            raise ValueError(f"distance must be one of {DISTANCES}")


def pairwise_distances(points, distance="euclidean"):
    """``(..., K, d)`` -> ``(..., K, K)`` pairwise distances.

    The Euclidean branch clamps at zero before the square root and gives zero
    gradient where two points coincide (including the diagonal).
    """
    sq = (points[..., :, None, :] - points[..., None, :, :]).pow(2).sum(-1).clamp_min(0.0)
    if distance == "squared_euclidean":
        return sq
    zero = sq == 0
    return torch.sqrt(torch.where(zero, torch.ones_like(sq), sq)) * (~zero)


def _slice_losses(dists, labels, margin):
    """Batch-hard loss for stacked slices: dists ``(..., K, K)``, labels ``(..., K)``."""
    K = labels.shape[-1]
    same = labels[..., :, None] == labels[..., None, :]
    eye = torch.eye(K, dtype=torch.bool, device=dists.device)
    pos_mask, neg_mask = same & ~eye, ~same
    valid = pos_mask.any(-1) & neg_mask.any(-1)
    zero = torch.zeros((), dtype=dists.dtype)
    hardest_pos = torch.where(pos_mask, dists, torch.full_like(dists, -math.inf)).amax(-1)
    hardest_neg = torch.where(neg_mask, dists, torch.full_like(dists, math.inf)).amin(-1)
    hardest_pos = torch.where(valid, hardest_pos, zero)
    hardest_neg = torch.where(valid, hardest_neg, zero)
    terms = torch.where(valid, torch.relu(hardest_pos - hardest_neg + margin), zero)
    count = valid.sum(-1)
    return terms.sum(-1) / count.clamp_min(1).to(dists.dtype)


def batch_hard_triplet(dists, labels, margin=1.0):
    """Mean over valid anchors of ``max(0, max_p d(a,p) - min_n d(a,n) + margin)``.

    An anchor is valid when it has another sample with its label and one with
    a different label; with no valid anchor the loss is 0.
    """
    dists = torch.as_tensor(dists)
    labels = torch.as_tensor(labels)
    return _slice_losses(dists, labels, margin)


def _check_batch(B, bags):
    if B.ndim != 3:
        raise ShapeError(f"embedded batch must be K x T x d, got {tuple(B.shape)}")
    if bags.ndim != 2:
        raise ShapeError(f"bags must be K x C, got {tuple(bags.shape)}")
    if B.shape[0] != bags.shape[0]:
        raise ShapeError(f"batch has {B.shape[0]} sequences but {bags.shape[0]} bags")
    if B.shape[0] < 2:
        raise ValueError("weak-label latent loss needs K >= 2")
    if bags.shape[1] == 0:
        raise ValueError("weak-label latent loss needs C >= 1")


def weak_label_latent_loss(B, bags, params=TripletParams()):
    """Mean over classes and frame indices of the batch-hard triplet loss.

    ``B``: ``(K, T, d)`` embeddings of one view; ``bags``: ``(K, C)`` binary.
    Returns a scalar tensor (differentiable in ``B``).
    """
    B = torch.as_tensor(B)
    bags = torch.as_tensor(bags)
    _check_batch(B, bags)
    dists = pairwise_distances(B.transpose(0, 1), params.distance)  # (T, K, K)
    labels = bags.T[:, None, :]  # (C, 1, K)
    return _slice_losses(dists[None], labels, params.margin).mean()


# -- independent oracle -----------------------------------------------------


def oracle_latent_loss(B, bags, margin=1.0, distance="euclidean"):
    """Exhaustive triplet enumeration in plain Python (float64).

    For every (c, t) slice and every anchor, all (positive, negative) pairs
    are scored and the largest hinge is kept; anchors without both kinds are
    skipped; slices with no usable anchor count as 0.
    """
    B = np.asarray(B, dtype=np.float64)
    bags = np.asarray(bags)
    K, T, _ = B.shape
    C = bags.shape[1]

    def dist(a, b):
        sq = sum((float(x) - float(y)) ** 2 for x, y in zip(a, b))
        return sq if distance == "squared_euclidean" else math.sqrt(sq)

    total = 0.0
    for c in range(C):
        for t in range(T):
            terms = []
            for a in range(K):
                pos = [p for p in range(K) if p != a and bags[p, c] == bags[a, c]]
                neg = [n for n in range(K) if bags[n, c] != bags[a, c]]
                if not pos or not neg:
                    continue
                terms.append(max(
                    max(0.0, dist(B[a, t], B[p, t]) - dist(B[a, t], B[n, t]) + margin)
                    for p, n in itertools.product(pos, neg)
                ))
            total += sum(terms) / len(terms) if terms else 0.0
    return total / (C * T)


# -- gradient checking ------------------------------------------------------


class TieError(NumericalError):
    """No tie-free point found within the attempt budget."""


def relative_error(analytic, numeric, floor=1e-6):
    analytic, numeric = np.asarray(analytic, float), np.asarray(numeric, float)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def finite_difference(fn, point, step=1e-4, coords=None):
    """Central differences of scalar ``fn`` (tensor -> tensor) at ``point``."""
    x = torch.as_tensor(np.asarray(point, dtype=np.float64)).clone()
    flat = x.view(-1)
    coords = range(flat.numel()) if coords is None else coords
    out = []
    with torch.no_grad():
        for i in coords:
            orig = flat[i].item()
            flat[i] = orig + step
            hi = float(fn(x))
            flat[i] = orig - step
            lo = float(fn(x))
            flat[i] = orig
            out.append((hi - lo) / (2 * step))
    return np.asarray(out)


def analytic_gradient(fn, point):
    x = torch.tensor(np.asarray(point, dtype=np.float64), requires_grad=True)
    value = fn(x)
    (grad,) = torch.autograd.grad(value, x, allow_unused=True)
    if grad is None:
        grad = torch.zeros_like(x)
    return grad.detach().numpy()


def grad_check(loss_fn, point, step=1e-4, seed=0, n_coords=None):
    """Max relative error between autograd and central finite differences.

    ``loss_fn`` maps a float64 tensor shaped like ``point`` to a scalar
    tensor. With ``n_coords`` set, a seeded random subset of coordinates is
    checked instead of all of them. The caller is responsible for ``point``
    being away from kinks (see :func:`draw_tie_free_batch`).
    """
    point = np.asarray(point, dtype=np.float64)
    grad = analytic_gradient(loss_fn, point).reshape(-1)
    if n_coords is None or n_coords >= point.size:
        coords = np.arange(point.size)
    else:
        coords = np.sort(np.random.default_rng(seed).choice(point.size, n_coords, replace=False))
    numeric = finite_difference(loss_fn, point, step, coords)
    if coords.size == 0:
        return 0.0
    return float(relative_error(grad[coords], numeric).max())


def is_tie_free(B, bags, margin=1.0, gap=1e-3, distance="euclidean"):
    """No two distances in a (c, t) slice closer than ``gap`` and no hinge within ``gap`` of 0."""
    B = torch.as_tensor(np.asarray(B, dtype=np.float64))
    bags = np.asarray(bags)
    K, T, _ = B.shape
    dists = pairwise_distances(B.transpose(0, 1), distance).numpy()
    iu = np.triu_indices(K, 1)
    for t in range(T):
        d = np.sort(dists[t][iu])
        if d.size > 1 and np.diff(d).min() < gap:
            return False
        for c in range(bags.shape[1]):
            lab = bags[:, c]
            for a in range(K):
                pos = [p for p in range(K) if p != a and lab[p] == lab[a]]
                neg = [n for n in range(K) if lab[n] != lab[a]]
                if pos and neg:
                    hinge = max(dists[t, a, pos]) - min(dists[t, a, neg]) + margin
                    if abs(hinge) < gap:
                        return False
    return True


def draw_tie_free_batch(rng, K, T, C, d, margin=1.0, gap=1e-3, max_attempts=100, distance="euclidean"):
    """Sample ``(B, bags)`` away from ties; bags have at least one mixed class."""
    for _ in range(max_attempts):
        B = rng.normal(size=(K, T, d))
        bags = rng.integers(0, 2, size=(K, C))
        if not any(0 < bags[:, c].sum() < K for c in range(C)):
            continue
        if is_tie_free(B, bags, margin, gap, distance):
            return B, bags
    raise TieError(f"no tie-free batch found in {max_attempts} attempts (K={K}, T={T}, C={C}, d={d})")
