"""Self-checks run by ``mvweak oracle-check``: each fast path against its oracle."""

from __future__ import annotations

import numpy as np
import torch

from mvweak.metrics import average_precision, average_precision_reference
from mvweak.weak_latent_loss import (
    TieError,
    analytic_gradient,
    draw_tie_free_batch,
    finite_difference,
    grad_check,
    oracle_latent_loss,
    relative_error,
    weak_label_latent_loss,
)


def check_loss_oracle(n_instances=200, seed=0, tol=1e-6):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        K, T, C, d = rng.integers(2, 9), rng.integers(1, 5), rng.integers(1, 4), rng.integers(1, 9)
        B = rng.normal(size=(K, T, d))
        bags = rng.integers(0, 2, size=(K, C))
        fast = float(weak_label_latent_loss(torch.from_numpy(B), torch.from_numpy(bags)))
        worst = max(worst, abs(fast - oracle_latent_loss(B, bags)))
    return worst <= tol, f"max |loss - oracle| = {worst:.3e} over {n_instances} instances (tol {tol:g})"


def check_ap_oracle(n_instances=100, seed=0, tol=1e-9):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(n_instances):
        n = int(rng.integers(2, 40))
        scores = rng.random(n)
        if i % 3 == 0:
            scores = np.round(scores, 1)
        labels = rng.integers(0, 2, n)
        labels[rng.integers(n)] = 1
        worst = max(worst, abs(average_precision(scores, labels) - average_precision_reference(scores, labels)))
    return worst <= tol, f"max |AP - reference| = {worst:.3e} over {n_instances} instances (tol {tol:g})"


def check_loss_gradients(n_points=20, seed=0, step=1e-4, tol=1e-3):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(n_points):
        B, bags = draw_tie_free_batch(rng, K=6, T=3, C=2, d=4)
        bags_t = torch.from_numpy(bags)
        err = grad_check(lambda x: weak_label_latent_loss(x, bags_t), B, step, seed + i)
        worst = max(worst, err)
    return worst <= tol, f"max relative gradient error = {worst:.3e} at {n_points} tie-free points (tol {tol:g})"


def run_oracle_checks(seed=0):
    return [
        ("weak-label latent loss vs triplet enumeration", *check_loss_oracle(seed=seed)),
        ("latent loss gradient vs finite differences", *check_loss_gradients(seed=seed)),
        ("bag_pred probe gradient vs finite differences", *check_model_gradients(seed=seed)),
        ("average precision vs quadratic reference", *check_ap_oracle(seed=seed)),
    ]


def probe_point(cfg, rng, downstream=False):
    """Random float64 model, inputs and probe weights for one gradient check."""
    from mvweak.base_model import build_base_model
    from mvweak.downstream_model import build_downstream_model

    seed = int(rng.integers(2**31))
    model = (build_downstream_model(cfg, seed) if downstream else build_base_model(cfg, seed)).double()
    S, T, N, size = cfg.num_views, cfg.num_frames, cfg.sl_width, cfg.image_size
    video = torch.from_numpy(rng.random((2, S, T, size, size, 3)))
    pd = torch.from_numpy(rng.integers(0, 2, (2, S, T)).astype(np.float64))
    sl = torch.from_numpy(np.eye(N)[rng.integers(0, N, (2, S, T))] * pd.numpy()[..., None])
    inputs = (video, pd, sl)
    if downstream:
        rho = rng.normal(size=(2, S, T, cfg.d_model))
        inputs += (torch.from_numpy(rho / np.linalg.norm(rho, axis=-1, keepdims=True)),)
        weights = torch.from_numpy(rng.normal(size=(2, T, cfg.num_task_classes)))
    else:
        weights = torch.from_numpy(rng.normal(size=(2, cfg.num_bag_classes)))
    return model, inputs, weights


def param_probe(model, inputs, weights):
    """Return ``(fn, theta, unflatten)`` where ``fn`` maps a flat parameter vector
    to ``sum(w * bag_pred)`` for a base model or ``sum(w * frame_scores)`` for a
    downstream model."""
    from torch.func import functional_call

    names = [n for n, _ in model.named_parameters()]
    shapes = [p.shape for _, p in model.named_parameters()]
    sizes = [p.numel() for _, p in model.named_parameters()]
    theta = torch.cat([p.detach().reshape(-1) for p in model.parameters()]).numpy()

    def unflatten(x):
        return {n: c.reshape(s) for n, c, s in zip(names, torch.split(x, sizes), shapes)}

    def fn(x):
        out = functional_call(model, unflatten(x), inputs)
        return ((out.bag_pred if hasattr(out, "bag_pred") else out) * weights).sum()

    return fn, theta, unflatten


def _stable_under(model, inputs, unflatten, theta, coords, step):
    from torch.func import functional_call

    from mvweak.base_model import kink_signature

    class _Bound(torch.nn.Module):
        def __init__(self, params):
            super().__init__()
            self.model, self.params = model, params

        def forward(self, *args):
            return functional_call(self.model, self.params, args)

    def signature(x):
        # hooks sit on the wrapped submodules, so functional_call is observed too
        return kink_signature(_Bound(unflatten(torch.from_numpy(x))), *inputs)

    ref = signature(theta)
    for i in coords:
        for sign in (1.0, -1.0):
            x = theta.copy()
            x[i] += sign * step
            if signature(x) != ref:
                return False
    return True


def check_model_gradients(cfg=None, n_points=20, seed=0, step=1e-4, tol=1e-3, n_coords=24, max_attempts=100,
                          downstream=False):
    """Gradient of a linear output probe wrt all model parameters vs central differences.

    Points whose +-step perturbations change any ReLU sign, max-pool argmax
    or max-fusion argmax are redrawn, so every checked coordinate lies on one
    smooth piece.
    """
    from mvweak.config import scaled_downstream_config, scaled_model_config

    cfg = cfg or (scaled_downstream_config() if downstream else scaled_model_config())
    rng = np.random.default_rng(seed)
    worst, redraws = 0.0, 0
    for _ in range(n_points):
        for _ in range(max_attempts):
            model, inputs, weights = probe_point(cfg, rng, downstream)
            fn, theta, unflatten = param_probe(model, inputs, weights)
            coords = np.sort(rng.choice(theta.size, min(n_coords, theta.size), replace=False))
            if _stable_under(model, inputs, unflatten, theta, coords, step):
                break
            redraws += 1
        else:
            raise TieError(f"no kink-free probe point in {max_attempts} attempts")
        grad = analytic_gradient(fn, theta)[coords]
        numeric = finite_difference(fn, theta, step, coords)
        worst = max(worst, float(relative_error(grad, numeric).max()))
    detail = f"max relative gradient error = {worst:.3e} at {n_points} points, {redraws} redraws (tol {tol:g})"
    return worst <= tol, detail
