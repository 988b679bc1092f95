"""
The weak-label latent loss
==========================

Batch-hard triplet loss evaluated once per (class, frame) slice with the
bag column as labels, checked against exhaustive triplet enumeration and
against finite differences.
"""

import numpy as np
import torch

from mvweak.weak_latent_loss import (
    draw_tie_free_batch,
    grad_check,
    oracle_latent_loss,
    weak_label_latent_loss,
)

rng = np.random.default_rng(0)

# K=6 sequences, T=3 frames, d=4 embedding width, C=2 classes
B = rng.normal(size=(6, 3, 4))
bags = rng.integers(0, 2, size=(6, 2))
print("bags\n", bags)

fast = weak_label_latent_loss(torch.from_numpy(B), torch.from_numpy(bags))
print("loss", float(fast), "oracle", oracle_latent_loss(B, bags))

# a bag column that is constant over the batch has no negatives: it adds 0
print("all-equal bags", float(weak_label_latent_loss(torch.from_numpy(B), torch.ones(6, 2))))

# the loss is piecewise smooth; away from ties autograd matches central differences
B, bags = draw_tie_free_batch(rng, K=6, T=3, C=2, d=4)
bags_t = torch.from_numpy(bags)
err = grad_check(lambda x: weak_label_latent_loss(x, bags_t), B, step=1e-4)
print(f"max relative gradient error {err:.2e}")

# pulling same-bag points together drives the loss down
x = torch.from_numpy(B).requires_grad_()
opt = torch.optim.SGD([x], lr=0.1)
for step in range(51):
    loss = weak_label_latent_loss(x, bags_t)
    if step % 10 == 0:
        print(f"step {step:2d} loss {loss.item():.4f}")
    opt.zero_grad()
    loss.backward()
    opt.step()
