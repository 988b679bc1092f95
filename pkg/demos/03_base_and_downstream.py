"""
Base model on bags, downstream model on frames
==============================================

The base model learns from action bags of a bag-only pool. Its view-specific
latents are then fed to a downstream frame-level recognizer trained on a
small frame-labelled split, and compared with the same downstream without
latents. Takes a few minutes on one CPU core.
"""

import dataclasses
import logging
import tempfile

from mvweak.config import RunConfig
from mvweak.core_data import DatasetIndex
from mvweak.pipeline import featurize, gen_data
from mvweak.train_eval import (
    evaluate_bags,
    evaluate_downstream,
    extract_embeddings,
    load_arrays,
    stack_embeddings,
    train_base,
    train_downstream,
)

logging.basicConfig(level=logging.INFO, format="%(message)s")

cfg = RunConfig()
root = tempfile.mkdtemp()
gen_data(cfg, root)
featurize(root, cfg.grid.rows, cfg.grid.cols)
index = DatasetIndex.load(root)

weak = load_arrays(index, "weak")
train = load_arrays(index, "train", require_frame_labels=True)
test = load_arrays(index, "test", require_frame_labels=True)
print(f"{len(weak)} bag-only, {len(train)} train, {len(test)} test sequences")

base, history = train_base(weak, cfg.model, cfg.train, log_every=10)
print("base bag-level metrics on test:", evaluate_bags(base, test).summary().splitlines()[0])

rho_train = stack_embeddings(extract_embeddings(base, train), train.ids)
rho_test = stack_embeddings(extract_embeddings(base, test), test.ids)
print("latents", rho_train.shape)

with_latents, _ = train_downstream(train, rho_train, cfg.downstream, cfg.downstream_train, "recognition")
print("with latents:   ", evaluate_downstream(with_latents, test, rho_test).summary().splitlines()[0])

baseline_cfg = dataclasses.replace(cfg.downstream, use_latents=False)
baseline, _ = train_downstream(train, None, baseline_cfg, cfg.downstream_train, "recognition")
print("without latents:", evaluate_downstream(baseline, test).summary().splitlines()[0])
