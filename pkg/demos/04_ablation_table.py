"""
Ablation table
==============

Proposed model against no SL/PD inputs, sum and mean view fusion, and a
single joint latent space, each median over seeds, in the table layout.
A shortened schedule keeps it to roughly a quarter of an hour on one core.
At this schedule and one seed the recognition column is noisy and need not
follow the full-schedule ordering checked by the acceptance suite.
"""

import dataclasses
import sys
import tempfile

from mvweak.config import RunConfig
from mvweak.core_data import DatasetIndex
from mvweak.pipeline import featurize, gen_data
from mvweak.train_eval import load_arrays, run_ablation_matrix, write_table_csv

seeds = (0,) if "--quick" in sys.argv else (0, 1, 2)
cfg = RunConfig()
base_train = dataclasses.replace(cfg.train, epochs=15)
down_train = dataclasses.replace(cfg.downstream_train, epochs=30)

root = tempfile.mkdtemp()
gen_data(cfg, root)
featurize(root, cfg.grid.rows, cfg.grid.cols)
index = DatasetIndex.load(root)
weak = load_arrays(index, "weak")
train = load_arrays(index, "train", require_frame_labels=True)
test = load_arrays(index, "test", require_frame_labels=True)

rows, _ = run_ablation_matrix(train, test, cfg.model, cfg.downstream, base_train, down_train,
                              seeds=seeds, metric="accuracy", base_arrays=weak)
write_table_csv(f"{root}/ablation.csv", rows)
print(open(f"{root}/ablation.csv").read())
