"""
Action bags, PD and SL vectors
==============================

One synthetic office scene, its frame labels, the sequence-level action bag
derived from them, and the person-detection (PD) and spatial-localization
(SL) vectors computed from the oracle boxes.
"""

import numpy as np

from mvweak.core_data import derive_action_bag
from mvweak.detect_featurize import GridSpec, compute_pd_vector, compute_sl_vector, grid_iou
from mvweak.synth_office import ScenarioConfig, generate_scene

# a two-view scene with two actions at fixed times
cfg = ScenarioConfig(num_views=2, num_frames=10, fixed_events=[(0, 1, 4), (2, 6, 9)])
seq, truth = generate_scene(cfg, seed=0)
print("video", seq.views.shape)

# frame labels are T x C; the bag only says which classes occur somewhere
print("frame labels\n", truth.frame_labels)
print("action bag", derive_action_bag(truth.frame_labels).bag)

# PD marks frames with at least one detected person, per view
pd = compute_pd_vector(truth.boxes)
print("PD view 0", pd[0].astype(int))

# SL is one-hot over a grid of image cells at the cell the chosen box overlaps most
grid = GridSpec(4, 4, cfg.image_size, cfg.image_size)
sl = compute_sl_vector(truth.boxes, grid)
print("SL hot cells view 0", [int(r.argmax()) if r.any() else None for r in sl[0]])
print("SL hot cells view 1", [int(r.argmax()) if r.any() else None for r in sl[1]])

# the same room position lands in different cells because each camera sees the room differently
box = truth.boxes[0, 2][0]
print("view 0 box", tuple(round(v, 1) for v in box[:4]))
print("IoU with each cell", np.round([grid_iou(box, c) for c in grid.cells()], 3))
