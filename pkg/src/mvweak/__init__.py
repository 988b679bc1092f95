"""Weakly supervised multi-view video learning at desk scale.

A base model is trained on sequence-level action bags with a per-class,
per-frame batch-hard triplet loss; its view-specific latent embeddings feed a
downstream frame-level detection / recognition model.
"""

from mvweak.core_data import (
    ActionBag,
    DatasetIndex,
    FrameLabelMatrix,
    MultiViewSequence,
    derive_action_bag,
    read_tensor,
    split_dataset,
    write_tensor,
)
from mvweak.errors import (
    ConfigError,
    DataError,
    FormatError,
    MvweakError,
    NumericalError,
    ShapeError,
    ValidationError,
)

__version__ = "0.1.0"
