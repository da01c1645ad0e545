"""Document image binarization with selectional auto-encoders and classical
adaptive-threshold baselines."""

from .classical import binarize as binarize_classical, otsu_threshold
from .evaluation import Confusion, confusion, f_measure
from .imagery import load_gray, save_mask, split_into_windows, stitch_windows
from .sae import (
    Model,
    TopologySpec,
    binarize_document,
    build_model,
    load_checkpoint,
    save_checkpoint,
)

__version__ = "0.1.0"

__all__ = [
    "Confusion",
    "Model",
    "TopologySpec",
    "binarize_classical",
    "binarize_document",
    "build_model",
    "confusion",
    "f_measure",
    "load_checkpoint",
    "load_gray",
    "otsu_threshold",
    "save_checkpoint",
    "save_mask",
    "split_into_windows",
    "stitch_windows",
]
