"""Weak-annotation toolkit: single-gesture lesion annotations, watershed
propagation to 3D pseudo labels, annotation simulators, and detection metrics."""

__version__ = "0.1.0"

from .volume import Volume, LabelVolume, load_volume, save_label, save_volume
from .propagation import PropagationConfig, PseudoLabel, propagate, refine
from .annotation import DragDropAnnotation, simulate_dragdrop

__all__ = [
    "Volume",
    "LabelVolume",
    "load_volume",
    "save_volume",
    "save_label",
    "PropagationConfig",
    "PseudoLabel",
    "propagate",
    "refine",
    "DragDropAnnotation",
    "simulate_dragdrop",
]
