"""Gait-based gender classification from 2D skeletons with face-distilled pseudo-labels."""
from .kernels import BACKEND
from .skeleton import SkeletonSequence, normalize_frame, normalize_sequence
from .tssi import encode_tssi
from .faces import Label, LabelSource, PseudoLabel, aggregate_face_labels
from .propagation import build_knn_graph, propagate_nn, propagate_spectral
from .pipeline import DatasetManifest, load_pose_sequence

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "SkeletonSequence", "normalize_frame", "normalize_sequence", "encode_tssi",
    "Label", "LabelSource", "PseudoLabel", "aggregate_face_labels", "build_knn_graph",
    "propagate_nn", "propagate_spectral", "DatasetManifest", "load_pose_sequence",
]
