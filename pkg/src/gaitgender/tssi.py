"""Tree-structure skeleton images and the gait augmentation suite.

A TSSI lays a skeleton sequence out as an image: rows follow a depth-first
walk of the skeleton tree (so neighbouring rows are connected joints), columns
are time steps and the three channels are ``(x, y, conf)``.
"""
from __future__ import annotations

import numpy as np

from .skeleton import (
    L_ANKLE, L_EAR, L_ELBOW, L_EYE, L_HIP, L_KNEE, L_SHOULDER, L_WRIST, LR_SWAP,
    NOSE, NUM_JOINTS, R_ANKLE, R_EAR, R_ELBOW, R_EYE, R_HIP, R_KNEE, R_SHOULDER,
    R_WRIST, SequenceUnusable, resample_sequence,
)

DEFAULT_T = 60
PIXEL_CLIP = 3.0

SKELETON_EDGES = frozenset(
    frozenset(e)
    for e in [
        (NOSE, L_EYE), (L_EYE, L_EAR), (NOSE, R_EYE), (R_EYE, R_EAR),
        (NOSE, L_SHOULDER), (L_SHOULDER, L_ELBOW), (L_ELBOW, L_WRIST),
        (L_SHOULDER, L_HIP), (L_HIP, L_KNEE), (L_KNEE, L_ANKLE),
        (NOSE, R_SHOULDER), (R_SHOULDER, R_ELBOW), (R_ELBOW, R_WRIST),
        (R_SHOULDER, R_HIP), (R_HIP, R_KNEE), (R_KNEE, R_ANKLE),
    ]
)

_COCO17_WALK = (
    NOSE, L_EYE, L_EAR, L_EYE, NOSE, R_EYE, R_EAR, R_EYE, NOSE,
    L_SHOULDER, L_ELBOW, L_WRIST, L_ELBOW, L_SHOULDER,
    L_HIP, L_KNEE, L_ANKLE, L_KNEE, L_HIP, L_SHOULDER, NOSE,
    R_SHOULDER, R_ELBOW, R_WRIST, R_ELBOW, R_SHOULDER,
    R_HIP, R_KNEE, R_ANKLE, R_KNEE, R_HIP, R_SHOULDER, NOSE,
)


def coco17_traversal():
    """Depth-first walk of the COCO-17 tree rooted at the nose (33 rows)."""
    return np.array(_COCO17_WALK, dtype=np.intp)


def is_valid_traversal(order):
    order = [int(i) for i in order]
    adjacent = all(frozenset(p) in SKELETON_EDGES for p in zip(order, order[1:]))
    return adjacent and set(order) == set(range(NUM_JOINTS))


def encode_tssi(seq, T=DEFAULT_T, order=None):
    """Encode a normalised sequence as a ``(len(order), T, 3)`` image."""
    if len(seq) == 0:
        raise SequenceUnusable("empty sequence")
    if T < 2:
        raise ValueError(f"T must be >= 2, got {T}")
    if order is None:
        order = coco17_traversal()
    data = resample_sequence(seq, T).data
    image = np.ascontiguousarray(data[:, order, :].transpose(1, 0, 2))
    if not np.isfinite(image).all():
        raise SequenceUnusable("non-finite values in encoded sequence")
    return image


def to_pixels(image, clip=PIXEL_CLIP):
    """Clip to ``[-clip, clip]`` and map affinely onto ``[0, 1]``."""
    return (np.clip(image, -clip, clip) + clip) / (2.0 * clip)


# -- augmentations ---------------------------------------------------------


def flip_lr(seq):
    """Swap left/right joint labels; coordinates are untouched."""
    return seq.replace(data=seq.data[:, LR_SWAP, :].copy())


def mirror_x(seq):
    """Reflect about the vertical axis and swap sides so the skeleton stays plausible."""
    data = seq.data[:, LR_SWAP, :].copy()
    data[:, :, 0] = -data[:, :, 0]
    return seq.replace(data=data)


def joint_dropout(seq, p, rng):
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    drop = rng.random(seq.data.shape[:2]) < p
    data = seq.data.copy()
    data[drop] = 0.0
    return seq.replace(data=data)


def pace_modify(seq, factor, rng=None, bounds=(0.5, 2.0)):
    """Play the sequence ``factor`` times faster by temporal resampling.

    ``rng`` is accepted for pipeline uniformity; the operation is deterministic.
    """
    lo, hi = bounds
    if not lo <= factor <= hi:
        raise ValueError(f"pace factor {factor} outside [{lo}, {hi}]")
    target = max(2, int(round(len(seq) / factor)))
    out = resample_sequence(seq, target)
    return out.replace(fps=seq.fps * factor)


def random_temporal_crop(seq, length, rng):
    n = len(seq)
    if not 1 <= length <= n:
        raise ValueError(f"crop length {length} must be in [1, {n}]")
    start = int(rng.integers(0, n - length + 1))
    return seq.replace(data=seq.data[start:start + length].copy())


class Augmenter:
    """Random composition of the five augmentations, applied per sample.

    Each transform fires independently with its own probability. Crops keep at
    least ``min_crop_frac`` of the (paced) sequence.
    """

    def __init__(
        self,
        p_flip=0.5,
        p_mirror=0.5,
        dropout=0.05,
        p_pace=0.5,
        pace_range=(0.8, 1.25),
        p_crop=0.5,
        min_crop_frac=0.75,
    ):
        self.p_flip = p_flip
        self.p_mirror = p_mirror
        self.dropout = dropout
        self.p_pace = p_pace
        self.pace_range = pace_range
        self.p_crop = p_crop
        self.min_crop_frac = min_crop_frac

    def __call__(self, seq, rng):
        if rng.random() < self.p_flip:
            seq = flip_lr(seq)
        if rng.random() < self.p_mirror:
            seq = mirror_x(seq)
        if rng.random() < self.p_pace and len(seq) >= 2:
            seq = pace_modify(seq, float(rng.uniform(*self.pace_range)))
        if rng.random() < self.p_crop and len(seq) > 2:
            length = int(rng.integers(max(2, int(self.min_crop_frac * len(seq))), len(seq) + 1))
            seq = random_temporal_crop(seq, length, rng)
        if self.dropout > 0:
            seq = joint_dropout(seq, self.dropout, rng)
        return seq
