"""Pose-sequence types and the height/position normalisation pipeline.

A frame is a float array of shape (17, 3) holding ``(x, y, conf)`` per joint
in COCO keypoint order. A :class:`SkeletonSequence` stacks frames into a
(T, 17, 3) array.

COCO-17 has no pelvis or neck keypoint, so both are derived: the pelvis is the
hip midpoint and the neck is the shoulder midpoint.
"""
from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import kernels

JOINT_NAMES = (
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
)
NUM_JOINTS = len(JOINT_NAMES)
JOINT_INDEX = {name: i for i, name in enumerate(JOINT_NAMES)}

NOSE = 0
L_EYE, R_EYE = 1, 2
L_EAR, R_EAR = 3, 4
L_SHOULDER, R_SHOULDER = 5, 6
L_ELBOW, R_ELBOW = 7, 8
L_WRIST, R_WRIST = 9, 10
L_HIP, R_HIP = 11, 12
L_KNEE, R_KNEE = 13, 14
L_ANKLE, R_ANKLE = 15, 16

# index permutation that swaps every left joint with its right counterpart
LR_SWAP = np.array([0, 2, 1, 4, 3, 6, 5, 8, 7, 10, 9, 12, 11, 14, 13, 16, 15])

VIEW_ANGLES = tuple(range(0, 181, 18))

ANCHOR_EPS = 1e-6


class AnchorDegenerate(ValueError):
    """Shoulder or torso segment is too short to normalise by."""


class SequenceUnusable(ValueError):
    """Too many frames are missing or degenerate to recover the sequence."""


class Variation(str, enum.Enum):
    WS = "WS"
    CB = "CB"
    CL = "CL"
    CBG = "CBG"
    NM = "NM"
    BG = "BG"
    OTHER = "OTHER"


class Joint(NamedTuple):
    x: float
    y: float
    conf: float


def frame_from_joints(joints):
    """Stack 17 :class:`Joint` (or ``(x, y, conf)``) entries into a frame array."""
    frame = np.asarray([tuple(j) for j in joints], dtype=np.float64)
    if frame.shape != (NUM_JOINTS, 3):
        raise ValueError(f"expected 17 joints of (x, y, conf), got shape {frame.shape}")
    return frame


def frame_joints(frame):
    return [Joint(*map(float, row)) for row in np.asarray(frame)]


@dataclass
class SequenceMeta:
    subject_id: str = ""
    view_angle_deg: int | None = None
    variation: Variation = Variation.OTHER
    source_video: str = ""

    def __post_init__(self):
        self.variation = Variation(self.variation)
        if self.view_angle_deg is not None:
            self.view_angle_deg = int(self.view_angle_deg)
            if self.view_angle_deg not in VIEW_ANGLES:
                raise ValueError(f"view angle {self.view_angle_deg} not in {VIEW_ANGLES}")


@dataclass
class SkeletonSequence:
    data: np.ndarray
    fps: float = 30.0
    meta: SequenceMeta = field(default_factory=SequenceMeta)
    normalized: bool = False

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[1:] != (NUM_JOINTS, 3):
            raise ValueError(f"sequence data must be (T, 17, 3), got {self.data.shape}")

    def __len__(self):
        return self.data.shape[0]

    @property
    def frames(self):
        return list(self.data)

    @property
    def duration(self):
        return len(self) / self.fps if self.fps > 0 else 0.0

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class DerivedAnchors:
    pelvis: tuple[float, float]
    neck: tuple[float, float]
    shoulder_len: float
    torso_len: float


def derive_anchors(frame):
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape[0] != NUM_JOINTS:
        raise ValueError(f"frame must have 17 joints, got {frame.shape[0]}")
    a = kernels.frame_anchors(frame[None])[0]
    neck = 0.5 * (frame[L_SHOULDER, :2] + frame[R_SHOULDER, :2])
    anchors = DerivedAnchors(
        pelvis=(float(a[0]), float(a[1])),
        neck=(float(neck[0]), float(neck[1])),
        shoulder_len=float(a[2]),
        torso_len=float(a[3]),
    )
    if anchors.shoulder_len < ANCHOR_EPS or anchors.torso_len < ANCHOR_EPS:
        raise AnchorDegenerate(
            f"shoulder_len={anchors.shoulder_len:g}, torso_len={anchors.torso_len:g}"
        )
    return anchors


def normalize_frame(frame):
    """Zero-centre on the pelvis; divide x by shoulder length and y by torso length."""
    frame = np.asarray(frame, dtype=np.float64)
    anchors = kernels.frame_anchors(frame[None])
    out, degenerate = kernels.apply_anchors(frame[None], anchors, ANCHOR_EPS)
    if degenerate[0]:
        raise AnchorDegenerate(
            f"shoulder_len={anchors[0, 2]:g}, torso_len={anchors[0, 3]:g}"
        )
    return out[0]


def normalize_sequence(seq, anchor_mode="frame", max_degenerate_frac=0.5):
    """Normalise every frame, repairing degenerate frames by interpolation.

    ``anchor_mode="median"`` divides by the median shoulder/torso length over
    the valid frames instead of the per-frame lengths; the pelvis is always
    per-frame.
    """
    if len(seq) == 0:
        raise SequenceUnusable("empty sequence")
    anchors = kernels.frame_anchors(seq.data)
    degenerate = (anchors[:, 2] < ANCHOR_EPS) | (anchors[:, 3] < ANCHOR_EPS)
    n_bad = int(degenerate.sum())
    if n_bad == len(seq) or n_bad / len(seq) > max_degenerate_frac:
        raise SequenceUnusable(f"{n_bad}/{len(seq)} frames degenerate")
    if anchor_mode == "median":
        anchors = anchors.copy()
        anchors[:, 2] = np.median(anchors[~degenerate, 2])
        anchors[:, 3] = np.median(anchors[~degenerate, 3])
        anchors[degenerate, 2:] = 0.0
    elif anchor_mode != "frame":
        raise ValueError(f"unknown anchor_mode {anchor_mode!r}")
    out, _ = kernels.apply_anchors(seq.data, anchors, ANCHOR_EPS)
    if n_bad:
        out = kernels.fill_gaps(out, (~degenerate).astype(np.uint8))
    return seq.replace(data=out, normalized=True)


def resample_sequence(seq, target_len):
    if len(seq) == 0:
        raise ValueError("cannot resample an empty sequence")
    if target_len < 2:
        raise ValueError(f"target_len must be >= 2, got {target_len}")
    return seq.replace(data=kernels.resample_linear(seq.data, int(target_len)))


@dataclass
class ValidationReport:
    n_frames: int
    duration: float
    joint_mean_conf: np.ndarray
    mean_conf: float
    degenerate_frac: float
    low_conf_frac: float
    flags: frozenset

    @property
    def clean(self):
        return not self.flags


def validate_sequence(
    seq,
    min_frames=1,
    min_frame_conf=0.3,
    max_low_conf_frac=0.2,
    max_degenerate_frac=0.5,
):
    """Summarise detection quality and flag sequences below the thresholds.

    A frame counts as low-confidence when its mean joint confidence is below
    ``min_frame_conf``.
    """
    T = len(seq)
    if T == 0:
        return ValidationReport(
            0, 0.0, np.zeros(NUM_JOINTS), 0.0, 0.0, 0.0, frozenset({"empty"})
        )
    conf = seq.data[:, :, 2]
    low = conf.mean(axis=1) < min_frame_conf
    flags = set()
    if T < min_frames:
        flags.add("short")
    if low.mean() > max_low_conf_frac:
        flags.add("low_confidence")
    degenerate_frac = 0.0
    if not seq.normalized:
        a = kernels.frame_anchors(seq.data)
        degenerate_frac = float(((a[:, 2] < ANCHOR_EPS) | (a[:, 3] < ANCHOR_EPS)).mean())
        if degenerate_frac > max_degenerate_frac:
            flags.add("degenerate")
    return ValidationReport(
        n_frames=T,
        duration=seq.duration,
        joint_mean_conf=conf.mean(axis=0),
        mean_conf=float(conf.mean()),
        degenerate_frac=degenerate_frac,
        low_conf_frac=float(low.mean()),
        flags=frozenset(flags),
    )
