"""Parametric 3D stick-figure walker projected to 2D COCO keypoints.

The walker is defined in body coordinates (x toward the walker's left, y up,
z along the walking direction). Limbs oscillate sinusoidally; a style is the
pair ``(arm_swing_amplitude, stride_width)`` and each style maps to one class.
A view angle rotates the walker about the vertical axis (0 deg walks toward
the camera, 90 deg is profile, 180 deg walks away). The camera sits slightly
above the walker, so depth leaks into the vertical image axis, and projection
is orthographic.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .skeleton import (
    L_ANKLE, L_EAR, L_ELBOW, L_EYE, L_HIP, L_KNEE, L_SHOULDER, L_WRIST,
    NOSE, NUM_JOINTS, R_ANKLE, R_EAR, R_ELBOW, R_EYE, R_HIP, R_KNEE, R_SHOULDER,
    R_WRIST, VIEW_ANGLES, SequenceMeta, SkeletonSequence, Variation,
)

FEMALE, MALE = 0, 1

# per-variation modifiers: cadence, amplitude, left-arm swing, noise multipliers
_VARIATION_EFFECTS = {
    Variation.NM: (1.0, 1.0, 1.0, 1.0),
    Variation.WS: (1.3, 1.15, 1.0, 1.0),
    Variation.CB: (1.0, 1.0, 0.3, 1.0),
    Variation.BG: (1.0, 1.0, 0.3, 1.0),
    Variation.CL: (1.0, 1.0, 1.0, 1.5),
    Variation.CBG: (1.0, 1.0, 1.0, 2.0),
    Variation.OTHER: (1.0, 1.0, 1.0, 1.0),
}


@dataclass
class SynthConfig:
    n_subjects: int = 20
    styles: tuple = ((0.4, 0.05), (0.1, 0.16))
    style_labels: tuple = (FEMALE, MALE)
    angles: tuple = VIEW_ANGLES
    variations: tuple = (Variation.NM,)
    frames: int = 60
    fps: float = 30.0
    noise_std: float = 0.02
    elevation_deg: float = 30.0
    subject_jitter: float = 0.1
    seed: int = 0
    # face fixtures: probability the simulated face analyser gets the gender wrong
    face_error_rate: float = 0.1

    def __post_init__(self):
        self.styles = tuple(tuple(float(v) for v in s) for s in self.styles)
        self.style_labels = tuple(int(v) for v in self.style_labels)
        self.angles = tuple(int(a) for a in self.angles)
        self.variations = tuple(Variation(v) for v in self.variations)
        if len(self.style_labels) != len(self.styles):
            raise ValueError("one label per style required")
        if any(a <= 0 for a, _ in self.styles):
            raise ValueError("arm swing amplitudes must be > 0")
        if not set(self.angles) <= set(VIEW_ANGLES):
            raise ValueError(f"angles must be a subset of {VIEW_ANGLES}")


@dataclass
class WalkerParams:
    arm_swing: float
    stride_width: float
    height: float = 1.0
    cadence_hz: float = 1.0
    phase: float = 0.0
    leg_swing: float = 0.4
    twist: float = 0.12
    shoulder_half: float = 0.11
    hip_half: float = 0.07
    left_arm_scale: float = 1.0
    limb_scale: np.ndarray = field(default_factory=lambda: np.ones(4))


@dataclass
class SyntheticWalk:
    sequence: SkeletonSequence
    label: int
    style: int
    subject_index: int


def _rot_y(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def walker_pose_3d(params, t):
    """Joint positions at time ``t`` seconds, shape (17, 3), body coordinates."""
    p = params
    h = p.height
    thigh, shin, upper, fore = 0.25 * h * p.limb_scale
    phi = 2.0 * np.pi * p.cadence_hz * t + p.phase
    speed = 2.0 * p.cadence_hz * 0.5 * h * np.sin(p.leg_swing)

    pelvis = np.array([0.012 * h * np.sin(phi), 0.5 * h + 0.01 * h * np.cos(2 * phi), speed * t])
    neck = pelvis + np.array([0.0, 0.3 * h, 0.015 * h])
    hip_axis = _rot_y(-p.twist * 0.5 * np.sin(phi)) @ np.array([p.hip_half * h, 0.0, 0.0])
    sh_axis = _rot_y(p.twist * np.sin(phi)) @ np.array([p.shoulder_half * h, 0.0, 0.0])

    J = np.zeros((NUM_JOINTS, 3))
    J[L_HIP], J[R_HIP] = pelvis + hip_axis, pelvis - hip_axis
    J[L_SHOULDER], J[R_SHOULDER] = neck + sh_axis, neck - sh_axis
    J[NOSE] = neck + h * np.array([0.0, 0.12, 0.04])
    J[L_EYE] = neck + h * np.array([0.025, 0.14, 0.03])
    J[R_EYE] = neck + h * np.array([-0.025, 0.14, 0.03])
    J[L_EAR] = neck + h * np.array([0.055, 0.13, -0.01])
    J[R_EAR] = neck + h * np.array([-0.055, 0.13, -0.01])

    for hip, knee, ankle, side, ph in (
        (L_HIP, L_KNEE, L_ANKLE, 1.0, phi),
        (R_HIP, R_KNEE, R_ANKLE, -1.0, phi + np.pi),
    ):
        flex = p.leg_swing * np.sin(ph)
        knee_bend = 0.5 * p.leg_swing * (1.0 + np.cos(ph - 0.5 * np.pi))
        foot_x = pelvis[0] + side * 0.5 * p.stride_width * h
        J[knee] = J[hip] + thigh * np.array([0.0, -np.cos(flex), np.sin(flex)])
        J[ankle] = J[knee] + shin * np.array([0.0, -np.cos(flex - knee_bend), np.sin(flex - knee_bend)])
        J[knee, 0] = 0.5 * (J[hip, 0] + foot_x)
        J[ankle, 0] = foot_x

    for sh, el, wr, side, ph, scale in (
        (L_SHOULDER, L_ELBOW, L_WRIST, 1.0, phi + np.pi, p.left_arm_scale),
        (R_SHOULDER, R_ELBOW, R_WRIST, -1.0, phi, 1.0),
    ):
        swing = scale * p.arm_swing * np.sin(ph)
        bend = 0.25 + 0.5 * scale * p.arm_swing * (1.0 + np.sin(ph))
        out = side * 0.03 * h
        J[el] = J[sh] + upper * np.array([0.0, -np.cos(swing), np.sin(swing)]) + [out, 0, 0]
        J[wr] = J[el] + fore * np.array([0.0, -np.cos(swing + bend), np.sin(swing + bend)]) + [out, 0, 0]
    return J


def project(points, view_angle_deg, elevation_deg):
    """Orthographic projection to (u, v): u to camera right, v up."""
    rotated = points @ _rot_y(np.deg2rad(view_angle_deg)).T
    e = np.deg2rad(elevation_deg)
    u = rotated[..., 0]
    v = rotated[..., 1] * np.cos(e) - rotated[..., 2] * np.sin(e)
    return u, v


def subject_params(cfg, style, subject_index):
    """Draw one subject's walker parameters (independent of angle and variation)."""
    rng = np.random.default_rng([cfg.seed, 7919, style, subject_index])
    arm, width = cfg.styles[style]
    j = cfg.subject_jitter
    return WalkerParams(
        arm_swing=arm * rng.uniform(1 - j, 1 + j),
        stride_width=width * rng.uniform(1 - j, 1 + j),
        height=1.0,
        cadence_hz=rng.uniform(0.85, 1.15),
        phase=rng.uniform(0.0, 2.0 * np.pi),
        leg_swing=0.4 * rng.uniform(1 - j / 2, 1 + j / 2),
        twist=rng.uniform(0.08, 0.16),
        shoulder_half=0.11 * rng.uniform(0.95, 1.05),
        hip_half=0.07 * rng.uniform(0.95, 1.05),
        limb_scale=rng.uniform(0.95, 1.05, size=4),
    )


def render_walk(cfg, params, view_angle_deg, variation, rng, pixel_scale=200.0, centre=(320.0, 240.0)):
    """Render one walk to a raw pixel-space sequence of shape (frames, 17, 3)."""
    cadence_mul, amp_mul, left_arm, noise_mul = _VARIATION_EFFECTS[Variation(variation)]
    p = WalkerParams(**{**params.__dict__})
    p.cadence_hz *= cadence_mul
    p.arm_swing *= amp_mul
    p.leg_swing *= amp_mul
    p.left_arm_scale = left_arm
    times = np.arange(cfg.frames) / cfg.fps
    pts = np.stack([walker_pose_3d(p, t) for t in times])
    u, v = project(pts, view_angle_deg, cfg.elevation_deg)
    sd = cfg.noise_std * noise_mul
    if sd > 0:
        u = u + rng.normal(0.0, sd, size=u.shape)
        v = v + rng.normal(0.0, sd, size=v.shape)
    data = np.empty((cfg.frames, NUM_JOINTS, 3))
    data[:, :, 0] = centre[0] + pixel_scale * u
    data[:, :, 1] = centre[1] - pixel_scale * v
    data[:, :, 2] = rng.uniform(0.85, 1.0, size=u.shape)
    return data


def synthesize_walks(cfg):
    """All walks for ``cfg`` in (style, subject, variation, angle) order."""
    walks = []
    for style in range(len(cfg.styles)):
        for s in range(cfg.n_subjects):
            params = subject_params(cfg, style, s)
            subject_id = f"s{style}_{s:03d}"
            for vi, variation in enumerate(cfg.variations):
                for angle in cfg.angles:
                    rng = np.random.default_rng([cfg.seed, style, s, vi, angle])
                    data = render_walk(cfg, params, angle, variation, rng)
                    meta = SequenceMeta(
                        subject_id=subject_id,
                        view_angle_deg=angle,
                        variation=variation,
                        source_video=f"synthetic:{subject_id}:{variation.value}:{angle:03d}",
                    )
                    walks.append(
                        SyntheticWalk(
                            SkeletonSequence(data, fps=cfg.fps, meta=meta),
                            label=cfg.style_labels[style],
                            style=style,
                            subject_index=s,
                        )
                    )
    return walks
