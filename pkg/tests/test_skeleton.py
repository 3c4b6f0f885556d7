import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gaitgender.skeleton import (
    L_HIP, L_SHOULDER, L_WRIST, NUM_JOINTS, R_HIP, R_SHOULDER, AnchorDegenerate, SequenceMeta,
    SequenceUnusable, SkeletonSequence, Variation, derive_anchors, normalize_frame,
    normalize_sequence, resample_sequence, validate_sequence,
)

from helpers import anchor_frame, random_frame, random_sequence


def test_derive_anchors_examples():
    a = derive_anchors(anchor_frame(((-0.5, 0), (0.5, 0)), ((-1, 2), (1, 2))))
    assert a.pelvis == (0.0, 0.0) and a.neck == (0.0, 2.0)
    assert a.shoulder_len == 2.0 and a.torso_len == 2.0
    a = derive_anchors(anchor_frame(((1, 1), (1, 1)), ((0, 3), (2, 3))))
    assert a.pelvis == (1.0, 1.0) and a.neck == (1.0, 3.0)
    assert a.shoulder_len == 2.0 and a.torso_len == 2.0


def test_derive_anchors_degenerate():
    with pytest.raises(AnchorDegenerate):
        derive_anchors(np.zeros((NUM_JOINTS, 3)))
    with pytest.raises(ValueError):
        derive_anchors(np.zeros((16, 3)))


def test_normalize_frame_worked_example():
    f = anchor_frame(((-0.5, 0), (0.5, 0)), ((-1, 2), (1, 2)))
    f[L_WRIST, :2] = (0.5, 1.0)
    f[L_WRIST, 2] = 0.7
    out = normalize_frame(f)
    assert out[L_WRIST].tolist() == [0.25, 0.5, 0.7]


def test_normalize_frame_identity_case():
    # pelvis at the origin, unit shoulder and torso lengths
    f = anchor_frame(((-0.2, 0), (0.2, 0)), ((-0.5, 1), (0.5, 1)), others=(0.3, -0.4))
    np.testing.assert_allclose(normalize_frame(f), f, atol=1e-15)


def test_normalize_frame_translation_example(rng):
    f = random_frame(rng)
    g = f.copy()
    g[:, :2] += (5.0, 7.0)
    np.testing.assert_allclose(normalize_frame(g), normalize_frame(f), atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(0.01, 100))
def test_translation_and_scale_invariance(seed, tx, ty, s):
    f = random_frame(np.random.default_rng(seed))
    g = f.copy()
    g[:, :2] = s * g[:, :2] + (tx, ty)
    np.testing.assert_allclose(normalize_frame(g), normalize_frame(f), atol=1e-9, rtol=0)


def test_post_normalisation_anchors(rng):
    for _ in range(200):
        f = random_frame(rng)
        a = derive_anchors(f)
        n = normalize_frame(f)
        pelvis = 0.5 * (n[L_HIP, :2] + n[R_HIP, :2])
        neck = 0.5 * (n[L_SHOULDER, :2] + n[R_SHOULDER, :2])
        assert np.abs(pelvis).max() <= 1e-9
        # undoing the per-axis scaling recovers the torso length
        assert abs(np.hypot(neck[0] * a.shoulder_len, neck[1] * a.torso_len) - a.torso_len) <= 1e-9 * a.torso_len


def test_upright_torso_has_unit_neck_and_shoulder_extent():
    f = anchor_frame(((3, 10), (5, 10)), ((2, 4), (6, 4)))
    n = normalize_frame(f)
    neck = 0.5 * (n[L_SHOULDER, :2] + n[R_SHOULDER, :2])
    assert abs(abs(neck[1]) - 1.0) <= 1e-9
    assert abs(abs(n[L_SHOULDER, 0] - n[R_SHOULDER, 0]) - 1.0) <= 1e-9


def test_normalize_frame_keeps_confidence(rng):
    f = random_frame(rng)
    assert np.array_equal(normalize_frame(f)[:, 2], f[:, 2])


def test_normalize_sequence_identical_frames(rng):
    f = random_frame(rng)
    seq = SkeletonSequence(np.stack([f, f, f]))
    out = normalize_sequence(seq)
    assert out.normalized and not seq.normalized
    for k in range(3):
        np.testing.assert_array_equal(out.data[k], normalize_frame(f))


def test_normalize_sequence_interpolates_degenerate_middle(rng):
    a, c = random_frame(rng), random_frame(rng)
    seq = SkeletonSequence(np.stack([a, np.zeros_like(a), c]))
    out = normalize_sequence(seq).data
    expected = 0.5 * (normalize_frame(a) + normalize_frame(c))
    np.testing.assert_allclose(out[1, :, :2], expected[:, :2], atol=1e-12)


def test_normalize_sequence_unusable(rng):
    with pytest.raises(SequenceUnusable):
        normalize_sequence(SkeletonSequence(np.zeros((4, NUM_JOINTS, 3))))
    bad = np.zeros((5, NUM_JOINTS, 3))
    bad[:2] = [random_frame(rng), random_frame(rng)]
    with pytest.raises(SequenceUnusable):
        normalize_sequence(SkeletonSequence(bad))
    with pytest.raises(SequenceUnusable):
        normalize_sequence(SkeletonSequence(np.zeros((0, NUM_JOINTS, 3))))


def test_normalize_sequence_median_mode(rng):
    seq = random_sequence(rng, 9)
    out = normalize_sequence(seq, anchor_mode="median").data
    from gaitgender import kernels
    a = kernels.frame_anchors(seq.data)
    S, T = np.median(a[:, 2]), np.median(a[:, 3])
    np.testing.assert_allclose(out[:, :, 0], (seq.data[:, :, 0] - a[:, 0:1]) / S, atol=1e-12)
    np.testing.assert_allclose(out[:, :, 1], (seq.data[:, :, 1] - a[:, 1:2]) / T, atol=1e-12)
    with pytest.raises(ValueError):
        normalize_sequence(seq, anchor_mode="bogus")


def test_resample_examples(rng):
    seq = random_sequence(rng, 60)
    out = resample_sequence(seq, 60)
    np.testing.assert_allclose(out.data, seq.data, atol=1e-12, rtol=0)
    two = np.zeros((2, NUM_JOINTS, 3))
    two[1, :, 0] = 1.0
    r = resample_sequence(SkeletonSequence(two), 3).data
    assert r[:, 0, 0].tolist() == [0.0, 0.5, 1.0]
    const = SkeletonSequence(np.repeat(random_frame(rng)[None], 7, axis=0))
    np.testing.assert_allclose(resample_sequence(const, 23).data, np.repeat(const.data[:1], 23, axis=0), atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 90), st.integers(2, 120), st.integers(0, 1000))
def test_resample_preserves_endpoints(n, target, seed):
    seq = random_sequence(np.random.default_rng(seed), n)
    out = resample_sequence(seq, target).data
    assert np.array_equal(out[0], seq.data[0])
    assert np.array_equal(out[-1], seq.data[-1])


def test_resample_rejects_bad_targets(rng):
    with pytest.raises(ValueError):
        resample_sequence(random_sequence(rng, 5), 1)
    with pytest.raises(ValueError):
        resample_sequence(SkeletonSequence(np.zeros((0, NUM_JOINTS, 3))), 5)


def test_validate_sequence(rng):
    seq = random_sequence(rng, 10)
    seq.data[:, :, 2] = 1.0
    r = validate_sequence(seq)
    assert r.clean and r.mean_conf == 1.0 and r.n_frames == 10
    seq.data[:5, :, 2] = 0.0
    assert "low_confidence" in validate_sequence(seq).flags
    assert validate_sequence(SkeletonSequence(np.zeros((0, NUM_JOINTS, 3)))).flags == {"empty"}
    assert "short" in validate_sequence(random_sequence(rng, 3), min_frames=10).flags
    assert "degenerate" in validate_sequence(SkeletonSequence(np.zeros((4, NUM_JOINTS, 3)))).flags


def test_sequence_types():
    with pytest.raises(ValueError):
        SkeletonSequence(np.zeros((3, 16, 3)))
    with pytest.raises(ValueError):
        SequenceMeta(view_angle_deg=45)
    m = SequenceMeta("s1", 90, "CL")
    assert m.variation is Variation.CL
    s = SkeletonSequence(np.zeros((30, NUM_JOINTS, 3)), fps=15.0, meta=m)
    assert s.duration == 2.0 and len(s.frames) == 30
