import numpy as np
import pytest

from gaitgender.propagation import handcrafted_embedding
from gaitgender.skeleton import VIEW_ANGLES, Variation, normalize_sequence
from gaitgender.synth import FEMALE, MALE, SynthConfig, subject_params, synthesize_walks


def test_counts_and_labels():
    ws = synthesize_walks(SynthConfig(n_subjects=5, angles=(0,)))
    assert len(ws) == 10
    assert sorted(w.label for w in ws) == [FEMALE] * 5 + [MALE] * 5
    assert all(w.sequence.meta.view_angle_deg == 0 for w in ws)
    assert len({w.sequence.meta.subject_id for w in ws}) == 10


def test_deterministic():
    a = synthesize_walks(SynthConfig(n_subjects=2, angles=(0, 90), seed=4))
    b = synthesize_walks(SynthConfig(n_subjects=2, angles=(0, 90), seed=4))
    c = synthesize_walks(SynthConfig(n_subjects=2, angles=(0, 90), seed=5))
    assert all(np.array_equal(x.sequence.data, y.sequence.data) for x, y in zip(a, b))
    assert not np.array_equal(a[0].sequence.data, c[0].sequence.data)


def test_front_and_back_views_mirror_x():
    ws = synthesize_walks(SynthConfig(n_subjects=2, angles=(0, 180), noise_std=0.0))
    for front, back in zip(ws[0::2], ws[1::2]):
        xf = front.sequence.data[:, :, 0] - 320.0
        xb = back.sequence.data[:, :, 0] - 320.0
        np.testing.assert_allclose(xb, -xf, atol=1e-9)


def test_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(styles=((0.0, 0.1), (0.1, 0.1)))
    with pytest.raises(ValueError):
        SynthConfig(angles=(0, 45))
    with pytest.raises(ValueError):
        SynthConfig(style_labels=(0,))
    assert SynthConfig(variations=("CL",)).variations == (Variation.CL,)


def test_subject_params_independent_of_angle():
    cfg = SynthConfig()
    a, b = subject_params(cfg, 0, 3), subject_params(cfg, 0, 3)
    assert a.arm_swing == b.arm_swing and np.array_equal(a.limb_scale, b.limb_scale)
    assert subject_params(cfg, 0, 4).arm_swing != a.arm_swing
    p = subject_params(cfg, 1, 3)
    assert 0.16 * 0.9 <= p.stride_width <= 0.16 * 1.1


def test_nearest_centroid_separability_without_noise():
    ws = synthesize_walks(SynthConfig(noise_std=0.0, n_subjects=10, seed=2))
    emb = np.stack([handcrafted_embedding(normalize_sequence(w.sequence)) for w in ws])
    y = np.array([w.label for w in ws])
    ang = np.array([w.sequence.meta.view_angle_deg for w in ws])
    for a in VIEW_ANGLES:
        sel = ang == a
        E, Y = emb[sel], y[sel]
        centroids = np.stack([E[Y == c].mean(axis=0) for c in (0, 1)])
        pred = np.argmin(((E[:, None] - centroids[None]) ** 2).sum(-1), axis=1)
        assert (pred == Y).all(), a
