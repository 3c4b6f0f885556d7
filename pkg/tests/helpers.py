import numpy as np

from gaitgender.skeleton import L_HIP, L_SHOULDER, NUM_JOINTS, R_HIP, R_SHOULDER, SkeletonSequence


def random_frame(rng, centre=300.0, spread=60.0):
    f = np.empty((NUM_JOINTS, 3))
    f[:, :2] = rng.normal(centre, spread, size=(NUM_JOINTS, 2))
    f[:, 2] = rng.uniform(0.3, 1.0, size=NUM_JOINTS)
    return f


def random_sequence(rng, T=40, **kw):
    return SkeletonSequence(np.stack([random_frame(rng) for _ in range(T)]), **kw)


def anchor_frame(hips, shoulders, others=(0.0, 0.0)):
    f = np.zeros((NUM_JOINTS, 3))
    f[:, :2] = others
    f[:, 2] = 1.0
    f[L_HIP, :2], f[R_HIP, :2] = hips
    f[L_SHOULDER, :2], f[R_SHOULDER, :2] = shoulders
    return f
