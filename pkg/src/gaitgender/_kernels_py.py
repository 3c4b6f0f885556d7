"""NumPy implementations of the numeric kernels.

These are the reference versions; ``_ckernels`` mirrors them in Cython.
Both operate on float64 arrays of shape (T, 17, C) with COCO joint order.
"""
import numpy as np

L_SHOULDER, R_SHOULDER, L_HIP, R_HIP = 5, 6, 11, 12


def frame_anchors(data):
    """Per-frame (pelvis_x, pelvis_y, shoulder_len, torso_len), shape (T, 4)."""
    data = np.asarray(data, dtype=np.float64)
    pelvis = 0.5 * (data[:, L_HIP, :2] + data[:, R_HIP, :2])
    neck = 0.5 * (data[:, L_SHOULDER, :2] + data[:, R_SHOULDER, :2])
    d_sh = data[:, L_SHOULDER, :2] - data[:, R_SHOULDER, :2]
    d_to = neck - pelvis
    out = np.empty((data.shape[0], 4), dtype=np.float64)
    out[:, :2] = pelvis
    out[:, 2] = np.sqrt(d_sh[:, 0] ** 2 + d_sh[:, 1] ** 2)
    out[:, 3] = np.sqrt(d_to[:, 0] ** 2 + d_to[:, 1] ** 2)
    return out


def apply_anchors(data, anchors, eps):
    """Zero-center on the pelvis and rescale x/y by shoulder/torso length.

    Returns ``(out, degenerate)``; degenerate frames are left as zeros.
    """
    data = np.asarray(data, dtype=np.float64)
    anchors = np.asarray(anchors, dtype=np.float64)
    degenerate = (anchors[:, 2] < eps) | (anchors[:, 3] < eps)
    out = np.zeros_like(data)
    ok = ~degenerate
    out[ok, :, 0] = (data[ok, :, 0] - anchors[ok, 0, None]) / anchors[ok, 2, None]
    out[ok, :, 1] = (data[ok, :, 1] - anchors[ok, 1, None]) / anchors[ok, 3, None]
    out[:, :, 2:] = data[:, :, 2:]
    return out, degenerate.astype(np.uint8)


def fill_gaps(data, valid):
    """Linearly interpolate invalid frames from the nearest valid neighbours.

    Leading/trailing invalid frames copy the nearest valid frame. Only the
    coordinate channels are interpolated; other channels are left alone.
    """
    data = np.array(data, dtype=np.float64, copy=True)
    valid = np.asarray(valid, dtype=bool)
    idx = np.flatnonzero(valid)
    if idx.size == 0 or idx.size == valid.size:
        return data
    for t in np.flatnonzero(~valid):
        k = np.searchsorted(idx, t)
        if k == 0:
            data[t, :, :2] = data[idx[0], :, :2]
        elif k == idx.size:
            data[t, :, :2] = data[idx[-1], :, :2]
        else:
            a, b = idx[k - 1], idx[k]
            w = (t - a) / (b - a)
            data[t, :, :2] = (1.0 - w) * data[a, :, :2] + w * data[b, :, :2]
    return data


def resample_linear(data, target_len):
    """Resample along axis 0 at ``target_len`` evenly spaced time points."""
    data = np.asarray(data, dtype=np.float64)
    n = data.shape[0]
    if n == 1:
        return np.repeat(data, target_len, axis=0)
    pos = np.arange(target_len, dtype=np.float64) * (n - 1) / (target_len - 1)
    lo = np.floor(pos).astype(np.intp)
    lo = np.minimum(lo, n - 2)
    frac = pos - lo
    # frac is exactly 0 or 1 on source frames, so endpoints are reproduced bit-for-bit
    return data[lo] * (1.0 - frac)[:, None, None] + data[lo + 1] * frac[:, None, None]


def knn_cosine(vectors, k):
    """Brute-force k nearest neighbours under cosine distance ``1 - u.v``.

    Self is excluded; ties are broken by the lower index. Returns
    ``(indices, distances)``, both of shape (n, k).
    """
    v = np.asarray(vectors, dtype=np.float64)
    dist = 1.0 - v @ v.T
    np.fill_diagonal(dist, np.inf)
    order = np.argsort(dist, axis=1, kind="stable")[:, :k]
    return order.astype(np.intp), np.take_along_axis(dist, order, axis=1)
