"""Label propagation from labelled front views to other viewpoints.

Sequences are embedded into a unit-norm gait space; labels then move either
by nearest-labelled-neighbour voting or over a kNN affinity graph (label
spreading, or spectral clustering followed by a per-cluster vote).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Protocol

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .faces import Label, LabelSource, PseudoLabel
from .skeleton import (
    L_ANKLE, L_ELBOW, L_HIP, L_KNEE, L_SHOULDER, L_WRIST, NUM_JOINTS,
    R_ANKLE, R_ELBOW, R_HIP, R_KNEE, R_SHOULDER, R_WRIST, SequenceUnusable,
)

NUM_CLASSES = 2
AUTO = "auto"


class EmbedderUnavailable(RuntimeError):
    pass


class TooFewSamples(ValueError):
    pass


class NoLabeledSamples(ValueError):
    pass


class SingularSystem(RuntimeError):
    pass


class GaitEmbedder(Protocol):
    dim: int

    def embed(self, seq) -> np.ndarray:
        """Unit-norm embedding of a normalised sequence; deterministic."""


# -- handcrafted fallback embedding ---------------------------------------

LIMB_TRIPLETS = (
    (L_SHOULDER, L_ELBOW, L_WRIST),
    (R_SHOULDER, R_ELBOW, R_WRIST),
    (L_HIP, L_KNEE, L_ANKLE),
    (R_HIP, R_KNEE, R_ANKLE),
)
N_FREQ = 3
HANDCRAFTED_DIM = 4 * NUM_JOINTS + 2 * len(LIMB_TRIPLETS) + 2 * N_FREQ

# Relative block weights. Normalised y is divided by the torso length, which
# barely changes with viewpoint, while normalised x is divided by the shoulder
# width, which collapses toward profile views; so y dispersion carries the
# embedding and the view-sensitive blocks only break ties.
BLOCK_WEIGHTS = {
    "mean_x": 0.01,
    "mean_y": 0.1,
    "std_x": 0.1,
    "std_y": 1.0,
    "angle_mean": 0.1,
    "angle_std": 0.1,
    "ankle_freq": 0.01,
}


def _weight_vector(weights):
    coord = lambda wx, wy: np.tile([wx, wy], NUM_JOINTS)  # noqa: E731
    return np.concatenate([
        coord(weights["mean_x"], weights["mean_y"]),
        coord(weights["std_x"], weights["std_y"]),
        np.full(len(LIMB_TRIPLETS), weights["angle_mean"]),
        np.full(len(LIMB_TRIPLETS), weights["angle_std"]),
        np.full(2 * N_FREQ, weights["ankle_freq"]),
    ])


def _interior_angles(xy, a, b, c):
    u = xy[:, a] - xy[:, b]
    v = xy[:, c] - xy[:, b]
    cross = u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]
    dot = (u * v).sum(axis=1)
    return np.arctan2(np.abs(cross), dot)


def handcrafted_features(seq):
    """Un-normalised feature vector; see :func:`handcrafted_embedding`."""
    if len(seq) == 0:
        raise SequenceUnusable("empty sequence")
    xy = seq.data[:, :, :2]
    means = xy.mean(axis=0).ravel()
    stds = xy.std(axis=0).ravel()
    angles = np.stack([_interior_angles(xy, *t) for t in LIMB_TRIPLETS], axis=1)
    freq = []
    for ankle in (L_ANKLE, R_ANKLE):
        x = xy[:, ankle, 0] - xy[:, ankle, 0].mean()
        mag = np.abs(np.fft.rfft(x))[1:] / len(x)
        top = np.sort(mag)[::-1][:N_FREQ]
        freq.append(np.pad(top, (0, N_FREQ - top.size)))
    return np.concatenate([means, stds, angles.mean(axis=0), angles.std(axis=0), *freq])


def handcrafted_embedding(seq, weights=None):
    """Pose statistics of a normalised sequence, block-weighted and L2-normalised.

    Layout (82 dims): per-joint x/y means (34, interleaved x0 y0 x1 y1 ...),
    per-joint x/y stds (34, same order), elbow and knee interior-angle means
    (4) and stds (4), and the three largest non-DC Fourier magnitudes of each
    ankle's x trajectory (6, left ankle first). Each block is scaled by
    ``weights`` (default :data:`BLOCK_WEIGHTS`) before normalisation.
    """
    f = handcrafted_features(seq) * _weight_vector({**BLOCK_WEIGHTS, **(weights or {})})
    norm = np.linalg.norm(f)
    if norm == 0.0:
        raise SequenceUnusable("all-zero feature vector")
    return f / norm


class HandcraftedEmbedder:
    dim = HANDCRAFTED_DIM

    def __init__(self, weights=None):
        self.weights = weights

    def embed(self, seq):
        return handcrafted_embedding(seq, self.weights)


# -- affinity graph --------------------------------------------------------


@dataclass
class AffinityGraph:
    weights: sp.csr_matrix
    k: int
    sigma: float

    @property
    def n(self):
        return self.weights.shape[0]


def build_knn_graph(embeddings, k=20, sigma=AUTO):
    """Gaussian-weighted kNN graph under cosine distance, symmetrised by max."""
    v = np.asarray(embeddings, dtype=np.float64)
    n = v.shape[0]
    if k < 1 or n < k + 1:
        raise TooFewSamples(f"need at least k+1={k + 1} samples, got {n}")
    idx, dist = kernels.knn_cosine(v, k)
    dist = np.maximum(dist, 0.0)
    if sigma == AUTO:
        sigma = float(np.median(dist))
        if sigma <= 0.0:
            positive = dist[dist > 0]
            sigma = float(positive.mean()) if positive.size else 1.0
    sigma = float(sigma)
    w = np.exp(-(dist ** 2) / (2.0 * sigma ** 2))
    rows = np.repeat(np.arange(n), k)
    W = sp.csr_matrix((w.ravel(), (rows, idx.ravel())), shape=(n, n))
    W = W.maximum(W.T).tocsr()
    W.setdiag(0.0)
    W.eliminate_zeros()
    return AffinityGraph(W, k, sigma)


# -- propagation -----------------------------------------------------------


class Mode(str, enum.Enum):
    SPREADING = "spreading"
    CLUSTER_VOTE = "cluster_vote"


@dataclass
class PropagationResult:
    labels: np.ndarray       # int class per sequence
    confidence: np.ndarray   # score in [0, 1] per sequence
    labeled: np.ndarray      # bool mask of originally labelled inputs
    method: str = ""

    def pseudo_labels(self, tau=0.0):
        """PseudoLabel per sequence; propagated labels below ``tau`` become None.

        ``score`` follows the PseudoLabel convention of P(FEMALE).
        """
        out = []
        for y, c, was_labeled in zip(self.labels, self.confidence, self.labeled):
            if was_labeled:
                out.append(None)
                continue
            if c < tau:
                out.append(None)
                continue
            score = c if y == Label.FEMALE else 1.0 - c
            out.append(PseudoLabel(Label(int(y)), float(score), LabelSource.PROPAGATED))
        return out


def _labeled_arrays(labels):
    labels = np.asarray(labels)
    mask = labels >= 0
    if not mask.any():
        raise NoLabeledSamples("no labelled samples")
    return labels, mask


def propagate_nn(embeddings, labels, k_vote=5):
    """Majority vote of the ``k_vote`` nearest labelled embeddings.

    ``labels`` holds a class index per sequence and -1 for unlabelled ones.
    Confidence is the winning vote fraction; ties go to the single nearest
    labelled neighbour.
    """
    v = np.asarray(embeddings, dtype=np.float64)
    labels, mask = _labeled_arrays(labels)
    lab_idx = np.flatnonzero(mask)
    k = min(k_vote, lab_idx.size)
    out = labels.copy()
    conf = np.ones(len(labels))
    unl = np.flatnonzero(~mask)
    if unl.size:
        dist = 1.0 - v[unl] @ v[lab_idx].T
        order = np.argsort(dist, axis=1, kind="stable")[:, :k]
        votes = labels[lab_idx][order]
        counts = np.stack([(votes == c).sum(axis=1) for c in range(NUM_CLASSES)], axis=1)
        best = counts.max(axis=1)
        winner = counts.argmax(axis=1)
        tie = (counts == best[:, None]).sum(axis=1) > 1
        winner[tie] = votes[tie, 0]
        out[unl] = winner
        conf[unl] = best / k
    return PropagationResult(out, conf, mask, method="nn")


def normalized_affinity(W):
    """``D^-1/2 W D^-1/2``; isolated nodes get zero rows."""
    deg = np.asarray(W.sum(axis=1)).ravel()
    inv = np.zeros_like(deg)
    inv[deg > 0] = 1.0 / np.sqrt(deg[deg > 0])
    D = sp.diags(inv)
    return (D @ W @ D).tocsc()


def label_spreading(graph, labels, alpha=0.99):
    """Solve ``(I - alpha S) F = Y``; returns F with one column per class."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    if 1.0 - alpha < 1e-10:
        raise SingularSystem(f"alpha={alpha} is numerically 1")
    labels, mask = _labeled_arrays(labels)
    n = graph.n
    Y = np.zeros((n, NUM_CLASSES))
    Y[np.flatnonzero(mask), labels[mask]] = 1.0
    A = (sp.identity(n, format="csc") - alpha * normalized_affinity(graph.weights)).tocsc()
    F = spla.splu(A).solve(Y)
    if not np.isfinite(F).all():
        raise SingularSystem("non-finite solution; retry with a smaller alpha")
    return F


def propagate_spectral(
    graph,
    labels,
    mode=Mode.SPREADING,
    alpha=0.99,
    n_clusters=None,
    embeddings=None,
    k_vote=5,
    min_mass=1e-3,
    seed=0,
):
    """Graph-based propagation; labelled rows always keep their labels.

    SPREADING: rows whose propagated mass is below ``min_mass`` times the mean
    mass of the labelled rows count as unreached and fall back to
    :func:`propagate_nn` (which needs ``embeddings``). CLUSTER_VOTE: spectral
    clustering into ``n_clusters`` groups, each taking the majority label of
    its labelled members; clusters without one fall back to
    :func:`propagate_nn`.
    """
    mode = Mode(mode)
    labels, mask = _labeled_arrays(labels)
    n = graph.n
    out = labels.copy()
    conf = np.ones(n)
    fallback = np.zeros(n, dtype=bool)

    if mode is Mode.SPREADING:
        F = label_spreading(graph, labels, alpha)
        mass = F.sum(axis=1)
        ref = mass[mask].mean()
        reached = mass > min_mass * ref
        with np.errstate(invalid="ignore", divide="ignore"):
            P = F / mass[:, None]
        unl = ~mask
        hit = unl & reached
        out[hit] = P[hit].argmax(axis=1)
        conf[hit] = P[hit].max(axis=1)
        fallback = unl & ~reached
    else:
        present = np.unique(labels[mask])
        if present.size < NUM_CLASSES:
            raise NoLabeledSamples("CLUSTER_VOTE needs a labelled sample of every class")
        from sklearn.cluster import SpectralClustering

        C = n_clusters or NUM_CLASSES
        clusters = SpectralClustering(
            n_clusters=C, affinity="precomputed", random_state=seed, assign_labels="kmeans"
        ).fit_predict(graph.weights.toarray())
        for c in range(C):
            members = clusters == c
            lab = members & mask
            if not lab.any():
                fallback |= members & ~mask
                continue
            counts = np.bincount(labels[lab], minlength=NUM_CLASSES)
            winner = int(counts.argmax())
            frac = counts[winner] / counts.sum()
            sel = members & ~mask
            out[sel] = winner
            conf[sel] = frac

    if fallback.any():
        if embeddings is None:
            raise ValueError("unreached nodes need embeddings for the nearest-neighbour fallback")
        nn = propagate_nn(embeddings, labels, k_vote=k_vote)
        out[fallback] = nn.labels[fallback]
        conf[fallback] = nn.confidence[fallback]
    out[mask] = labels[mask]
    conf[mask] = 1.0
    return PropagationResult(out, conf, mask, method=f"spectral-{mode.value}")


# -- evaluation ------------------------------------------------------------


def pseudo_label_report(result, ground_truth, angles, source_angle=0):
    """Pseudo-label accuracy per view angle.

    Returns ``(table, mean)`` where ``table`` maps angle to accuracy over the
    unlabelled sequences at that angle and ``mean`` averages the non-source
    angles.
    """
    gt = np.asarray(ground_truth)
    angles = np.asarray(angles)
    unl = ~result.labeled
    table = {}
    for a in sorted(set(angles.tolist())):
        sel = (angles == a) & unl
        if a == source_angle and not sel.any():
            table[a] = None
            continue
        table[a] = float((result.labels[sel] == gt[sel]).mean()) if sel.any() else None
    vals = [v for a, v in table.items() if a != source_angle and v is not None]
    mean = float(np.mean(vals)) if vals else float("nan")
    return table, mean
