"""Losses for training on noisy pseudo-labels.

Two flavours of every loss live here:

* scalar NumPy functions of a probability vector ``p`` and class ``y``, each
  paired with an analytic gradient with respect to ``p`` (``*_grad``); these
  are the reference definitions;
* batched torch functions of logits used by the training loop.

All logarithms are floored at ``LOG_FLOOR``.
"""
from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

LOG_FLOOR = 1e-12
NUM_CLASSES = 2

# defaults for the robust losses
GAMMA = 2.0
RCE_LOG_ZERO = -4.0
NFL_ALPHA = 1.0
RCE_BETA = 1.0
IW_MAX = 10.0
NOISE_RATE_CAP = 0.49
PENCIL_K_INIT = 10.0
PENCIL_ALPHA = 0.1
PENCIL_BETA = 0.4


class DegenerateDenominator(UserWarning):
    """The focal-loss normaliser vanished; the sample contributes zero loss."""


class InsufficientData(ValueError):
    pass


class PhaseViolation(RuntimeError):
    pass


def _log(p):
    return np.log(np.maximum(p, LOG_FLOOR))


def _dlog(p):
    p = np.asarray(p, dtype=np.float64)
    return np.where(p > LOG_FLOOR, 1.0 / np.maximum(p, LOG_FLOOR), 0.0)


# -- cross entropy ---------------------------------------------------------


def cross_entropy(p, y):
    return float(-_log(p[y]))


def cross_entropy_grad(p, y):
    g = np.zeros(len(p))
    g[y] = -_dlog(p[y])
    return g


# -- normalised focal loss -------------------------------------------------


def focal_terms(p, gamma=GAMMA):
    """Per-class focal loss ``-(1 - p_k)^gamma log p_k``."""
    p = np.asarray(p, dtype=np.float64)
    return -((1.0 - p) ** gamma) * _log(p)


def _focal_terms_grad(p, gamma):
    """Derivative of each focal term with respect to its own p_k."""
    p = np.asarray(p, dtype=np.float64)
    q = 1.0 - p
    out = -(q ** gamma) * _dlog(p)
    if gamma != 0:
        out = out + gamma * q ** (gamma - 1.0) * _log(p)
    return out


def normalized_focal_loss(p, y, gamma=GAMMA):
    terms = focal_terms(p, gamma)
    denom = terms.sum()
    if denom < LOG_FLOOR:
        warnings.warn("focal normaliser below floor", DegenerateDenominator, stacklevel=2)
        return 0.0
    return float(terms[y] / denom)


def normalized_focal_loss_grad(p, y, gamma=GAMMA):
    terms = focal_terms(p, gamma)
    denom = terms.sum()
    if denom < LOG_FLOOR:
        return np.zeros(len(p))
    nfl = terms[y] / denom
    dterms = _focal_terms_grad(p, gamma)
    onehot = np.zeros(len(p))
    onehot[y] = 1.0
    return dterms * (onehot - nfl) / denom


# -- reverse cross entropy -------------------------------------------------


def reverse_cross_entropy(p, y, log_zero=RCE_LOG_ZERO):
    """``-sum_k p_k log q_k`` against a one-hot ``q``, with ``log 0 := log_zero``.

    On the simplex this is ``-log_zero * (1 - p_y)``.
    """
    if log_zero >= 0:
        raise ValueError("log_zero must be negative")
    p = np.asarray(p, dtype=np.float64)
    return float(-log_zero * (p.sum() - p[y]))


def reverse_cross_entropy_grad(p, y, log_zero=RCE_LOG_ZERO):
    g = np.full(len(p), -log_zero)
    g[y] = 0.0
    return g


def nfl_rce(p, y, alpha=NFL_ALPHA, beta=RCE_BETA, gamma=GAMMA, log_zero=RCE_LOG_ZERO):
    return alpha * normalized_focal_loss(p, y, gamma) + beta * reverse_cross_entropy(p, y, log_zero)


def nfl_rce_grad(p, y, alpha=NFL_ALPHA, beta=RCE_BETA, gamma=GAMMA, log_zero=RCE_LOG_ZERO):
    return (alpha * normalized_focal_loss_grad(p, y, gamma)
            + beta * reverse_cross_entropy_grad(p, y, log_zero))


# -- importance reweighting ------------------------------------------------


@dataclass(frozen=True)
class NoiseRates:
    rho_female: float = 0.0  # P(observed MALE | true FEMALE)
    rho_male: float = 0.0    # P(observed FEMALE | true MALE)

    def __post_init__(self):
        for r in (self.rho_female, self.rho_male):
            if not 0.0 <= r < 1.0:
                raise ValueError(f"noise rate {r} outside [0, 1)")
        if self.rho_female + self.rho_male >= 1.0:
            raise ValueError("noise rates must sum to less than 1")

    def as_array(self):
        return np.array([self.rho_female, self.rho_male])


def estimate_noise_rates(predictions, labels, cap=NOISE_RATE_CAP):
    """Anchor-point estimate: rho_c = 1 - max p[c] over samples labelled c."""
    P = np.asarray(predictions, dtype=np.float64)
    labels = np.asarray(labels)
    rho = []
    for c in range(NUM_CLASSES):
        sel = labels == c
        if not sel.any():
            raise InsufficientData(f"no samples labelled {c}")
        rho.append(float(np.clip(1.0 - P[sel, c].max(), 0.0, cap)))
    return NoiseRates(*rho)


def importance_weight(p_y, y, rates, w_max=IW_MAX):
    rho = rates.as_array()
    rho_y, rho_o = rho[y], rho[1 - y]
    w = (p_y - rho_o) / ((1.0 - rho_y - rho_o) * max(p_y, LOG_FLOOR))
    return float(np.clip(w, 0.0, w_max))


def iw_loss(p, y, rates, w_max=IW_MAX):
    return importance_weight(p[y], y, rates, w_max) * cross_entropy(p, y)


def iw_loss_grad(p, y, rates, w_max=IW_MAX):
    """Total derivative, including the weight's dependence on p_y."""
    rho = rates.as_array()
    rho_y, rho_o = rho[y], rho[1 - y]
    py = max(p[y], LOG_FLOOR)
    c = 1.0 - rho_y - rho_o
    raw = (py - rho_o) / (c * py)
    w = float(np.clip(raw, 0.0, w_max))
    dw = rho_o / (c * py * py) if 0.0 < raw < w_max else 0.0
    g = w * cross_entropy_grad(p, y)
    g[y] += dw * cross_entropy(p, y)
    return g


# -- PENCIL ----------------------------------------------------------------


class Phase(str, enum.Enum):
    WARMUP = "WARMUP"
    CORRECTION = "CORRECTION"
    FINETUNE = "FINETUNE"


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def pencil_init(labels, k_init=PENCIL_K_INIT, num_classes=NUM_CLASSES):
    labels = np.asarray(labels, dtype=np.intp)
    logits = np.zeros((labels.size, num_classes))
    logits[np.arange(labels.size), labels] = k_init
    return logits


def pencil_step(pred, logits, noisy_label, alpha_c=PENCIL_ALPHA, beta_c=PENCIL_BETA, phase=Phase.CORRECTION):
    """PENCIL loss for one sample and its gradient with respect to the label logits.

    CORRECTION: ``KL(softmax(logits) || pred) / K + alpha_c * CE(softmax(logits),
    noisy) + beta_c * H(pred)``. WARMUP is plain CE of ``pred`` against the noisy
    label; FINETUNE is CE against the corrected label. Outside CORRECTION the
    label logits are frozen and the returned gradient is zero.
    """
    phase = Phase(phase)
    pred = np.asarray(pred, dtype=np.float64)
    K = pred.size
    q = softmax(logits)
    if phase is Phase.WARMUP:
        return cross_entropy(pred, noisy_label), np.zeros(K)
    if phase is Phase.FINETUNE:
        return cross_entropy(pred, int(q.argmax())), np.zeros(K)
    log_q = np.log(np.maximum(q, LOG_FLOOR))
    log_p = _log(pred)
    kl = float((q * (log_q - log_p)).sum()) / K
    compat = float(-log_q[noisy_label])
    entropy = float(-(pred * log_p).sum())
    loss = kl + alpha_c * compat + beta_c * entropy
    # d/dq of the KL term, pulled back through the softmax Jacobian
    g_q = (log_q - log_p + 1.0) / K
    grad = q * (g_q - (q * g_q).sum())
    onehot = np.zeros(K)
    onehot[noisy_label] = 1.0
    grad += alpha_c * (q - onehot)
    return loss, grad


class PencilState:
    """Per-sample label logits plus the current PENCIL phase.

    Only the training loop writes to the state, and only in CORRECTION.
    """

    def __init__(self, noisy_labels, k_init=PENCIL_K_INIT, num_classes=NUM_CLASSES):
        self.noisy_labels = np.asarray(noisy_labels, dtype=np.intp)
        self.logits = pencil_init(self.noisy_labels, k_init, num_classes)
        self.phase = Phase.WARMUP

    def __len__(self):
        return self.noisy_labels.size

    def distribution(self):
        return softmax(self.logits)

    def corrected_labels(self):
        return self.logits.argmax(axis=1)

    def update(self, indices, grads, lr):
        if self.phase is not Phase.CORRECTION:
            raise PhaseViolation(f"label logits are frozen in phase {self.phase.value}")
        np.subtract.at(self.logits, np.asarray(indices), lr * np.asarray(grads))


def pencil_schedule(epoch, warmup=5, correction=15):
    if epoch < warmup:
        return Phase.WARMUP
    if epoch < warmup + correction:
        return Phase.CORRECTION
    return Phase.FINETUNE


# -- batched torch versions ------------------------------------------------


def _log_probs(logits):
    return torch.log(torch.clamp(torch.softmax(logits, dim=1), min=LOG_FLOOR))


def torch_cross_entropy(logits, y, reduction="mean"):
    loss = -_log_probs(logits).gather(1, y[:, None]).squeeze(1)
    return _reduce(loss, reduction)


def torch_nfl_rce(logits, y, alpha=NFL_ALPHA, beta=RCE_BETA, gamma=GAMMA, log_zero=RCE_LOG_ZERO, reduction="mean"):
    p = torch.softmax(logits, dim=1)
    logp = torch.log(torch.clamp(p, min=LOG_FLOOR))
    focal = -((1.0 - p) ** gamma) * logp
    denom = focal.sum(dim=1)
    ok = denom >= LOG_FLOOR
    nfl = torch.where(ok, focal.gather(1, y[:, None]).squeeze(1) / torch.clamp(denom, min=LOG_FLOOR),
                      torch.zeros_like(denom))
    rce = -log_zero * (p.sum(dim=1) - p.gather(1, y[:, None]).squeeze(1))
    return _reduce(alpha * nfl + beta * rce, reduction)


def torch_iw_loss(logits, y, rates, w_max=IW_MAX, reduction="mean"):
    """CE weighted by the (detached) importance weight of each sample."""
    p = torch.softmax(logits, dim=1).detach()
    rho = torch.as_tensor(rates.as_array(), dtype=p.dtype)
    p_y = p.gather(1, y[:, None]).squeeze(1)
    rho_y, rho_o = rho[y], rho[1 - y]
    w = (p_y - rho_o) / ((1.0 - rho_y - rho_o) * torch.clamp(p_y, min=LOG_FLOOR))
    w = torch.clamp(w, 0.0, w_max)
    return _reduce(w * torch_cross_entropy(logits, y, reduction="none"), reduction)


def torch_pencil_loss(logits, label_logits, noisy, alpha_c=PENCIL_ALPHA, beta_c=PENCIL_BETA, reduction="mean"):
    """CORRECTION-phase PENCIL loss; differentiable in both argument logits."""
    K = logits.shape[1]
    logp = _log_probs(logits)
    p = torch.softmax(logits, dim=1)
    q = torch.softmax(label_logits, dim=1)
    logq = torch.log(torch.clamp(q, min=LOG_FLOOR))
    kl = (q * (logq - logp)).sum(dim=1) / K
    compat = -logq.gather(1, noisy[:, None]).squeeze(1)
    entropy = -(p * logp).sum(dim=1)
    return _reduce(kl + alpha_c * compat + beta_c * entropy, reduction)


def _reduce(loss, reduction):
    if reduction == "mean":
        return loss.mean()
    if reduction == "sum":
        return loss.sum()
    return loss


__all__ = [
    "cross_entropy", "cross_entropy_grad", "normalized_focal_loss",
    "normalized_focal_loss_grad", "reverse_cross_entropy", "reverse_cross_entropy_grad",
    "nfl_rce", "nfl_rce_grad", "NoiseRates", "estimate_noise_rates", "iw_loss",
    "iw_loss_grad", "importance_weight", "pencil_init", "pencil_step", "PencilState",
    "Phase", "pencil_schedule", "torch_cross_entropy", "torch_nfl_rce", "torch_iw_loss",
    "torch_pencil_loss", "DegenerateDenominator", "InsufficientData", "PhaseViolation",
]
