"""ResNet-18 classifier on skeleton images, and the evaluation protocols.

Training samples are normalised :class:`~gaitgender.skeleton.SkeletonSequence`
objects (augmented and encoded on the fly) or precomputed TSSI arrays (used
as-is). F1 is macro-averaged over the two classes throughout: a classifier that
always predicts one class on balanced data scores exactly 1/3.
"""
from __future__ import annotations

import copy
import enum
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
import torchvision

from . import losses
from .skeleton import SkeletonSequence
from .tssi import DEFAULT_T, Augmenter, encode_tssi, to_pixels

log = logging.getLogger(__name__)

NUM_CLASSES = 2


class LossKind(str, enum.Enum):
    CE = "ce"
    NFL_RCE = "nflrce"
    IW = "iw"
    PENCIL = "pencil"


class Balance(str, enum.Enum):
    OVERSAMPLE_MINORITY = "oversample"
    UNDERSAMPLE_MAJORITY = "undersample"
    NONE = "none"


class SingleClassDataset(ValueError):
    pass


class NonFiniteLoss(FloatingPointError):
    pass


class TooFewSubjects(ValueError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 128
    epochs: int = 50
    patience: int = 10
    loss: LossKind = LossKind.CE
    balance: Balance = Balance.NONE
    seed: int = 0
    frames: int = DEFAULT_T
    input_size: int = 64
    augment: bool = True
    # robust-loss settings
    gamma: float = losses.GAMMA
    rce_log_zero: float = losses.RCE_LOG_ZERO
    nfl_alpha: float = losses.NFL_ALPHA
    rce_beta: float = losses.RCE_BETA
    iw_max: float = losses.IW_MAX
    iw_warmup_epochs: int = 1
    pencil_k_init: float = losses.PENCIL_K_INIT
    pencil_alpha: float = losses.PENCIL_ALPHA
    pencil_beta: float = losses.PENCIL_BETA
    pencil_warmup: int = 5
    pencil_correction: int = 15
    pencil_label_lr: float = 4.0

    def __post_init__(self):
        self.loss = LossKind(self.loss)
        self.balance = Balance(self.balance)
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_dict(self):
        d = asdict(self)
        d["loss"] = self.loss.value
        d["balance"] = self.balance.value
        return d


# -- class balancing --------------------------------------------------------


class BalancedSampler:
    """Per-epoch index stream with equalised class counts.

    OVERSAMPLE repeats reshuffled minority indices up to the majority count;
    UNDERSAMPLE draws the minority count from the majority without replacement.
    Epoch ``e`` is a pure function of ``(seed, e)``.
    """

    def __init__(self, labels, mode=Balance.OVERSAMPLE_MINORITY, seed=0):
        self.labels = np.asarray(labels, dtype=np.intp)
        self.mode = Balance(mode)
        self.seed = seed
        self.by_class = [np.flatnonzero(self.labels == c) for c in range(NUM_CLASSES)]
        if self.mode is not Balance.NONE and any(ix.size == 0 for ix in self.by_class):
            raise SingleClassDataset("balancing needs at least one sample per class")

    def epoch(self, e):
        rng = np.random.default_rng([self.seed, e])
        if self.mode is Balance.NONE:
            return rng.permutation(self.labels.size)
        sizes = [ix.size for ix in self.by_class]
        if self.mode is Balance.OVERSAMPLE_MINORITY:
            target = max(sizes)
            parts = []
            for ix in self.by_class:
                reps = -(-target // ix.size)
                stream = np.concatenate([rng.permutation(ix) for _ in range(reps)])
                parts.append(stream[:target])
        else:
            target = min(sizes)
            parts = [rng.choice(ix, size=target, replace=False) for ix in self.by_class]
        return rng.permutation(np.concatenate(parts))


def make_balanced_sampler(labels, mode, seed=0):
    return BalancedSampler(labels, mode, seed)


# -- model -----------------------------------------------------------------


def build_backbone(seed):
    torch.manual_seed(seed)
    return torchvision.models.resnet18(weights=None, num_classes=NUM_CLASSES)


def images_to_tensor(images, input_size):
    """Stack TSSI arrays ``(rows, T, 3)`` into a resized ``(N, 3, S, S)`` batch."""
    x = torch.as_tensor(np.stack([to_pixels(im) for im in images]), dtype=torch.float32)
    x = x.permute(0, 3, 1, 2)
    return F.interpolate(x, size=(input_size, input_size), mode="bilinear", align_corners=False)


class ModelHandle:
    """A trained classifier plus the settings needed to feed it."""

    def __init__(self, net, frames=DEFAULT_T, input_size=64):
        self.net = net
        self.frames = frames
        self.input_size = input_size
        self.net.eval()

    def encode(self, sample):
        if isinstance(sample, SkeletonSequence):
            return encode_tssi(sample, self.frames)
        return np.asarray(sample)

    @torch.no_grad()
    def predict_proba(self, samples, batch_size=256):
        self.net.eval()
        images = [self.encode(s) for s in samples]
        out = []
        for i in range(0, len(images), batch_size):
            x = images_to_tensor(images[i:i + batch_size], self.input_size)
            out.append(torch.softmax(self.net(x), dim=1).double().numpy())
        return np.concatenate(out) if out else np.zeros((0, NUM_CLASSES))

    def predict(self, sample):
        return self.predict_proba([sample])[0]

    def save(self, path):
        path = Path(path)
        torch.save(self.net.state_dict(), path)
        path.with_suffix(".json").write_text(
            json.dumps({"frames": self.frames, "input_size": self.input_size}, sort_keys=True)
        )

    @classmethod
    def load(cls, path):
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        net = torchvision.models.resnet18(weights=None, num_classes=NUM_CLASSES)
        net.load_state_dict(torch.load(path, weights_only=True))
        return cls(net, meta["frames"], meta["input_size"])


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_f1: float | None


@dataclass
class TrainResult:
    model: ModelHandle
    log: list = field(default_factory=list)
    best_epoch: int = -1
    noise_rates: losses.NoiseRates | None = None
    corrected_labels: np.ndarray | None = None

    def log_lines(self):
        lines = ["epoch\ttrain_loss\tval_f1"]
        for r in self.log:
            vf = "" if r.val_f1 is None else f"{r.val_f1:.6f}"
            lines.append(f"{r.epoch}\t{r.train_loss:.6f}\t{vf}")
        return "\n".join(lines) + "\n"


# -- training ---------------------------------------------------------------


def _seed_everything(seed):
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)


def _batch_images(samples, idx, epoch, cfg, augmenter):
    images = []
    for i in idx:
        s = samples[i]
        if isinstance(s, SkeletonSequence):
            if augmenter is not None:
                # per-sample stream derived from (seed, epoch, index): independent of batching
                s = augmenter(s, np.random.default_rng([cfg.seed, 1, epoch, int(i)]))
            images.append(encode_tssi(s, cfg.frames))
        else:
            images.append(np.asarray(s))
    return images_to_tensor(images, cfg.input_size)


@torch.no_grad()
def recalibrate_batchnorm(net, samples, cfg, max_samples=1024):
    """Recompute BatchNorm running statistics from un-augmented training images.

    With few optimiser steps the exponential running averages lag far behind
    the weights, and eval-mode predictions collapse to one class; a cumulative
    average over one clean pass fixes that.
    """
    bns = [m for m in net.modules() if isinstance(m, torch.nn.modules.batchnorm._BatchNorm)]
    if not bns:
        return
    saved = [m.momentum for m in bns]
    for m in bns:
        m.reset_running_stats()
        m.momentum = None
    net.train()
    idx = np.arange(len(samples))
    if idx.size > max_samples:
        idx = np.sort(np.random.default_rng([cfg.seed, 2]).choice(idx, max_samples, replace=False))
    for start in range(0, idx.size, cfg.batch_size):
        part = idx[start:start + cfg.batch_size]
        if part.size < 2:
            continue
        net(_batch_images(samples, part, 0, cfg, None))
    for m, mom in zip(bns, saved):
        m.momentum = mom
    net.eval()


def train(samples, labels, config, val=None):
    """Train a ResNet-18 on ``samples`` with (possibly noisy) class ``labels``.

    ``val`` is an optional ``(samples, labels)`` pair used for early stopping on
    macro F1; without it the full epoch budget runs and the final weights are
    kept. Returns a :class:`TrainResult`.
    """
    cfg = config
    labels = np.asarray(labels, dtype=np.intp)
    if len(samples) == 0:
        raise ValueError("empty training set")
    if len(samples) != labels.size:
        raise ValueError("one label per sample required")
    _seed_everything(cfg.seed)
    net = build_backbone(cfg.seed)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate)
    sampler = BalancedSampler(labels, cfg.balance, cfg.seed)
    augmenter = Augmenter() if cfg.augment else None
    handle = ModelHandle(net, cfg.frames, cfg.input_size)
    result = TrainResult(handle)

    pencil = losses.PencilState(labels, cfg.pencil_k_init) if cfg.loss is LossKind.PENCIL else None
    rates = None
    best = (-1.0, None, -1)
    stale = 0
    for epoch in range(cfg.epochs):
        if cfg.loss is LossKind.IW and epoch == cfg.iw_warmup_epochs:
            rates = _estimate_rates(handle, samples, labels, val)
            result.noise_rates = rates
            log.info("estimated noise rates %s", rates)
        if pencil is not None:
            pencil.phase = losses.pencil_schedule(epoch, cfg.pencil_warmup, cfg.pencil_correction)
        net.train()
        order = sampler.epoch(epoch)
        total, count = 0.0, 0
        for start in range(0, order.size, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if idx.size < 2:
                continue  # batch norm needs more than one sample
            x = _batch_images(samples, idx, epoch, cfg, augmenter)
            y = torch.as_tensor(labels[idx])
            logits = net(x)
            loss, label_grad = _batch_loss(cfg, logits, y, idx, rates, pencil)
            if not torch.isfinite(loss):
                raise NonFiniteLoss(f"epoch {epoch}, batch at {start}: loss={loss.item()}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            if label_grad is not None:
                pencil.update(idx, label_grad, cfg.pencil_label_lr)
            total += float(loss.detach()) * idx.size
            count += idx.size
        train_loss = total / max(count, 1)
        recalibrate_batchnorm(net, samples, cfg)
        val_f1 = None
        if val is not None:
            val_f1 = macro_f1(np.asarray(val[1]), handle.predict_proba(val[0]).argmax(axis=1))
        result.log.append(EpochRecord(epoch, train_loss, val_f1))
        log.debug("epoch %d loss %.4f val_f1 %s", epoch, train_loss, val_f1)
        if val is not None:
            if val_f1 > best[0]:
                best = (val_f1, copy.deepcopy(net.state_dict()), epoch)
                stale = 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
    if best[1] is not None:
        net.load_state_dict(best[1])
        result.best_epoch = best[2]
    else:
        result.best_epoch = cfg.epochs - 1
    net.eval()
    if pencil is not None:
        result.corrected_labels = pencil.corrected_labels()
    return result


def _batch_loss(cfg, logits, y, idx, rates, pencil):
    """Batch loss, plus per-sample label-logit gradients in the PENCIL correction phase."""
    if cfg.loss is LossKind.CE:
        return losses.torch_cross_entropy(logits, y), None
    if cfg.loss is LossKind.NFL_RCE:
        return losses.torch_nfl_rce(logits, y, cfg.nfl_alpha, cfg.rce_beta, cfg.gamma, cfg.rce_log_zero), None
    if cfg.loss is LossKind.IW:
        if rates is None:
            return losses.torch_cross_entropy(logits, y), None
        return losses.torch_iw_loss(logits, y, rates, cfg.iw_max), None
    phase = pencil.phase
    if phase is losses.Phase.WARMUP:
        return losses.torch_cross_entropy(logits, y), None
    if phase is losses.Phase.FINETUNE:
        corrected = torch.as_tensor(pencil.corrected_labels()[idx])
        return losses.torch_cross_entropy(logits, corrected), None
    label_logits = torch.tensor(pencil.logits[idx], dtype=logits.dtype, requires_grad=True)
    loss = losses.torch_pencil_loss(logits, label_logits, y, cfg.pencil_alpha, cfg.pencil_beta, reduction="sum")
    (g,) = torch.autograd.grad(loss, label_logits, retain_graph=True)
    return loss / idx.size, g.double().numpy()


def _estimate_rates(handle, samples, labels, val):
    if val is not None:
        pred = handle.predict_proba(val[0])
        return losses.estimate_noise_rates(pred, np.asarray(val[1]))
    return losses.estimate_noise_rates(handle.predict_proba(samples), labels)


# -- metrics ----------------------------------------------------------------


def confusion(y_true, y_pred, num_classes=NUM_CLASSES):
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=np.intp), np.asarray(y_pred, dtype=np.intp)), 1)
    return cm


def per_class_f1(y_true, y_pred, num_classes=NUM_CLASSES):
    cm = confusion(y_true, y_pred, num_classes)
    tp = np.diag(cm).astype(float)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    denom = 2 * tp + fp + fn
    return np.divide(2 * tp, denom, out=np.zeros(num_classes), where=denom > 0)


def macro_f1(y_true, y_pred, num_classes=NUM_CLASSES):
    """Unweighted mean of per-class F1; a class with no support or predictions scores 0."""
    return float(per_class_f1(y_true, y_pred, num_classes).mean())


@dataclass
class Metrics:
    f1: float
    accuracy: float
    per_group: dict = field(default_factory=dict)
    group_mean: float | None = None
    empty_groups: list = field(default_factory=list)
    f1_std: float = 0.0
    per_group_std: dict = field(default_factory=dict)

    def table(self, title="", scale=100.0):
        """Tab-delimited one-row table: groups as columns, then Mean and All."""
        keys = list(self.per_group)
        head = [title] + [str(k) for k in keys] + ["Mean", "All"]
        row = [""]
        for k in keys:
            v = self.per_group[k]
            if v is None:
                row.append("-")
                continue
            s = f"{scale * v:.2f}"
            if k in self.per_group_std:
                s += f" ± {scale * self.per_group_std[k]:.2f}"
            row.append(s)
        row.append("-" if self.group_mean is None else f"{scale * self.group_mean:.2f}")
        all_s = f"{scale * self.f1:.2f}"
        if self.f1_std:
            all_s += f" ± {scale * self.f1_std:.2f}"
        row.append(all_s)
        return "\t".join(head) + "\n" + "\t".join(row) + "\n"


def metrics_from_predictions(y_true, y_pred, groups=None, expected_groups=None):
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    m = Metrics(f1=macro_f1(y_true, y_pred), accuracy=float((y_true == y_pred).mean()) if y_true.size else 0.0)
    if groups is None:
        return m
    groups = np.asarray(groups)
    keys = list(expected_groups) if expected_groups is not None else sorted(set(groups.tolist()))
    for k in keys:
        sel = groups == k
        if not sel.any():
            m.per_group[k] = None
            m.empty_groups.append(k)
            continue
        m.per_group[k] = macro_f1(y_true[sel], y_pred[sel])
    vals = [v for v in m.per_group.values() if v is not None]
    m.group_mean = float(np.mean(vals)) if vals else None
    return m


def evaluate_f1(model, samples, labels, groups=None, expected_groups=None):
    pred = model.predict_proba(samples).argmax(axis=1) if len(samples) else np.zeros(0, dtype=int)
    return metrics_from_predictions(labels, pred, groups, expected_groups)


def aggregate_metrics(runs):
    """Mean and population std over repeated :class:`Metrics`."""
    f1s = np.array([r.f1 for r in runs])
    out = Metrics(f1=float(f1s.mean()), accuracy=float(np.mean([r.accuracy for r in runs])),
                  f1_std=float(f1s.std()))
    keys = list(runs[0].per_group)
    for k in keys:
        vals = [r.per_group.get(k) for r in runs if r.per_group.get(k) is not None]
        out.per_group[k] = float(np.mean(vals)) if vals else None
        if vals:
            out.per_group_std[k] = float(np.std(vals))
    means = [r.group_mean for r in runs if r.group_mean is not None]
    out.group_mean = float(np.mean(means)) if means else None
    return out


# -- protocols ----------------------------------------------------------------


def subject_holdout_split(subjects, n_holdout, rng):
    """Boolean validation mask holding out ``n_holdout`` whole subjects."""
    subjects = np.asarray(subjects)
    unique = np.array(sorted(set(subjects.tolist())))
    if unique.size < n_holdout + 1:
        raise TooFewSubjects(f"{unique.size} subjects, need more than {n_holdout}")
    held = rng.choice(unique, size=n_holdout, replace=False)
    return np.isin(subjects, held)


def crossval_fvg(samples, train_labels, true_labels, subjects, variations, config,
                 holdout_subjects=46, repeats=3, variation_order=("WS", "CB", "CL", "CBG")):
    """Repeated subject-disjoint hold-out with per-variation F1 (mean ± std).

    The model trains on ``train_labels`` (e.g. face pseudo-labels) of the
    training subjects and is scored against ``true_labels`` of the held-out
    subjects. Returns ``(aggregate Metrics, per-repeat Metrics, masks)``.
    """
    train_labels = np.asarray(train_labels)
    true_labels = np.asarray(true_labels)
    variations = np.asarray([getattr(v, "value", v) for v in variations])
    runs, masks = [], []
    for r in range(repeats):
        rng = np.random.default_rng([config.seed, 46, r])
        val_mask = subject_holdout_split(subjects, holdout_subjects, rng)
        masks.append(val_mask)
        tr = np.flatnonzero(~val_mask & (train_labels >= 0))
        va = np.flatnonzero(val_mask)
        cfg = replace(config, seed=config.seed + r)
        res = train([samples[i] for i in tr], train_labels[tr], cfg)
        runs.append(evaluate_f1(res.model, [samples[i] for i in va], true_labels[va],
                                variations[va], variation_order))
    return aggregate_metrics(runs), runs, masks


def combine_semisupervised_labels(front_labels, propagated_labels, propagated_conf, tau):
    """Front-view labels where present, else propagated labels with confidence >= tau."""
    front = np.asarray(front_labels)
    prop = np.asarray(propagated_labels)
    conf = np.asarray(propagated_conf, dtype=float)
    out = np.full(front.shape, -1, dtype=np.intp)
    use_prop = (front < 0) & (prop >= 0) & (conf >= tau)
    out[use_prop] = prop[use_prop]
    out[front >= 0] = front[front >= 0]
    return out


def train_semisupervised(samples, front_labels, propagated_labels, propagated_conf, config, tau=0.6, val=None):
    """One model on front-view labels plus confident propagated labels."""
    y = combine_semisupervised_labels(front_labels, propagated_labels, propagated_conf, tau)
    keep = np.flatnonzero(y >= 0)
    return train([samples[i] for i in keep], y[keep], config, val=val)
