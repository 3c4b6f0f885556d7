import numpy as np
import pytest
import torch
from sklearn.metrics import f1_score

from gaitgender import losses, training as T
from gaitgender.training import Balance, LossKind, TrainConfig

FAST = dict(input_size=32, batch_size=32, augment=False)


def separable_images(rng, n=48):
    """TSSI-shaped arrays whose class is the sign of every entry."""
    y = np.arange(n) % 2
    base = np.where(y[:, None, None, None] == 1, 1.5, -1.5)
    x = base + rng.normal(0, 0.3, size=(n, 33, 20, 3))
    return list(x), y


# -- sampler --------------------------------------------------------------------


def counts(labels, idx):
    return np.bincount(np.asarray(labels)[idx], minlength=2)


def test_oversample_64_36():
    labels = np.array([1] * 64 + [0] * 36)
    s = T.make_balanced_sampler(labels, Balance.OVERSAMPLE_MINORITY, seed=0)
    for e in range(5):
        c = counts(labels, s.epoch(e))
        assert abs(c[0] - c[1]) <= 1 and c[1] == 64
        # every minority index is used, none more than twice
        reps = np.bincount(s.epoch(e)[labels[s.epoch(e)] == 0], minlength=100)[:100][labels == 0]
        assert reps.min() >= 1 and reps.max() <= 2


def test_undersample_92_32():
    labels = np.array([1] * 92 + [0] * 32)
    s = T.make_balanced_sampler(labels, Balance.UNDERSAMPLE_MAJORITY, seed=0)
    for e in range(5):
        idx = s.epoch(e)
        assert counts(labels, idx).tolist() == [32, 32]
        assert len(set(idx.tolist())) == 64


def test_balanced_input_unchanged_and_deterministic():
    labels = np.array([0, 1] * 20)
    for mode in Balance:
        s = T.make_balanced_sampler(labels, mode, seed=3)
        assert counts(labels, s.epoch(0)).tolist() == [20, 20]
        assert np.array_equal(s.epoch(4), T.make_balanced_sampler(labels, mode, seed=3).epoch(4))
    assert not np.array_equal(s.epoch(0), s.epoch(1))


def test_single_class_rejected():
    with pytest.raises(T.SingleClassDataset):
        T.make_balanced_sampler([1, 1, 1], Balance.OVERSAMPLE_MINORITY)


# -- metrics --------------------------------------------------------------------


def test_macro_f1_examples():
    y = np.array([0, 0, 1, 1] * 5)
    assert T.macro_f1(y, y) == 1.0
    assert T.macro_f1(y, np.zeros_like(y)) == pytest.approx(1 / 3, abs=1e-15)
    assert T.macro_f1(y, np.ones_like(y)) == pytest.approx(1 / 3, abs=1e-15)
    # TP=3, FP=1, FN=1, TN=3
    yt = np.array([1, 1, 1, 1, 0, 0, 0, 0])
    yp = np.array([1, 1, 1, 0, 1, 0, 0, 0])
    assert T.per_class_f1(yt, yp).tolist() == [0.75, 0.75]


def test_macro_f1_matches_sklearn(rng):
    for _ in range(100):
        n = int(rng.integers(1, 40))
        yt, yp = rng.integers(0, 2, n), rng.integers(0, 2, n)
        ref = f1_score(yt, yp, average="macro", labels=[0, 1], zero_division=0)
        assert T.macro_f1(yt, yp) == pytest.approx(ref, abs=1e-12)


def test_group_metrics_and_table():
    y = np.array([0, 1, 0, 1, 0, 1])
    p = np.array([0, 1, 1, 1, 0, 0])
    g = np.array([0, 0, 18, 18, 36, 36])
    m = T.metrics_from_predictions(y, p, g, expected_groups=[0, 18, 36, 54])
    assert m.per_group[0] == 1.0 and m.per_group[54] is None and m.empty_groups == [54]
    assert m.group_mean == pytest.approx(np.mean([1.0, 1 / 3, 1 / 3]))
    head, row = m.table("F1").splitlines()
    assert head.split("\t")[1:] == ["0", "18", "36", "54", "Mean", "All"]
    assert row.split("\t")[4] == "-"


def test_aggregate_metrics_std():
    a = T.Metrics(0.8, 0.8, {"WS": 0.7}, 0.7)
    b = T.Metrics(1.0, 1.0, {"WS": 0.9}, 0.9)
    m = T.aggregate_metrics([a, b])
    assert m.f1 == pytest.approx(0.9) and m.f1_std == pytest.approx(0.1)
    assert m.per_group_std["WS"] == pytest.approx(0.1)
    assert "±" in m.table()


# -- training -------------------------------------------------------------------


def test_separable_data_trains_to_99_percent(rng):
    x, y = separable_images(rng)
    res = T.train(x, y, TrainConfig(epochs=6, loss=LossKind.CE, **FAST))
    pred = res.model.predict_proba(x).argmax(axis=1)
    assert (pred == y).mean() >= 0.99
    assert [r.epoch for r in res.log] == list(range(6))


def test_zero_epochs_gives_near_uniform_predictions(rng):
    x, y = separable_images(rng, 16)
    res = T.train(x, y, TrainConfig(epochs=0, **FAST))
    assert res.log == []
    assert abs(res.model.predict_proba(x)[:, 0].mean() - 0.5) < 0.2


def test_training_is_deterministic(rng):
    x, y = separable_images(rng, 24)
    val = (x[:8], y[:8])
    cfg = TrainConfig(epochs=2, loss=LossKind.NFL_RCE, input_size=32, batch_size=16)
    a = T.train(x, y, cfg, val=val)
    b = T.train(x, y, cfg, val=val)
    assert [r.val_f1 for r in a.log] == [r.val_f1 for r in b.log]
    for (k, va), vb in zip(a.model.net.state_dict().items(), b.model.net.state_dict().values()):
        assert torch.equal(va, vb), k


def test_training_with_sequences_and_augmentation():
    from gaitgender.skeleton import normalize_sequence
    from gaitgender.synth import SynthConfig, synthesize_walks
    ws = synthesize_walks(SynthConfig(n_subjects=4, angles=(0,)))
    seqs = [normalize_sequence(w.sequence) for w in ws]
    y = np.array([w.label for w in ws])
    res = T.train(seqs, y, TrainConfig(epochs=1, input_size=32, batch_size=4))
    assert res.model.predict_proba(seqs).shape == (8, 2)
    assert res.model.predict(seqs[0]).sum() == pytest.approx(1.0)


def test_early_stopping(rng, monkeypatch):
    x, y = separable_images(rng, 16)
    monkeypatch.setattr(T, "macro_f1", lambda *a, **k: 0.5)
    res = T.train(x, y, TrainConfig(epochs=30, patience=3, **FAST), val=(x, y))
    assert len(res.log) == 4 and res.best_epoch == 0


def test_non_finite_loss_aborts(rng, monkeypatch):
    x, y = separable_images(rng, 8)
    monkeypatch.setattr(losses, "torch_cross_entropy", lambda logits, y, reduction="mean": logits.sum() * np.nan)
    with pytest.raises(T.NonFiniteLoss):
        T.train(x, y, TrainConfig(epochs=1, loss=LossKind.CE, **FAST))


def test_importance_reweighting_estimates_rates(rng):
    x, y = separable_images(rng, 16)
    res = T.train(x, y, TrainConfig(epochs=2, loss=LossKind.IW, **FAST))
    assert isinstance(res.noise_rates, losses.NoiseRates)


def test_pencil_updates_labels_only_in_correction(rng):
    x, y = separable_images(rng, 16)
    noisy = y.copy()
    noisy[:3] = 1 - noisy[:3]
    cfg = TrainConfig(epochs=4, loss=LossKind.PENCIL, pencil_warmup=1, pencil_correction=2,
                      pencil_label_lr=500.0, **FAST)
    res = T.train(x, noisy, cfg)
    assert res.corrected_labels is not None and res.corrected_labels.shape == (16,)
    # a zero-length correction phase never touches the label logits
    cfg0 = TrainConfig(epochs=3, loss=LossKind.PENCIL, pencil_warmup=1, pencil_correction=0, **FAST)
    assert np.array_equal(T.train(x, noisy, cfg0).corrected_labels, noisy)


def test_bad_inputs():
    with pytest.raises(ValueError):
        T.train([], [], TrainConfig())
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)


def test_model_save_load(tmp_path, rng):
    x, y = separable_images(rng, 8)
    res = T.train(x, y, TrainConfig(epochs=1, **FAST))
    res.model.save(tmp_path / "m.pt")
    back = T.ModelHandle.load(tmp_path / "m.pt")
    np.testing.assert_array_equal(back.predict_proba(x), res.model.predict_proba(x))


# -- protocols -----------------------------------------------------------------


def test_subject_holdout_is_disjoint(rng):
    subjects = np.repeat([f"p{i}" for i in range(60)], 4)
    for _ in range(100):
        mask = T.subject_holdout_split(subjects, 46, rng)
        assert not set(subjects[mask]) & set(subjects[~mask])
        assert len(set(subjects[mask])) == 46
    with pytest.raises(T.TooFewSubjects):
        T.subject_holdout_split(subjects[:4 * 46], 46, rng)


def test_crossval_fvg_shape_and_disjointness(rng):
    n_subj = 12
    subjects = np.repeat([f"p{i}" for i in range(n_subj)], 4)
    variations = np.tile(["WS", "CB", "CL", "CBG"], n_subj)
    y = np.repeat(np.arange(n_subj) % 2, 4)
    x, _ = separable_images(rng, len(y))
    agg, runs, masks = T.crossval_fvg(x, y, y, subjects, variations, TrainConfig(epochs=0, **FAST),
                                      holdout_subjects=4, repeats=3)
    assert len(runs) == 3 and list(agg.per_group) == ["WS", "CB", "CL", "CBG"]
    for m in masks:
        assert not set(subjects[m]) & set(subjects[~m])
    _, _, again = T.crossval_fvg(x, y, y, subjects, variations, TrainConfig(epochs=0, **FAST),
                                 holdout_subjects=4, repeats=1)
    assert np.array_equal(again[0], masks[0])


def test_semisupervised_label_union():
    front = np.array([0, 1, -1, -1, -1])
    prop = np.array([-1, -1, 1, 0, 1])
    conf = np.array([1.0, 1.0, 0.9, 0.5, 0.6])
    assert T.combine_semisupervised_labels(front, prop, conf, 0.6).tolist() == [0, 1, 1, -1, 1]


def test_tau_one_equals_baseline(rng):
    x, y = separable_images(rng, 12)
    front = np.where(np.arange(12) < 6, y, -1)
    conf = np.full(12, 0.97)  # spreading confidences are strictly below 1
    cfg = TrainConfig(epochs=1, loss=LossKind.NFL_RCE, **FAST)
    a = T.train_semisupervised(x, front, y, conf, cfg, tau=1.0)
    b = T.train([x[i] for i in range(6)], y[:6], cfg)
    for va, vb in zip(a.model.net.state_dict().values(), b.model.net.state_dict().values()):
        assert torch.equal(va, vb)
