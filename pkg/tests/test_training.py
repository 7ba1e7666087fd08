"""Unit tests for optimization, the schedule, and evaluation.

The optimizer and schedule are checked against hand-stepped recurrences;
training behavior is checked with tiny datasets where the expected outcome
(memorization, chance-level accuracy) has a closed form.
"""

import numpy as np
import pytest

import fgcn.tensor as T
from fgcn.data import Dataset, SkeletonSequence, SynthSpec, synth_dataset
from fgcn.errors import ConfigError, NumericalError
from fgcn.graph import named_topology
from fgcn.model import FeedbackGCN, ModelConfig, fusion_spec
from fgcn.optim import MomentumSGD
from fgcn.training import (TrainConfig, cross_entropy, evaluate_model,
                           evaluate_two_stream, lr_at_epoch,
                           stage_probabilities, train_model)


def toy_model(stream="joints", classes=2, seed=0):
    return FeedbackGCN(ModelConfig(
        topology=named_topology("toy9"), stream=stream, classes=classes,
        stages=2, clip_len=4, channels=(4, 4, 8), strides=(1, 2, 2),
        kernel_t=3, fgcb_layers=2, fgcb_kernel_t=3, seed=seed))


def toy_dataset(rng, count=4, classes=2, frames=10):
    seqs = []
    for i in range(count):
        pos = rng.normal(size=(frames, 1, 9, 3))
        seqs.append(SkeletonSequence(pos, i % classes, classes, f"toy-{i}"))
    return Dataset(seqs, classes, "train")


# ---------------------------------------------------------------------------
# optimizer


def test_momentum_sgd_two_hand_steps():
    p = T.parameter(np.array([1.0, 2.0]), "p")
    opt = MomentumSGD([p], lr=0.1, momentum=0.9)

    p.grad = np.array([1.0, -1.0])
    opt.step()
    # v1 = g, p1 = p0 - 0.1 * v1
    np.testing.assert_allclose(p.data, [0.9, 2.1])

    p.grad = np.array([1.0, -1.0])
    opt.step()
    # v2 = 0.9 * v1 + g = 1.9, p2 = p1 - 0.19
    np.testing.assert_allclose(p.data, [0.71, 2.29])


def test_momentum_sgd_skips_missing_grads_and_zeroes():
    p = T.parameter(np.ones(2), "p")
    q = T.parameter(np.ones(2), "q")
    opt = MomentumSGD([p, q], lr=0.5)
    p.grad = np.ones(2)
    opt.step()
    np.testing.assert_allclose(p.data, [0.5, 0.5])
    np.testing.assert_allclose(q.data, [1.0, 1.0])  # untouched
    opt.zero_grad()
    assert p.grad is None and q.grad is None


def test_momentum_sgd_rejects_bad_names():
    with pytest.raises(ValueError):
        MomentumSGD([T.parameter(np.ones(1), "a"), T.parameter(np.ones(1), "a")], 0.1)
    anon = T.Tensor(np.ones(1), requires_grad=True)
    with pytest.raises(ValueError):
        MomentumSGD([anon], 0.1)


# ---------------------------------------------------------------------------
# schedule


def test_lr_schedule_bands():
    config = TrainConfig(lr=0.1, lr_drops=(40, 60), epochs=80)
    assert lr_at_epoch(1, config) == 0.1
    assert lr_at_epoch(39, config) == 0.1
    assert lr_at_epoch(40, config) == pytest.approx(0.01)
    assert lr_at_epoch(59, config) == pytest.approx(0.01)
    assert lr_at_epoch(60, config) == pytest.approx(0.001)
    assert lr_at_epoch(80, config) == pytest.approx(0.001)


def test_train_config_validation():
    TrainConfig()
    with pytest.raises(ConfigError):
        TrainConfig(lr=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0)
    with pytest.raises(ConfigError):
        TrainConfig(lr_drops=(60, 40), epochs=80)
    with pytest.raises(ConfigError):
        TrainConfig(lr_drops=(40, 40), epochs=80)
    with pytest.raises(ConfigError):
        TrainConfig(lr_drops=(40, 80), epochs=80)  # drop at the final epoch
    with pytest.raises(ConfigError):
        TrainConfig(stop_train_acc=1.5)


# ---------------------------------------------------------------------------
# loss


def test_cross_entropy_uniform_is_log_classes():
    for classes in (2, 4, 10):
        probs = T.constant(np.full((3, classes), 1.0 / classes))
        loss = cross_entropy(probs, np.zeros(3, dtype=int))
        np.testing.assert_allclose(float(loss.data), np.log(classes), atol=1e-12)


def test_cross_entropy_matches_loop_oracle():
    rng = np.random.default_rng(0)
    probs = rng.dirichlet(np.ones(5), size=6)
    labels = rng.integers(0, 5, size=6)
    loss = cross_entropy(T.constant(probs), labels)
    expect = -np.mean([np.log(max(probs[i, labels[i]], 1e-12)) for i in range(6)])
    np.testing.assert_allclose(float(loss.data), expect, atol=1e-12)


def test_cross_entropy_gradient():
    probs = T.parameter(np.array([[0.25, 0.75], [0.5, 0.5]]), "p")
    loss = cross_entropy(probs, np.array([1, 0]))
    loss.backward()
    # d/dp_y of -mean(log p_y) = -1 / (batch * p_y), zero elsewhere
    np.testing.assert_allclose(
        probs.grad, [[0.0, -1.0 / (2 * 0.75)], [-1.0 / (2 * 0.5), 0.0]], atol=1e-12)


def test_cross_entropy_clamps_zero_probability():
    probs = T.constant(np.array([[1.0, 0.0]]))
    loss = cross_entropy(probs, np.array([1]))
    np.testing.assert_allclose(float(loss.data), -np.log(1e-12))


# ---------------------------------------------------------------------------
# training loop behavior


def test_training_is_deterministic_for_a_seed():
    rng = np.random.default_rng(1)
    ds = toy_dataset(rng)
    config = TrainConfig(batch_size=2, lr=0.01, momentum=0.9, lr_drops=(),
                         epochs=3, seed=7)
    spec = fusion_spec("average", 2)

    losses = []
    for _ in range(2):
        model = toy_model(seed=3)
        report = train_model(ds, model, spec, config)
        losses.append([r["train_loss"] for r in report.epochs])
    assert losses[0] == losses[1]

    other = train_model(toy_dataset(np.random.default_rng(1)), toy_model(seed=3),
                        spec, TrainConfig(batch_size=2, lr=0.01, lr_drops=(),
                                          epochs=3, seed=8))
    assert [r["train_loss"] for r in other.epochs] != losses[0]


def test_report_records_schedule_and_callbacks():
    rng = np.random.default_rng(2)
    ds = toy_dataset(rng)
    spec = fusion_spec("average", 2)
    config = TrainConfig(batch_size=4, lr=0.05, lr_drops=(2, 4), epochs=5,
                         seed=0, checkpoint_every=2)
    seen_epochs = []
    checkpoints = []
    report = train_model(ds, toy_model(), spec, config,
                         on_epoch=lambda r: seen_epochs.append(r["epoch"]),
                         on_checkpoint=lambda e: checkpoints.append(e))
    assert seen_epochs == [1, 2, 3, 4, 5]
    assert checkpoints == [2, 4]
    assert [r["lr"] for r in report.epochs] == [0.05, 0.005, 0.005, 0.0005, 0.0005]
    assert report.stopped_epoch == 5
    assert report.wall_clock > 0
    for r in report.epochs:
        assert np.isfinite(r["train_loss"]) and 0.0 <= r["train_acc"] <= 1.0


def test_single_sequence_memorization():
    # one sample is memorized quickly: loss falls below 0.01
    rng = np.random.default_rng(3)
    ds = toy_dataset(rng, count=1)
    spec = fusion_spec("average", 2)
    config = TrainConfig(batch_size=1, lr=0.01, momentum=0.9, lr_drops=(),
                         epochs=60, seed=0, stop_train_acc=0.0)
    report = train_model(ds, toy_model(), spec, config)
    assert report.epochs[-1]["train_loss"] < 0.01
    assert report.final_train_accuracy == 1.0


def test_early_stop_streak():
    # a one-sample task hits 100% accuracy fast; with patience 3 the run
    # stops exactly 3 epochs into the streak
    rng = np.random.default_rng(4)
    ds = toy_dataset(rng, count=1)
    spec = fusion_spec("average", 2)
    config = TrainConfig(batch_size=1, lr=0.01, momentum=0.9, lr_drops=(),
                         epochs=60, seed=0, stop_train_acc=1.0, stop_patience=3)
    report = train_model(ds, toy_model(), spec, config)
    assert report.stopped_epoch < 60
    accs = [r["train_acc"] for r in report.epochs]
    assert len(accs) == report.stopped_epoch
    assert accs[-3:] == [1.0, 1.0, 1.0]
    # the run ends exactly 3 epochs after the last sub-threshold epoch
    dips = [i for i, a in enumerate(accs) if a < 1.0]
    last_dip = dips[-1] + 1 if dips else 0
    assert report.stopped_epoch == last_dip + 3


def test_weight_decay_and_grad_clip_change_the_trajectory():
    rng = np.random.default_rng(5)
    ds = toy_dataset(rng)
    spec = fusion_spec("average", 2)
    base = TrainConfig(batch_size=2, lr=0.01, lr_drops=(), epochs=2, seed=0)
    plain = train_model(ds, toy_model(), spec, base)
    decayed = train_model(ds, toy_model(), spec,
                          TrainConfig(batch_size=2, lr=0.01, lr_drops=(),
                                      epochs=2, seed=0, weight_decay=0.1))
    clipped = train_model(ds, toy_model(), spec,
                          TrainConfig(batch_size=2, lr=0.01, lr_drops=(),
                                      epochs=2, seed=0, grad_clip=1e-4))
    assert plain.epochs[1]["train_loss"] != decayed.epochs[1]["train_loss"]
    assert plain.epochs[1]["train_loss"] != clipped.epochs[1]["train_loss"]


def test_non_finite_loss_raises():
    rng = np.random.default_rng(6)
    ds = toy_dataset(rng)
    spec = fusion_spec("average", 2)
    model = toy_model()
    model.params()[0].data = np.full(model.params()[0].shape, np.nan)
    with pytest.raises(NumericalError, match="non-finite"):
        train_model(ds, model, spec, TrainConfig(batch_size=2, lr=0.01,
                                                 lr_drops=(), epochs=1))


def test_train_rejects_mismatched_classes_and_empty_data():
    rng = np.random.default_rng(7)
    ds = toy_dataset(rng, classes=3)
    spec = fusion_spec("average", 2)
    with pytest.raises(ConfigError):
        train_model(ds, toy_model(classes=2), spec, TrainConfig(lr_drops=(), epochs=1))
    empty = Dataset([], 2, "train")
    with pytest.raises(ConfigError):
        train_model(empty, toy_model(), spec, TrainConfig(lr_drops=(), epochs=1))


# ---------------------------------------------------------------------------
# evaluation


def test_untrained_model_sits_at_chance():
    # an untrained model's accuracy over a balanced set is near 1/classes;
    # with 24 samples and p = 1/4 a 5-sigma band is comfortably within [0, 0.7]
    ds = synth_dataset(SynthSpec(), 0, "train")
    model = toy_model(classes=4)
    spec = fusion_spec("average", 2)
    result = evaluate_model(ds, model, spec)
    assert 0.0 <= result.accuracy <= 0.7
    assert result.confusion.sum() == len(ds)


def test_evaluate_is_deterministic_and_consistent():
    ds = synth_dataset(SynthSpec(), 1, "test")
    model = toy_model(classes=4)
    spec = fusion_spec("average", 2)
    a = evaluate_model(ds, model, spec)
    b = evaluate_model(ds, model, spec)
    np.testing.assert_array_equal(a.fused_probs, b.fused_probs)
    assert a.accuracy == b.accuracy

    # accuracy equals the confusion-diagonal rate and matches predictions
    assert a.accuracy == np.trace(a.confusion) / a.confusion.sum()
    np.testing.assert_array_equal(a.predictions, np.argmax(a.fused_probs, axis=1))
    # per-class row sums equal the true class counts
    counts = np.bincount(a.labels, minlength=4)
    np.testing.assert_array_equal(a.confusion.sum(axis=1), counts)
    # batch size must not affect results
    c = evaluate_model(ds, model, spec, batch_size=3)
    np.testing.assert_allclose(c.fused_probs, a.fused_probs, atol=1e-12)


def test_stage_probabilities_shape():
    ds = synth_dataset(SynthSpec(), 2, "test")
    model = toy_model(classes=4)
    probs, labels, ids = stage_probabilities(ds, model)
    assert probs.shape == (2, len(ds), 4)
    assert len(ids) == len(ds) and labels.shape == (len(ds),)
    np.testing.assert_allclose(probs.sum(axis=2), np.ones((2, len(ds))), atol=1e-12)


def test_two_stream_evaluation_blend():
    ds = synth_dataset(SynthSpec(), 3, "test")
    spatial = toy_model(stream="spatial", classes=4)
    motion = toy_model(stream="motion", classes=4)
    spec = fusion_spec("average", 2)
    combined, sp, mo = evaluate_two_stream(ds, spatial, motion, spec, alpha=0.3)
    np.testing.assert_allclose(
        combined.fused_probs, 0.3 * sp.fused_probs + 0.7 * mo.fused_probs, atol=1e-12)
    assert combined.confusion.sum() == len(ds)
