import json

import numpy as np
import pytest

from qresnet.data import Dataset, synthetic_two_gaussians, train_test_split_balanced
from qresnet.residual import ResidualModel
from qresnet.training import (
    Checkpoint,
    OptimizerState,
    TrainingConfig,
    Trainable,
    adam_step,
    bce_loss,
    cross_entropy_loss,
    evaluate,
    predict_labels,
    train,
    write_metrics_csv,
)
from qresnet.data import PreprocessSpec, encode_batch
from qresnet.gradients import finite_difference_oracle


def test_bce_examples():
    assert bce_loss(0.0, 1)[0] == pytest.approx(np.log(2))
    assert bce_loss(0.0, 0)[0] == pytest.approx(np.log(2))
    loss, g = bce_loss(20.0, 1)
    assert loss < 1e-8 and abs(g) < 1e-8
    assert bce_loss(2.0, 0)[0] == pytest.approx(np.log1p(np.e**2), abs=1e-12)
    assert bce_loss(2.0, 0)[0] == pytest.approx(2.1269, abs=1e-4)


def test_bce_is_stable_for_huge_logits():
    loss, g = bce_loss(np.array([800.0, -800.0]), np.array([0, 1]))
    assert np.allclose(loss, 800.0) and np.allclose(np.abs(g), 1.0)


def test_bce_rejects_bad_label():
    with pytest.raises(ValueError):
        bce_loss(0.0, 2)


def test_cross_entropy_examples():
    assert cross_entropy_loss(np.zeros(10), 3)[0] == pytest.approx(np.log(10))
    big = np.zeros(4)
    big[1] = 50.0
    assert cross_entropy_loss(big, 1)[0] < 1e-20
    loss, g = cross_entropy_loss(np.array([1.0, 2.0, 3.0]), 2)
    assert loss == pytest.approx(np.log(np.e + np.e**2 + np.e**3) - 3)
    assert loss == pytest.approx(0.4076, abs=1e-4)
    assert abs(g.sum()) < 1e-12  # softmax sums to one


def test_cross_entropy_gradient_fd(rng):
    z = rng.normal(size=5)
    fd = finite_difference_oracle(lambda v: float(cross_entropy_loss(v, 2)[0]), z)
    assert np.allclose(cross_entropy_loss(z, 2)[1], fd, atol=1e-8)


def _scalar_adam(g_seq, lr, wd, p0):
    # independent scalar recurrence
    p, m, v = p0, 0.0, 0.0
    for t, g in enumerate(g_seq, start=1):
        g = g + wd * p
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        p = p - lr * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    return p


def test_adam_zero_gradient_no_change():
    cfg = TrainingConfig(weight_decay=0.0)
    p, _ = adam_step(np.ones(3), np.zeros(3), OptimizerState.zeros(3), cfg)
    assert np.array_equal(p, np.ones(3))


def test_adam_matches_scalar_recurrence_and_step_bound():
    cfg = TrainingConfig(learning_rate=0.01, weight_decay=0.0)
    p, st = np.array([0.3]), OptimizerState.zeros(1)
    prev = p.copy()
    for _ in range(200):
        p, st = adam_step(p, np.array([2.5]), st, cfg)
        assert abs(p[0] - prev[0]) <= 0.01 * (1 + 1e-6)
        prev = p.copy()
    assert p[0] == pytest.approx(_scalar_adam([2.5] * 200, 0.01, 0.0, 0.3), abs=1e-14)


def test_weight_decay_pulls_toward_zero():
    cfg = TrainingConfig(learning_rate=0.01, weight_decay=0.1)
    p, st = np.array([1.0, -2.0]), OptimizerState.zeros(2)
    for _ in range(100):
        p, st = adam_step(p, np.zeros(2), st, cfg)
    assert np.all(np.abs(p) < [1.0, 2.0])
    assert p[0] == pytest.approx(_scalar_adam([0.0] * 100, 0.01, 0.1, 1.0), abs=1e-14)


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step(np.zeros(2), np.zeros(3), OptimizerState.zeros(2), TrainingConfig())


def test_config_validation():
    with pytest.raises(ValueError):
        TrainingConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainingConfig(beta_parameterization="clipped")
    assert TrainingConfig.for_task("multiclass").batch_size == 256


@pytest.fixture
def toy_split():
    ds = synthetic_two_gaussians(8, 400, 10, seed=1)
    return train_test_split_balanced(ds, 200, 200, seed=0)


@pytest.mark.parametrize("mode", ["bounded", "free"])
def test_loss_gradient_matches_fd(rng, toy_split, mode):
    tr, _ = toy_split
    m = ResidualModel.random(3, 2, 1, rng=rng)
    cfg = TrainingConfig(beta_parameterization=mode)
    t = Trainable.from_model(m, cfg)
    psi = encode_batch(tr.samples[:12], PreprocessSpec(8))
    y = tr.labels[:12]
    _, g, _ = t.loss_and_grad(psi, y)
    fd = finite_difference_oracle(lambda r: t.loss_and_grad(psi, y, r)[0], t.raw)
    assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-5


def test_multiclass_loss_gradient_matches_fd(rng):
    x = rng.uniform(size=(10, 8))
    y = np.arange(10) % 3
    m = ResidualModel.random(3, 2, 1, n_outputs=3, rng=rng)
    t = Trainable.from_model(m, TrainingConfig())
    psi = encode_batch(x, PreprocessSpec(8))
    _, g, _ = t.loss_and_grad(psi, y)
    fd = finite_difference_oracle(lambda r: t.loss_and_grad(psi, y, r)[0], t.raw)
    assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-5


def test_zero_learning_rate_keeps_parameters(rng, toy_split):
    tr, _ = toy_split
    m = ResidualModel.random(3, 2, rng=rng)
    res = train(m, tr, TrainingConfig(learning_rate=0.0, weight_decay=0.0, epochs=2))
    assert np.array_equal(res.model.to_vector(), m.to_vector())


def test_two_gaussians_reach_95_percent(toy_split):
    tr, te = toy_split
    m = ResidualModel.random(3, 2, rng=np.random.default_rng(0))
    res = train(m, tr, TrainingConfig(learning_rate=0.05, batch_size=16, epochs=20), te)
    assert res.history[-1]["test_accuracy"] >= 0.95


def test_training_is_deterministic(toy_split):
    tr, te = toy_split
    cfg = TrainingConfig(epochs=2, seed=7)
    a = train(ResidualModel.random(3, 2, rng=np.random.default_rng(3)), tr, cfg, te)
    b = train(ResidualModel.random(3, 2, rng=np.random.default_rng(3)), tr, cfg, te)
    assert a.history == b.history
    assert np.array_equal(a.raw, b.raw)


def test_bounded_beta_stays_inside(toy_split):
    tr, _ = toy_split
    m = ResidualModel.random(3, 2, beta_init=0.99, rng=np.random.default_rng(0))
    seen = []
    cfg = TrainingConfig(learning_rate=0.5, epochs=2, batch_size=16)
    train(m, tr, cfg, on_step=lambda step, t, loss: seen.append(t.model().beta.copy()))
    assert np.all(np.abs(np.array(seen)) < 1.0)


def test_empty_dataset_rejected():
    empty = Dataset(np.zeros((0, 4)), np.zeros(0))
    with pytest.raises(ValueError):
        train(ResidualModel.random(2, 1), empty, TrainingConfig())


def test_evaluate_label_flip_symmetry(rng, toy_split):
    _, te = toy_split
    m = ResidualModel.random(3, 2, rng=rng)
    acc = evaluate(m, te).accuracy
    flipped = Dataset(te.samples, 1 - te.labels)
    assert evaluate(m, flipped).accuracy == pytest.approx(1 - acc)


def test_random_logits_near_chance(rng):
    logits = rng.normal(size=(2000, 1))
    labels = np.arange(2000) % 2
    acc = np.mean(predict_labels(logits) == labels)
    assert abs(acc - 0.5) < 3 * np.sqrt(0.25 / 2000)


def test_checkpoint_round_trip_bit_exact(tmp_path, toy_split):
    tr, te = toy_split
    cfg = TrainingConfig(epochs=1)
    res = train(ResidualModel.random(3, 2, 1, rng=np.random.default_rng(0)), tr, cfg, te)
    ck = Checkpoint.from_result(res, cfg)
    ck.save(tmp_path / "c.json")
    back = Checkpoint.load(tmp_path / "c.json")
    assert np.array_equal(back.model.to_vector(), res.model.to_vector())
    assert np.array_equal(back.raw, res.raw)
    assert np.array_equal(back.optimizer.m, res.optimizer.m)
    assert back.history == res.history and back.config == cfg
    assert json.loads((tmp_path / "c.json").read_text())["version"] == 1


def test_resume_equals_uninterrupted(toy_split):
    tr, _ = toy_split
    cfg2 = TrainingConfig(epochs=2, seed=3)
    m0 = ResidualModel.random(3, 2, rng=np.random.default_rng(0))
    full = train(m0, tr, cfg2)
    first = train(m0, tr, TrainingConfig(epochs=1, seed=3))
    second = train(first.model, tr, TrainingConfig(epochs=1, seed=3), state=first.optimizer, start_epoch=1)
    assert np.allclose(second.raw, full.raw, atol=1e-12)


def test_metrics_csv(tmp_path):
    write_metrics_csv([{"epoch": 1, "train_loss": 0.5, "test_accuracy": 0.9}], tmp_path / "m.csv")
    assert (tmp_path / "m.csv").read_text().splitlines() == ["epoch,train_loss,test_accuracy", "1,0.5,0.9"]
