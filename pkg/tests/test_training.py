import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import attention_loss_reference, cross_entropy_reference

from bifrnet import training
from bifrnet.model import BIFRNet, ModelConfig, Teacher
from bifrnet.numerics import NonFiniteError, Tensor, backward, finite_diff_check
from bifrnet.training import (
    LossWeights,
    TrainConfig,
    TrainingError,
    loss_attention,
    loss_classify,
    loss_knowledge,
    loss_restore,
    loss_terms,
    stratified_batches,
    total_loss,
    train,
    train_step,
)


def _dist(rng, shape):
    e = np.exp(rng.normal(size=shape))
    return e / e.sum(axis=-1, keepdims=True)


def _K(rng, n=6):
    return _dist(rng, (n, 16)).reshape(n, 4, 4)


# ---------------------------------------------------------------- attention


def test_attention_zero_logits_is_ln2():
    rng = np.random.default_rng(0)
    O = (rng.uniform(size=(3, 1, 4, 4)) > 0.5).astype(float)
    assert abs(float(loss_attention(Tensor(np.zeros((3, 1, 4, 4))), O).data) - math.log(2)) <= 1e-9


def test_attention_perfect_limit():
    O = np.zeros((1, 1, 4, 4))
    O[0, 0, :2] = 1.0
    logits = np.where(O == 1, 40.0, -40.0)
    assert float(loss_attention(Tensor(logits), O).data) < 1e-15


def test_attention_hand_sum_oracle():
    rng = np.random.default_rng(1)
    for _ in range(5):
        z = rng.normal(0, 3, size=(2, 1, 4, 4))
        O = (rng.uniform(size=z.shape) > 0.5).astype(float)
        assert abs(float(loss_attention(Tensor(z), O).data) - attention_loss_reference(z, O)) <= 1e-12


def test_attention_rejects_soft_mask():
    with pytest.raises(ValueError):
        loss_attention(Tensor(np.zeros((1, 1, 4, 4))), np.full((1, 1, 4, 4), 0.5))


# ---------------------------------------------------------------- knowledge


def test_knowledge_fixed_point():
    K = _K(np.random.default_rng(2))
    assert abs(float(loss_knowledge(Tensor(K), Tensor(K)).data)) <= 1e-12


def test_knowledge_two_class_hand_case():
    zeta = np.array([[[0.1, 0.2], [0.3, 0.4]], [[0.25, 0.25], [0.25, 0.25]]])
    K = np.array([[[0.4, 0.3], [0.2, 0.1]], [[0.1, 0.2], [0.3, 0.4]]])
    expect = (
        0.1 * math.log(0.1 / 0.4) + 0.2 * math.log(0.2 / 0.3) + 0.3 * math.log(0.3 / 0.2) + 0.4 * math.log(0.4 / 0.1)
        + 0.25 * (math.log(0.25 / 0.1) + math.log(0.25 / 0.2) + math.log(0.25 / 0.3) + math.log(0.25 / 0.4))
    )
    assert abs(float(loss_knowledge(Tensor(zeta), Tensor(K)).data) - expect) <= 1e-12


def test_knowledge_zero_entries_vanish():
    zeta = np.array([[[0.0, 0.5], [0.5, 0.0]]])
    K = np.full((1, 2, 2), 0.25)
    assert float(loss_knowledge(Tensor(zeta), Tensor(K)).data) == pytest.approx(math.log(2), abs=1e-12)


def test_knowledge_rejects_nonpositive_K():
    with pytest.raises(ValueError):
        loss_knowledge(Tensor(np.full((1, 2, 2), 0.25)), Tensor(np.array([[[0.5, 0.5], [0.0, 0.0]]])))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_knowledge_nonnegative(seed):
    rng = np.random.default_rng(seed)
    assert float(loss_knowledge(Tensor(_K(rng)), Tensor(_K(rng))).data) >= -1e-15


# ------------------------------------------------------------------ restore


def test_restore_identities():
    F = np.random.default_rng(3).normal(size=(1, 64, 4, 4))
    assert float(loss_restore(Tensor(F), F).data) == 0.0
    assert float(loss_restore(Tensor(F + 1.0), F).data) == 512.0


def test_restore_mean_reduction():
    F = np.zeros((3, 64, 4, 4))
    assert float(loss_restore(Tensor(F + 1.0), F, "mean").data) == 0.5
    with pytest.raises(ValueError):
        loss_restore(Tensor(F), F, "max")


def test_restore_is_per_sample_sum_then_batch_mean():
    F = np.zeros((4, 64, 4, 4))
    assert float(loss_restore(Tensor(F + 1.0), F).data) == 512.0


def test_restore_gradient_is_difference():
    rng = np.random.default_rng(4)
    Fr = Tensor(rng.normal(size=(1, 64, 4, 4)), requires_grad=True)
    Fb = rng.normal(size=(1, 64, 4, 4))
    backward(loss_restore(Fr, Fb))
    assert np.allclose(Fr.grad, Fr.data - Fb, atol=1e-12)
    assert finite_diff_check(lambda: loss_restore(Fr, Fb), Fr, probes=20, rng=rng) < 1e-6


def test_restore_shape_mismatch():
    with pytest.raises(ValueError):
        loss_restore(Tensor(np.zeros((1, 64, 4, 4))), np.zeros((1, 64, 2, 2)))


# ----------------------------------------------------------------- classify


def test_classify_uniform_is_ln6():
    p = Tensor(np.full((5, 6), 1.0 / 6))
    assert abs(float(loss_classify(p, np.arange(5) % 6).data) - math.log(6)) <= 1e-9


def test_classify_perfect_is_zero():
    y = np.eye(6)[[0, 3, 5]]
    assert float(loss_classify(Tensor(y.copy()), y).data) == 0.0


def test_classify_oracle():
    rng = np.random.default_rng(5)
    p = _dist(rng, (7, 6))
    y = rng.integers(0, 6, size=7)
    assert abs(float(loss_classify(Tensor(p), y).data) - cross_entropy_reference(p, y)) <= 1e-12
    assert float(loss_classify(Tensor(p), np.eye(6)[y]).data) == float(loss_classify(Tensor(p), y).data)


def test_classify_rejects_invalid_distribution():
    with pytest.raises(ValueError):
        loss_classify(Tensor(np.full((1, 6), 0.5)), np.array([0]))


# -------------------------------------------------------------------- total


def test_total_loss_arithmetic():
    assert total_loss(0.0, 0.0, 0.0, 0.0) == 0.0
    assert total_loss(1.0, 1.0, 1.0, 1.0, LossWeights(0.1)) == 3.1
    with pytest.raises(ValueError):
        total_loss(1.0, float("nan"), 1.0, 1.0)
    with pytest.raises(ValueError):
        LossWeights(-0.1)


def test_total_loss_gradient_is_weighted_sum():
    rng = np.random.default_rng(6)
    x = Tensor(rng.normal(size=5), requires_grad=True)
    parts = lambda: [x * x, x * 3.0, (x * x) * x, x * -2.0]
    from bifrnet.numerics import tsum

    backward(total_loss(*[tsum(p) for p in parts()], LossWeights(0.1)))
    g_total = x.grad.copy()
    acc = np.zeros(5)
    for wgt, p in zip((1, 1, 1, 0.1), parts()):
        x.grad = None
        backward(tsum(p))
        acc += wgt * x.grad
    assert np.allclose(g_total, acc, atol=1e-12)


@pytest.mark.parametrize("which", ["attention", "knowledge", "restore", "classify"])
def test_loss_gradients_ten_instances(which):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(10):
        if which == "attention":
            z = Tensor(rng.normal(0, 2, (2, 1, 4, 4)), requires_grad=True)
            O = (rng.uniform(size=z.shape) > 0.5).astype(float)
            worst = max(worst, finite_diff_check(lambda: loss_attention(z, O), z, h=1e-6))
        elif which == "knowledge":
            a = Tensor(_K(rng), requires_grad=True)
            b = Tensor(_K(rng), requires_grad=True)
            worst = max(worst, finite_diff_check(lambda: loss_knowledge(a, b), [a, b], h=1e-7))
        elif which == "restore":
            a = Tensor(rng.normal(size=(2, 64, 4, 4)), requires_grad=True)
            t = rng.normal(size=(2, 64, 4, 4))
            worst = max(worst, finite_diff_check(lambda: loss_restore(a, t), a, probes=30, rng=rng))
        else:
            p = Tensor(_dist(rng, (3, 6)), requires_grad=True)
            y = rng.integers(0, 6, size=3)
            worst = max(worst, finite_diff_check(lambda: loss_classify(p, y), p, h=1e-7))
    assert worst < 1e-5


# --------------------------------------------------------------- structure


def _batch(rng, b=6):
    return {
        "x_occ": rng.uniform(size=(b, 3, 64, 64)),
        "labels": np.arange(b) % 6,
        "O_f": (rng.uniform(size=(b, 1, 4, 4)) > 0.4).astype(float),
        "F_bar": rng.uniform(0, 1, (b, 64, 4, 4)),
    }


def test_attention_branch_learns_without_attention_loss():
    m = BIFRNet(ModelConfig(), seed=0)
    batch = _batch(np.random.default_rng(8))
    F_bar = Tensor(batch["F_bar"])
    out = m.forward_train(Tensor(batch["x_occ"]), clean_features=F_bar)
    backward(loss_terms(m, out, batch["labels"], batch["O_f"], F_bar, LossWeights(0.0))[-1])
    dvp = [k for k in m.params if k.startswith("dvp.")]
    assert all(np.any(m.params[k].grad) for k in dvp)


def test_stratified_batches_cover_epoch_once():
    labels = np.arange(100) % 6
    batches = stratified_batches(labels, 16, np.random.default_rng(0))
    flat = np.concatenate(batches)
    assert sorted(flat.tolist()) == list(range(100))
    assert all(len(set(labels[b].tolist())) == 6 for b in batches[:-1])


def test_probe_batch_loss_decreases():
    from bifrnet.numerics import Adam

    m = BIFRNet(ModelConfig(), seed=1)
    opt = Adam(m.params, lr=1e-4)
    batch = _batch(np.random.default_rng(9), 6)
    losses = [train_step(m, opt, batch, LossWeights(), 1e-4).L_total for _ in range(50)]
    assert losses[-1] < losses[0]
    assert np.mean(np.diff(losses) < 0) > 0.9


def test_train_config_rejects_unknown_keys():
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"learning_rate": 1.0})


# ----------------------------------------------------------------- pipeline


def _fast(**kw):
    base = dict(batch_size=12, epochs=2, eval_batch=50, lr=1e-3)
    return TrainConfig(**{**base, **kw})


def test_teacher_is_deterministic(tiny_data, tiny_teacher, tmp_path):
    cfg = TrainConfig(batch_size=12, teacher_epochs=2, teacher_floor=0.0)
    training.pretrain_teacher(tiny_data, cfg, tmp_path / "t2")
    a, b = Teacher.load(tiny_teacher), Teacher.load(tmp_path / "t2")
    assert all(np.array_equal(a.params[k].data, b.params[k].data) for k in a.params)


def test_teacher_floor_raises(tiny_data):
    with pytest.raises(TrainingError):
        training.pretrain_teacher(tiny_data, TrainConfig(batch_size=12, teacher_epochs=1, teacher_floor=1.01))


def test_train_runs_deterministic_and_logs(tiny_data, tiny_teacher, tmp_path):
    teacher = Teacher.load(tiny_teacher)
    snapshot = {k: p.data.copy() for k, p in teacher.params.items()}
    _, hist = train(tiny_data, teacher, _fast(), tmp_path / "a")
    train(tiny_data, tiny_teacher, _fast(), tmp_path / "b")
    log_a = (tmp_path / "a" / "metrics.jsonl").read_text()
    assert log_a == (tmp_path / "b" / "metrics.jsonl").read_text()
    assert all(np.array_equal(p.data, snapshot[k]) for k, p in teacher.params.items())
    for rec in map(json.loads, log_a.splitlines()):
        assert {"epoch", "L_a", "L_k", "L_r", "L_c", "L_total", "val_acc", "lr"} <= set(rec)
        recomputed = rec["L_k"] + rec["L_r"] + rec["L_c"] + 0.1 * rec["L_a"]
        assert abs(rec["L_total"] - recomputed) <= 1e-9 * max(1.0, abs(recomputed))
    assert (tmp_path / "a" / "checkpoint" / "model.json").exists()
    assert len(hist) == 2


def test_train_no_knowledge_logs_have_no_knowledge_loss(tiny_data, tiny_teacher, tmp_path):
    train(tiny_data, tiny_teacher, _fast(epochs=1, variant="no-knowledge"), tmp_path)
    for line in (tmp_path / "metrics.jsonl").read_text().splitlines():
        assert "L_k" not in json.loads(line)


def test_train_non_finite_dumps_batch(tiny_data, tiny_teacher, tmp_path, monkeypatch):
    def boom(*a, **k):
        raise NonFiniteError("nan in conv2d")

    monkeypatch.setattr(training, "train_step", boom)
    with pytest.raises(TrainingError):
        train(tiny_data, tiny_teacher, _fast(epochs=1), tmp_path)
    dump = json.loads((tmp_path / "nan_dump.json").read_text())
    assert dump["step"] == 0 and len(dump["batch_indices"]) == 12
