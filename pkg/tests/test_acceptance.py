"""Acceptance criteria. Every test prints one PASS/FAIL line; the lines are
collected again in the terminal summary.

Criteria 5-8 share one desk-scale pipeline (data, teacher, full model, two
retrained variants). On one core it takes well over an hour. Set
BIFR_ACCEPT_DIR to keep its artifacts and reuse finished stages.
"""

import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest
from oracles import knowledge_update_reference
from test_numerics import OPS

from bifrnet import synth
from bifrnet.cli import main as cli_main
from bifrnet.harness import (
    EvalGrid,
    ablate_completion_cutoff,
    ablate_knowledge_noise,
    attention_stats,
    eval_grid,
    export_similarity,
    retrain_variant,
)
from bifrnet.harness.export import attention_maps
from bifrnet.model import BIFRNet, Teacher, knowledge_batch_update
from bifrnet.numerics.tensor import getitem
from bifrnet.numerics import (
    Tensor,
    add,
    btf,
    concat,
    div,
    exp,
    finite_diff_check,
    log,
    log_sigmoid,
    matmul,
    mean,
    mul,
    reshape,
    split_channels,
    square,
    sub,
    tsum,
)
from bifrnet.synth import DatasetConfig, LEVEL_BANDS, OcclusionSpec, load_split
from bifrnet.training import (
    LossWeights,
    TrainConfig,
    loss_attention,
    loss_classify,
    loss_knowledge,
    loss_restore,
    pretrain_teacher,
    total_loss,
    train,
)

DATA = {"train": 4000, "val": 600, "test_per_class_level": 100, "seed": 0}
RECIPE = {"batch_size": 64, "lr": 1e-3, "epochs": 6, "patience": 3, "seed": 0}
SIGMAS = (0.0, 1.0, 3.0, 5.0)


def _verdict(verdicts, n, ok, detail):
    verdicts.append(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    print(verdicts[-1])
    if not ok:
        pytest.fail(verdicts[-1], pytrace=False)


# ------------------------------------------------------------ 1. gradients


def T(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def _weighted(r, shape):
    return Tensor(r.normal(size=shape))


def _binary(r, kind):
    fn = {"sub": sub, "mul": mul, "div": div, "add": add}[kind]
    a = T(r.normal(size=(3, 4)))
    b = T(r.uniform(0.5, 2.0, size=(3, 4)))
    w = _weighted(r, (3, 4))
    return lambda: tsum(fn(a, b) * w), [a, b]


def _unary(r, fn, positive=False):
    x = T(r.uniform(0.2, 2.0, size=(3, 4)) if positive else r.normal(size=(3, 4)))
    w = _weighted(r, (3, 4))
    return lambda: tsum(fn(x) * w), [x]


def _reduce(r, fn):
    x = T(r.normal(size=(3, 4, 5)))
    w = _weighted(r, (3, 5))
    return lambda: tsum(fn(x, axis=1) * w), [x]


def _reshape(r):
    x = T(r.normal(size=(2, 6)))
    w = _weighted(r, (3, 4))
    return lambda: tsum(reshape(x, (3, 4)) * w), [x]


def _getitem(r):
    x = T(r.normal(size=(5, 4)))
    w = _weighted(r, (3, 4))
    idx = np.array([4, 0, 4])
    return lambda: tsum(getitem(x, idx) * w), [x]


def _concat(r):
    a, b = T(r.normal(size=(2, 3))), T(r.normal(size=(2, 2)))
    w = _weighted(r, (2, 5))
    return lambda: tsum(concat([a, b], axis=1) * w), [a, b]


def _split(r):
    x = T(r.normal(size=(2, 5, 3, 3)))
    w1, w2 = _weighted(r, (2, 2, 3, 3)), _weighted(r, (2, 3, 3, 3))

    def f():
        a, b = split_channels(x, [2, 3])
        return add(tsum(a * w1), tsum(b * w2))

    return f, [x]


def _matmul(r):
    a, b = T(r.normal(size=(3, 4))), T(r.normal(size=(4, 2)))
    w = _weighted(r, (3, 2))
    return lambda: tsum(matmul(a, b) * w), [a, b]


EXTRA_OPS = {
    "sub": lambda r: _binary(r, "sub"),
    "mul": lambda r: _binary(r, "mul"),
    "div": lambda r: _binary(r, "div"),
    "exp": lambda r: _unary(r, exp),
    "log": lambda r: _unary(r, log, positive=True),
    "square": lambda r: _unary(r, square),
    "log_sigmoid": lambda r: _unary(r, log_sigmoid),
    "tsum": lambda r: _reduce(r, tsum),
    "mean": lambda r: _reduce(r, mean),
    "reshape": _reshape,
    "getitem": _getitem,
    "concat_axis1": _concat,
    "split_channels": _split,
    "matmul": _matmul,
}


def _dist(r, shape):
    e = np.exp(r.normal(size=shape))
    return e / e.sum(axis=-1, keepdims=True)


def _loss_case(r, which):
    if which == "attention":
        z = T(r.normal(0, 2, (2, 1, 4, 4)))
        O = (r.uniform(size=z.shape) > 0.5).astype(float)
        return (lambda: loss_attention(z, O)), [z], 1e-6
    if which == "knowledge":
        a, b = T(_dist(r, (6, 16)).reshape(6, 4, 4)), T(_dist(r, (6, 16)).reshape(6, 4, 4))
        return (lambda: loss_knowledge(a, b)), [a, b], 1e-7
    if which == "restore":
        a, t = T(r.normal(size=(2, 64, 4, 4))), r.normal(size=(2, 64, 4, 4))
        return (lambda: loss_restore(a, t)), [a], 1e-6
    p, y = T(_dist(r, (3, 6))), r.integers(0, 6, size=3)
    return (lambda: loss_classify(p, y)), [p], 1e-7


def test_c1_gradient_suite(acceptance_verdicts):
    t0 = time.perf_counter()
    worst_op, worst_loss = {}, {}
    for name, make in {**OPS, **EXTRA_OPS}.items():
        r = np.random.default_rng([1, len(name), ord(name[0])])
        worst_op[name] = max(finite_diff_check(*make(r)) for _ in range(10))
    for which in ("attention", "knowledge", "restore", "classify"):
        r = np.random.default_rng([2, len(which)])
        errs = []
        for _ in range(10):
            f, xs, h = _loss_case(r, which)
            errs.append(finite_diff_check(f, xs, h=h))
        worst_loss[which] = max(errs)
    elapsed = time.perf_counter() - t0
    op_max, loss_max = max(worst_op.values()), max(worst_loss.values())
    ok = op_max < 1e-4 and loss_max < 1e-5 and elapsed < 120
    detail = f"{len(worst_op)} ops max rel err {op_max:.1e}; 4 losses max {loss_max:.1e}; {elapsed:.1f}s"
    _verdict(acceptance_verdicts, 1, ok, detail)


# ------------------------------------------------------- 2. loss identities


def test_c2_loss_identities(acceptance_verdicts):
    r = np.random.default_rng(3)
    O = (r.uniform(size=(4, 1, 4, 4)) > 0.5).astype(float)
    la = float(loss_attention(Tensor(np.zeros((4, 1, 4, 4))), O).data)
    lc = float(loss_classify(Tensor(np.full((5, 6), 1 / 6)), r.integers(0, 6, size=5)).data)
    K = _dist(r, (6, 16)).reshape(6, 4, 4)
    lk = float(loss_knowledge(Tensor(K), Tensor(K)).data)
    F = r.normal(size=(2, 64, 4, 4))
    lr = float(loss_restore(Tensor(F), F).data)
    tot = total_loss(1.0, 1.0, 1.0, 1.0, LossWeights(0.1))
    ok = abs(la - math.log(2)) <= 1e-9 and abs(lc - math.log(6)) <= 1e-9 and abs(lk) <= 1e-12 and lr == 0.0 and tot == 3.1
    detail = f"L_a-ln2={la - math.log(2):.1e} L_c-ln6={lc - math.log(6):.1e} L_k={lk:.1e} L_r={lr} total={tot!r}"
    _verdict(acceptance_verdicts, 2, ok, detail)


# ------------------------------------------------- 3. knowledge update oracle


def test_c3_knowledge_update_matches_reference(acceptance_verdicts):
    r = np.random.default_rng(4)
    worst, fills = 0.0, 0
    for i in range(20):
        b = int(r.integers(2, 40))
        labels = r.integers(0, 6, size=b)
        fills += len(set(range(6)) - set(labels.tolist())) > 0
        codes = r.uniform(0, 2, size=(b, 1, 4, 4))
        K = _dist(r, (6, 16)).reshape(6, 4, 4)
        zeta, L = knowledge_batch_update(Tensor(codes), labels, Tensor(K))
        ref_zeta, ref_L = knowledge_update_reference(codes.tolist(), labels.tolist(), K.tolist())
        worst = max(worst, float(np.max(np.abs(zeta.data - np.array(ref_zeta)))), abs(float(L.data) - ref_L))
    ok = worst <= 1e-12 and fills > 0
    _verdict(acceptance_verdicts, 3, ok, f"20 batches, max abs diff {worst:.1e}, {fills} with a missing class")


# ------------------------------------------------------- 4. data generator


def _cell_oracle(o, f=16):
    out = np.zeros((1, o.shape[1] // f, o.shape[2] // f))
    for i in range(out.shape[1]):
        for j in range(out.shape[2]):
            visible = int(o[0, i * f : (i + 1) * f, j * f : (j + 1) * f].sum())
            out[0, i, j] = 1.0 if 2 * visible >= f * f else 0.0
    return out


def test_c4_data_generator(acceptance_verdicts, tmp_path):
    t0 = time.perf_counter()
    n = 1000
    cfg = DatasetConfig(train=0, val=0, test_per_class_level=math.ceil(n / 6), seed=11)
    types = synth.OCCLUDER_TYPES[1:]
    bad = []
    fractions = {}
    for level in ("L1", "L2", "L3"):
        lo, hi = LEVEL_BANDS[level]
        got = []
        for i in range(n):
            clean = synth.sample_clean(i % 6, np.random.default_rng([cfg.seed, i]))
            s = synth.apply_occlusion(clean, OcclusionSpec(types[i % 4], level, 10_000 * i + 17))
            got.append(s.realized_occluded_fraction)
            o = s.masks.o
            m = np.zeros_like(s.x_occ)
            q0, d0, q1, d1 = s.occluder["rect"]
            m[:, q0:q1, d0:d1] = s.x_occ[:, q0:q1, d0:d1]
            if not (lo <= got[-1] <= hi):
                bad.append((level, i, "band"))
            if not np.array_equal(s.x_occ, clean.image * o + m * (1.0 - o)) or not np.all(o[0, q0:q1, d0:d1] == 0):
                bad.append((level, i, "composite"))
            if (1.0 - o).sum() != (q1 - q0) * (d1 - d0):
                bad.append((level, i, "mask"))
            if types[i % 4] == "white" and not np.all(s.x_occ[:, o[0] == 0] == 1.0):
                bad.append((level, i, "white"))
            if not np.array_equal(s.masks.O_f, _cell_oracle(o)):
                bad.append((level, i, "O_f"))
        fractions[level] = (min(got), max(got))

    manifest = synth.gen_dataset(DatasetConfig(train=40, val=10, test_per_class_level=3, seed=5), tmp_path / "d")
    regen_ok = True
    for split, recs in manifest["splits"].items():
        for i, rec in enumerate(recs):
            s = synth.regenerate(tmp_path / "d", split, i)
            raw = btf.dumps(s.x_occ.astype(np.float32)) + btf.dumps(s.masks.O_f.astype(np.float32))
            disk = (tmp_path / "d" / rec["files"]["x_occ"]).read_bytes() + (tmp_path / "d" / rec["files"]["O_f"]).read_bytes()
            regen_ok &= raw == disk
    elapsed = time.perf_counter() - t0
    ok = not bad and regen_ok and elapsed < 60
    spans = " ".join(f"{k}[{a:.3f},{b:.3f}]" for k, (a, b) in fractions.items())
    _verdict(acceptance_verdicts, 4, ok, f"3x{n} samples, {len(bad)} violations, regeneration identical={regen_ok}, {spans}, {elapsed:.1f}s")


# ------------------------------------------------------ shared pipeline


def _stage(path: Path, build):
    done = path / ".done"
    if not done.exists():
        build(path)
        done.write_text("")
    return path


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    env = os.environ.get("BIFR_ACCEPT_DIR")
    root = Path(env) if env else tmp_path_factory.mktemp("accept")
    root.mkdir(parents=True, exist_ok=True)
    times = {}

    def timed(name, fn):
        def run(path):
            t0 = time.perf_counter()
            fn(path)
            times[name] = time.perf_counter() - t0

        return run

    cfg = TrainConfig(**RECIPE)
    data = _stage(root / "data", timed("data", lambda p: synth.gen_dataset(DatasetConfig(**DATA), p)))
    teacher_dir = _stage(root / "teacher", timed("teacher", lambda p: pretrain_teacher(data, cfg, p)))
    full_dir = _stage(root / "full", timed("train", lambda p: train(data, teacher_dir, cfg, p)))
    test = load_split(data, "test", with_clean=False)
    model = BIFRNet.load(full_dir / "checkpoint")
    grid, _ = eval_grid(model, test)
    return {"root": root, "data": data, "teacher": teacher_dir, "model": model, "test": test, "grid": grid, "cfg": cfg, "times": times}


def _l3(grid: EvalGrid) -> float:
    return grid.level_mean("L3")


def test_c5_end_to_end_training(pipeline, acceptance_verdicts):
    hist = json.loads((pipeline["teacher"] / "model.json").read_text())["history"]
    teacher_acc = 100 * hist[-1]["val_acc"]
    g = pipeline["grid"]
    means = [g.level_mean(lv) for lv in ("L0", "L1", "L2", "L3")]
    monotone = all(means[i] >= means[i + 1] - 1.0 for i in range(3))
    ok = teacher_acc >= 95 and means[0] >= 95 and monotone
    t = pipeline["times"]
    timing = " ".join(f"{k}={v / 60:.1f}min" for k, v in t.items()) or "cached"
    detail = f"teacher clean val {teacher_acc:.2f}; level means " + " ".join(f"{m:.2f}" for m in means) + f"; {timing}"
    _verdict(acceptance_verdicts, 5, ok, detail)


@pytest.fixture(scope="module")
def retrained(pipeline):
    out = {}
    for kind in ("BIFRNet-K", "BIFRNet-Completion"):
        path = pipeline["root"] / kind
        if not (path / ".done").exists():
            retrain_variant(kind, pipeline["data"], pipeline["teacher"], pipeline["cfg"], path)
            (path / ".done").write_text("")
        out[kind], _ = eval_grid(BIFRNet.load(path / "checkpoint"), pipeline["test"])
    return out


def test_c6_ablation_trends(pipeline, retrained, acceptance_verdicts):
    model, test, base = pipeline["model"], pipeline["test"], pipeline["grid"]
    cut = ablate_completion_cutoff(model, test).grid
    noise = [_l3(r.grid) for r in ablate_knowledge_noise(model, SIGMAS, test, seed=0)]
    drop = _l3(base) - _l3(cut)
    non_increasing = all(noise[i + 1] <= noise[i] + 1.0 for i in range(len(noise) - 1))
    trail = {k: _l3(g) for k, g in retrained.items()}
    ok = drop >= 3.0 and non_increasing and all(v < _l3(base) for v in trail.values())
    detail = (
        f"L3 full {_l3(base):.2f}, cutoff {_l3(cut):.2f} (drop {drop:.2f}); noise "
        + "/".join(f"{v:.2f}" for v in noise)
        + "; "
        + ", ".join(f"{k} {v:.2f}" for k, v in trail.items())
    )
    _verdict(acceptance_verdicts, 6, ok, detail)


def test_c7_attention_quality(pipeline, acceptance_verdicts):
    test = pipeline["test"]
    sel = np.isin(np.array(test.levels), ["L2", "L3"])
    P = attention_maps(pipeline["model"], test.x_occ[sel])
    s = attention_stats(P, test.O_f[sel])
    ok = s.mean_iou >= 0.6 and s.mean_P_occluded < s.mean_P_visible
    detail = f"IoU {s.mean_iou:.3f} over {s.n}; mean P visible {s.mean_P_visible:.3f} occluded {s.mean_P_occluded:.3f}"
    _verdict(acceptance_verdicts, 7, ok, detail)


def test_c8_knowledge_separability(pipeline, acceptance_verdicts, tmp_path):
    sim = export_similarity(pipeline["model"].knowledge().data, tmp_path)
    diag = float(np.max(np.abs(np.diag(sim.values) - 1.0)))
    ok = diag <= 1e-9 and sim.mean_off_diagonal() < 0.9
    _verdict(acceptance_verdicts, 8, ok, f"max |diag-1| {diag:.1e}; mean off-diagonal {sim.mean_off_diagonal():.3f}")


# ----------------------------------------------------------- 9. determinism

DET_DATA = {"train": 96, "val": 24, "test_per_class_level": 4, "seed": 0}
DET_TRAIN = {"batch_size": 32, "lr": 1e-3, "epochs": 2, "teacher_epochs": 2, "teacher_floor": 0.0, "eval_batch": 100}


def _cli_pipeline(root: Path, seed: int) -> tuple[str, EvalGrid]:
    root.mkdir(parents=True)
    (root / "data.json").write_text(json.dumps(DET_DATA))
    (root / "train.json").write_text(json.dumps(DET_TRAIN))
    s = str(seed)
    steps = [
        ["gen-data", "--config", str(root / "data.json"), "--out", str(root / "data"), "--seed", s],
        ["pretrain-teacher", "--data", str(root / "data"), "--out", str(root / "teacher"), "--config", str(root / "train.json"), "--seed", s],
        ["train", "--config", str(root / "train.json"), "--data", str(root / "data"), "--teacher", str(root / "teacher"), "--out", str(root / "run"), "--seed", s],
        ["eval", "--ckpt", str(root / "run" / "checkpoint"), "--data", str(root / "data"), "--out", str(root / "eval")],
    ]
    for argv in steps:
        assert cli_main(argv) == 0, argv
    report = json.loads((root / "eval" / "report.json").read_text())
    return (root / "run" / "metrics.jsonl").read_text(), EvalGrid.from_dict(report["grid"])


def test_c9_determinism(acceptance_verdicts, tmp_path):
    log_a, grid_a = _cli_pipeline(tmp_path / "a", 7)
    log_b, grid_b = _cli_pipeline(tmp_path / "b", 7)
    ok = log_a == log_b and grid_a == grid_b and log_a.strip() != ""
    _verdict(acceptance_verdicts, 9, ok, f"metrics logs identical={log_a == log_b}, grids identical={grid_a == grid_b}")
