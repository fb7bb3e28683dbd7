"""Losses, teacher pretraining and the end-to-end training loop."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .model import BIFRNet, ModelConfig, Teacher, knowledge_batch_update
from .numerics import (
    Adam,
    NonFiniteError,
    Tensor,
    backward,
    cosine_decay,
    log,
    log_sigmoid,
    mean,
    mul,
    no_grad,
    set_default_dtype,
    square,
    sub,
    tsum,
)
from .synth import SplitArrays, load_manifest, load_split

log_ = logging.getLogger(__name__)

LOG_FLOOR = 1e-12


class TrainingError(RuntimeError):
    pass


# ------------------------------------------------------------------ losses


def loss_attention(logits, O_f) -> Tensor:
    """Multi-label soft margin loss on attention logits, averaged over the
    cells of each map and then over the batch."""
    logits = logits if isinstance(logits, Tensor) else Tensor(logits)
    O = np.asarray(O_f.data if isinstance(O_f, Tensor) else O_f)
    if O.shape != logits.shape:
        raise ValueError(f"mask {O.shape} does not match logits {logits.shape}")
    if not np.all((O == 0) | (O == 1)):
        raise ValueError("attention mask must be binary")
    O = O.astype(logits.dtype)
    per = Tensor(O) * log_sigmoid(logits) + Tensor(1.0 - O) * log_sigmoid(logits * -1.0)
    return mean(per) * -1.0


def loss_knowledge(zeta: Tensor, K: Tensor) -> Tensor:
    """KL(zeta || K) summed over classes and cells; zeta = 0 terms vanish."""
    if np.any(K.data <= 0):
        raise ValueError("knowledge matrix must be strictly positive")
    return tsum(zeta * sub(log(zeta, floor=LOG_FLOOR), log(K, floor=LOG_FLOOR)))


RESTORE_REDUCTIONS = ("sum", "mean")


def loss_restore(F_r: Tensor, F_bar, reduction: str = "sum") -> Tensor:
    """Half the squared error, summed over each sample's elements (or
    averaged with ``reduction="mean"``), then averaged over the batch."""
    F_bar = F_bar if isinstance(F_bar, Tensor) else Tensor(F_bar)
    if F_r.shape != F_bar.shape:
        raise ValueError(f"restored {F_r.shape} vs target {F_bar.shape}")
    if reduction not in RESTORE_REDUCTIONS:
        raise ValueError(f"unknown reduction {reduction!r}")
    total = tsum(square(sub(F_r, F_bar))) * 0.5
    n = F_r.shape[0] if F_r.ndim == 4 else 1
    per_sample = F_r.data.size // n
    return total * (1.0 / (n * per_sample) if reduction == "mean" else 1.0 / n)


def loss_classify(p: Tensor, y) -> Tensor:
    """Batch-mean cross-entropy; ``y`` is one-hot (B×N) or integer labels."""
    y = np.asarray(y)
    if y.ndim == 1 and p.ndim == 2 and y.shape[0] == p.shape[0] and np.issubdtype(y.dtype, np.integer):
        oh = np.zeros(p.shape, dtype=p.dtype)
        oh[np.arange(len(y)), y] = 1.0
        y = oh
    if y.shape != p.shape:
        raise ValueError(f"labels {y.shape} vs probabilities {p.shape}")
    sums = p.data.sum(axis=-1)
    if np.any(p.data < 0) or not np.allclose(sums, 1.0, atol=1e-6):
        raise ValueError("p is not a probability distribution")
    n = p.shape[0] if p.ndim == 2 else 1
    return tsum(Tensor(y.astype(p.dtype)) * log(p, floor=LOG_FLOOR)) * (-1.0 / n)


@dataclass
class LossWeights:
    alpha: float = 0.1
    restore_reduction: str = "sum"

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.restore_reduction not in RESTORE_REDUCTIONS:
            raise ValueError(f"unknown restore reduction {self.restore_reduction!r}")


def total_loss(L_k, L_r, L_c, L_a, w: LossWeights = LossWeights()):
    """L_k + L_r + L_c + alpha * L_a; ``L_k`` / ``L_r`` may be None for ablated variants."""
    parts = [x for x in (L_k, L_r, L_c) if x is not None]
    for x in parts + [L_a]:
        val = x.data if isinstance(x, Tensor) else x
        if not np.all(np.isfinite(val)):
            raise ValueError("loss terms must be finite")
    # summed left to right in the order L_k, L_r, L_c, then the weighted L_a
    out = parts[0]
    for x in parts[1:]:
        out = out + x
    return out + L_a * w.alpha


# ----------------------------------------------------------------- config


@dataclass
class TrainConfig:
    batch_size: int = 64
    lr: float = 1e-4
    epochs: int = 40
    patience: int = 5
    alpha: float = 0.1
    # "sum" is the literal restoration loss; "mean" divides it by the 1024
    # feature elements so it does not swamp the other three terms
    restore_reduction: str = "mean"
    seed: int = 0
    precision: str = "float32"
    eval_batch: int = 200
    variant: str = "full"
    init_from_teacher: bool = True
    max_steps: int | None = None
    # teacher
    teacher_lr: float = 1e-3
    teacher_epochs: int = 10
    teacher_target: float = 0.95
    teacher_floor: float = 0.80  # below this the data or network is broken

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path: str | Path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def apply_precision(cfg: TrainConfig) -> np.dtype:
    dt = np.dtype(cfg.precision)
    set_default_dtype(dt)
    return dt


def stratified_batches(labels: np.ndarray, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """One epoch of batches, each holding near-equal counts of every class."""
    classes = np.unique(labels)
    pools = [rng.permutation(np.flatnonzero(labels == c)) for c in classes]
    order = []
    longest = max(len(p) for p in pools)
    for i in range(longest):
        for p in pools:
            if i < len(p):
                order.append(p[i])
    order = np.asarray(order, dtype=np.int64)
    batches = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    return [rng.permutation(b) for b in batches]


def predict(fn, x: np.ndarray, batch: int, dtype) -> np.ndarray:
    """Run ``fn`` (Tensor -> probabilities) in no-grad chunks; returns N×C."""
    outs = []
    with no_grad():
        for i in range(0, len(x), batch):
            outs.append(fn(Tensor(x[i : i + batch].astype(dtype, copy=False))).data)
    return np.concatenate(outs) if outs else np.zeros((0, 0))


# ----------------------------------------------------------------- teacher


def pretrain_teacher(data_dir: str | Path, cfg: TrainConfig, out: str | Path | None = None, model_cfg: ModelConfig | None = None) -> tuple[Teacher, list[dict]]:
    """Train VVP + classifier on clean images until the clean val accuracy
    reaches ``cfg.teacher_target`` or the epoch cap, then freeze."""
    dt = apply_precision(cfg)
    manifest = load_manifest(data_dir)
    model_cfg = model_cfg or ModelConfig(n_class=len(manifest["classes"]))
    train = load_split(data_dir, "train", manifest)
    val = load_split(data_dir, "val", manifest)
    teacher = Teacher(model_cfg, seed=cfg.seed)
    opt = Adam(teacher.params, lr=cfg.teacher_lr)
    rng = np.random.default_rng([cfg.seed, 0x7EAC, 1])
    steps_per_epoch = math.ceil(len(train) / cfg.batch_size)
    total = steps_per_epoch * cfg.teacher_epochs
    history = []
    step = 0
    for epoch in range(1, cfg.teacher_epochs + 1):
        losses = []
        for idx in stratified_batches(train.labels, cfg.batch_size, rng):
            x = Tensor(train.x_clean[idx].astype(dt, copy=False))
            loss = loss_classify(teacher.predict(x), train.labels[idx])
            opt.zero_grad()
            backward(loss)
            opt.step(cosine_decay(cfg.teacher_lr, step, total))
            losses.append(float(loss.data))
            step += 1
        probs = predict(teacher.predict, val.x_clean, cfg.eval_batch, dt)
        acc = float((probs.argmax(axis=1) == val.labels).mean())
        history.append({"epoch": epoch, "loss": float(np.mean(losses)), "val_acc": acc})
        log_.info("teacher epoch %d loss %.4f clean val acc %.4f", epoch, history[-1]["loss"], acc)
        if acc >= cfg.teacher_target:
            break
    if history[-1]["val_acc"] < cfg.teacher_floor:
        raise TrainingError(f"teacher reached only {history[-1]['val_acc']:.3f} clean val accuracy")
    teacher.freeze()
    if out is not None:
        teacher.save(out, {"seed": cfg.seed, "history": history, "train_config": asdict(cfg)})
    return teacher, history


def teacher_features(teacher: Teacher, x: np.ndarray, batch: int, dtype) -> np.ndarray:
    outs = []
    with no_grad():
        for i in range(0, len(x), batch):
            outs.append(teacher.features(Tensor(x[i : i + batch].astype(dtype, copy=False))).data)
    return np.concatenate(outs)


# ------------------------------------------------------------------- train


@dataclass
class StepResult:
    L_a: float
    L_k: float | None
    L_r: float | None
    L_c: float
    L_total: float


def loss_terms(model: BIFRNet, out, labels: np.ndarray, O_f: np.ndarray, F_bar: Tensor, weights: LossWeights):
    variant = model.config.variant
    L_a = loss_attention(out.P_logits, O_f)
    L_k = None
    if variant != "no-knowledge":
        _, L_k = knowledge_batch_update(out.F_k, labels, out.K)
    L_r = loss_restore(out.F_r, F_bar, weights.restore_reduction) if variant != "no-completion" else None
    L_c = loss_classify(out.p, labels)
    return L_a, L_k, L_r, L_c, total_loss(L_k, L_r, L_c, L_a, weights)


def train_step(model: BIFRNet, opt: Adam, batch: dict, weights: LossWeights, lr: float) -> StepResult:
    F_bar = Tensor(batch["F_bar"])
    out = model.forward_train(Tensor(batch["x_occ"]), clean_features=F_bar)
    L_a, L_k, L_r, L_c, L = loss_terms(model, out, batch["labels"], batch["O_f"], F_bar, weights)
    opt.zero_grad()
    backward(L)
    opt.step(lr)
    f = lambda t: None if t is None else float(t.data)
    parts = StepResult(f(L_a), f(L_k), f(L_r), f(L_c), 0.0)
    # log the 64-bit weighted sum of the logged parts; the graph total only
    # differs from it by rounding at the working precision
    parts.L_total = float(total_loss(parts.L_k, parts.L_r, parts.L_c, parts.L_a, weights))
    tol = 10 * np.finfo(L.dtype).eps * max(1.0, abs(parts.L_total))
    if abs(parts.L_total - f(L)) > tol:
        raise TrainingError(f"loss bookkeeping mismatch: {parts.L_total} vs {f(L)}")
    return parts


def evaluate_accuracy(model: BIFRNet, split: SplitArrays, batch: int, dtype) -> float:
    if len(split) == 0:
        return float("nan")
    probs = predict(lambda x: model.forward_infer(x).p, split.x_occ, batch, dtype)
    return float((probs.argmax(axis=1) == split.labels).mean())


def train(
    data_dir: str | Path,
    teacher: Teacher | str | Path,
    cfg: TrainConfig,
    out: str | Path,
) -> tuple[BIFRNet, list[dict]]:
    """End-to-end training. Writes ``metrics.jsonl`` and the best-val
    checkpoint under ``out``; returns the best model and the epoch log."""
    dt = apply_precision(cfg)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if not isinstance(teacher, Teacher):
        teacher = Teacher.load(teacher)
    teacher_snapshot = {k: p.data.copy() for k, p in teacher.params.items()}
    manifest = load_manifest(data_dir)
    train_split = load_split(data_dir, "train", manifest)
    val = load_split(data_dir, "val", manifest, with_clean=False)
    if cfg.batch_size < len(manifest["classes"]):
        log_.warning("batch size %d < number of classes; missing-class fill will fire every step", cfg.batch_size)
    # the teacher is frozen, so clean features are computed once
    F_bar_all = teacher_features(teacher, train_split.x_clean, cfg.eval_batch, dt)

    model_cfg = ModelConfig(n_class=len(manifest["classes"]), variant=cfg.variant)
    model = BIFRNet(model_cfg, seed=cfg.seed)
    if cfg.init_from_teacher:
        model.init_from_teacher(teacher)
    opt = Adam(model.params, lr=cfg.lr)
    weights = LossWeights(cfg.alpha, cfg.restore_reduction)
    rng = np.random.default_rng([cfg.seed, 0x7A1])
    steps_per_epoch = math.ceil(len(train_split) / cfg.batch_size)
    total_steps = steps_per_epoch * cfg.epochs
    if cfg.max_steps is not None:
        total_steps = min(total_steps, cfg.max_steps)

    metrics_path = out / "metrics.jsonl"
    metrics_path.write_text("")
    history: list[dict] = []
    best_acc, best_epoch, stale = -1.0, 0, 0
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        sums: dict[str, list[float]] = {k: [] for k in ("L_a", "L_k", "L_r", "L_c", "L_total")}
        t0 = time.time()
        for idx in stratified_batches(train_split.labels, cfg.batch_size, rng):
            if step >= total_steps:
                break
            lr = cosine_decay(cfg.lr, step, total_steps)
            batch = {
                "x_occ": train_split.x_occ[idx].astype(dt, copy=False),
                "labels": train_split.labels[idx],
                "O_f": train_split.O_f[idx].astype(dt, copy=False),
                "F_bar": F_bar_all[idx],
            }
            try:
                res = train_step(model, opt, batch, weights, lr)
            except NonFiniteError as exc:
                dump = {"epoch": epoch, "step": step, "batch_indices": idx.tolist(), "error": str(exc)}
                (out / "nan_dump.json").write_text(json.dumps(dump))
                raise TrainingError(f"non-finite loss at step {step}; batch dumped to {out / 'nan_dump.json'}") from exc
            for k, v in asdict(res).items():
                if v is not None:
                    sums[k].append(v)
            step += 1
        val_acc = evaluate_accuracy(model, val, cfg.eval_batch, dt)
        rec = {"epoch": epoch}
        for k, v in sums.items():
            if v:
                rec[k] = float(np.mean(v))
        rec["val_acc"] = val_acc
        rec["lr"] = cosine_decay(cfg.lr, min(step, total_steps), total_steps)
        rec["steps"] = step
        history.append(rec)
        with metrics_path.open("a") as fh:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
        log_.info("epoch %d %s (%.0fs)", epoch, {k: round(v, 4) for k, v in rec.items() if isinstance(v, float)}, time.time() - t0)

        for k, p in teacher.params.items():
            if p.grad is not None or not np.array_equal(p.data, teacher_snapshot[k]):
                raise TrainingError(f"teacher parameter {k} changed during training")

        if val_acc > best_acc:
            best_acc, best_epoch, stale = val_acc, epoch, 0
            model.save(out / "checkpoint", {"epoch": epoch, "seed": cfg.seed, "val_acc": val_acc, "train_config": asdict(cfg)})
        else:
            stale += 1
        if stale >= cfg.patience or step >= total_steps:
            break
    best = BIFRNet.load(out / "checkpoint")
    return best, history
