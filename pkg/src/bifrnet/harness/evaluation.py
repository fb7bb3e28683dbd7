"""Accuracy grids indexed by occlusion level × occluder type."""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..model import BIFRNet
from ..numerics import Tensor, no_grad
from ..synth import LEVELS, OCCLUDER_TYPES, SplitArrays

TYPE_CODES = {"white": "w", "noise": "n", "texture": "t", "object": "o", "unchanged": "-"}
GRID_CELLS = [("L0", "unchanged")] + [(lv, ty) for lv in LEVELS[1:] for ty in OCCLUDER_TYPES[1:]]


class MissingCellError(ValueError):
    pass


@dataclass
class EvalGrid:
    correct: dict[str, int] = field(default_factory=dict)  # keyed "L1/w"
    total: dict[str, int] = field(default_factory=dict)

    @staticmethod
    def key(level: str, occluder_type: str) -> str:
        return f"{level}/{TYPE_CODES[occluder_type]}"

    def accuracy(self, level: str, occluder_type: str) -> float:
        k = self.key(level, occluder_type)
        return 100.0 * self.correct[k] / self.total[k]

    def level_mean(self, level: str) -> float:
        """Unweighted mean over the occluder types of one level."""
        types = ["unchanged"] if level == "L0" else list(OCCLUDER_TYPES[1:])
        return float(np.mean([self.accuracy(level, t) for t in types]))

    def as_table(self) -> dict[str, dict[str, float]]:
        out: dict[str, dict[str, float]] = {}
        for lv, ty in GRID_CELLS:
            out.setdefault(lv, {})[TYPE_CODES[ty]] = round(self.accuracy(lv, ty), 2)
        return out

    def to_dict(self) -> dict:
        return {"correct": dict(self.correct), "total": dict(self.total), "accuracy": self.as_table()}

    @classmethod
    def from_dict(cls, d: dict) -> "EvalGrid":
        return cls(correct=dict(d["correct"]), total=dict(d["total"]))

    def __eq__(self, other) -> bool:
        return isinstance(other, EvalGrid) and self.correct == other.correct and self.total == other.total


def grid_from_predictions(pred: np.ndarray, labels: np.ndarray, levels: list[str], types: list[str]) -> EvalGrid:
    grid = EvalGrid()
    for lv, ty in GRID_CELLS:
        grid.correct[EvalGrid.key(lv, ty)] = 0
        grid.total[EvalGrid.key(lv, ty)] = 0
    for p, y, lv, ty in zip(pred, labels, levels, types):
        k = EvalGrid.key(lv, ty)
        if k not in grid.total:
            raise ValueError(f"sample with unexpected cell {lv}/{ty}")
        grid.total[k] += 1
        grid.correct[k] += int(p == y)
    missing = [k for k, n in grid.total.items() if n == 0]
    if missing:
        raise MissingCellError(f"test split has no samples for cells {missing}")
    return grid


def eval_threads() -> int:
    try:
        return max(1, int(os.environ.get("BIFR_THREADS", "1")))
    except ValueError:
        return 1


def run_batched(fn: Callable[[Tensor], np.ndarray], x: np.ndarray, batch: int = 200, dtype=np.float32) -> np.ndarray:
    """Apply ``fn`` to fixed chunks of ``x``; chunking is independent of the
    thread count so results do not depend on the schedule."""
    chunks = [x[i : i + batch] for i in range(0, len(x), batch)]
    with no_grad():
        call = lambda c: fn(Tensor(c.astype(dtype, copy=False)))
        threads = eval_threads()
        if threads > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                outs = list(pool.map(call, chunks))
        else:
            outs = [call(c) for c in chunks]
    return np.concatenate(outs)


def predict_labels(model: BIFRNet, x: np.ndarray, batch: int = 200, **infer_kw) -> np.ndarray:
    dtype = model.params["head.fc1.w"].dtype
    return run_batched(lambda t: model.forward_infer(t, **infer_kw).p.data.argmax(axis=1), x, batch, dtype)


def eval_grid(model: BIFRNet, test: SplitArrays, batch: int = 200, **infer_kw) -> tuple[EvalGrid, np.ndarray]:
    """Grid of accuracies plus the per-sample prediction log."""
    pred = predict_labels(model, test.x_occ, batch, **infer_kw)
    return grid_from_predictions(pred, test.labels, test.levels, test.types), pred


def render_table(grid: EvalGrid, title: str = "") -> str:
    """Fixed-width text table in the level × occluder-type layout."""
    head1 = f"{'Occ.Area':<22}|{'L0: 0%':^8}|{'L1: 20-40%':^31}|{'L2: 40-60%':^31}|{'L3: 60-80%':^31}|"
    head2 = f"{'Occ.Type':<22}|{'-':^8}|" + "|".join(
        "".join(f"{TYPE_CODES[t]:^8}" for t in OCCLUDER_TYPES[1:])[:-1] for _ in LEVELS[1:]
    ) + "|"
    cells = [f"{grid.accuracy('L0', 'unchanged'):^8.2f}"]
    for lv in LEVELS[1:]:
        cells.append("".join(f"{grid.accuracy(lv, t):^8.2f}" for t in OCCLUDER_TYPES[1:])[:-1])
    row = f"{(title or 'model')[:22]:<22}|" + "|".join(cells) + "|"
    rule = "-" * len(head1)
    return "\n".join([rule, head1, head2, rule, row, rule])


def write_report(path: str | Path, payload: dict, text: str | None = None) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    (path / "report.json").write_text(json.dumps(payload, indent=1, sort_keys=True))
    if text is not None:
        (path / "report.txt").write_text(text + "\n")
