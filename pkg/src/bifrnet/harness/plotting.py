"""Matplotlib figures written next to the text/JSON reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..synth import LEVELS, OCCLUDER_TYPES  # noqa: E402
from .evaluation import EvalGrid  # noqa: E402


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_level_means(grids: dict[str, EvalGrid], path: str | Path, title: str = "") -> Path:
    """Mean accuracy per occlusion level, one line per model or variant."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, g in grids.items():
        ax.plot(LEVELS, [g.level_mean(lv) for lv in LEVELS], marker="o", label=name)
    ax.set_xlabel("occlusion level")
    ax.set_ylabel("accuracy (%)")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_grid(grid: EvalGrid, path: str | Path, title: str = "") -> Path:
    types = list(OCCLUDER_TYPES[1:])
    acc = np.array([[grid.accuracy(lv, t) for t in types] for lv in LEVELS[1:]])
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    im = ax.imshow(acc, vmin=0, vmax=100, cmap="viridis")
    ax.set_xticks(range(len(types)), types)
    ax.set_yticks(range(len(LEVELS) - 1), LEVELS[1:])
    for (i, j), v in np.ndenumerate(acc):
        ax.text(j, i, f"{v:.1f}", ha="center", va="center", color="w" if v < 60 else "k", fontsize=8)
    ax.set_title(title or f"L0 = {grid.accuracy('L0', 'unchanged'):.2f}")
    fig.colorbar(im, ax=ax)
    return _save(fig, path)


def plot_similarity(S: np.ndarray, classes: list[str], path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.imshow(S, vmin=0, vmax=1, cmap="magma")
    ax.set_xticks(range(len(classes)), classes, rotation=45)
    ax.set_yticks(range(len(classes)), classes)
    fig.colorbar(im, ax=ax)
    return _save(fig, path)


def plot_attention(x: np.ndarray, P_up: np.ndarray, mask_up: np.ndarray, path: str | Path) -> Path:
    fig, axes = plt.subplots(1, 3, figsize=(7, 2.6))
    axes[0].imshow(np.transpose(x, (1, 2, 0)).clip(0, 1))
    axes[1].imshow(P_up, vmin=0, vmax=1, cmap="gray")
    axes[2].imshow(mask_up, vmin=0, vmax=1, cmap="gray")
    for ax, t in zip(axes, ("input", "attention", "visible mask")):
        ax.set_title(t, fontsize=9)
        ax.axis("off")
    return _save(fig, path)


def plot_training(history: list[dict], path: str | Path) -> Path:
    epochs = [h["epoch"] for h in history]
    fig, (a, b) = plt.subplots(1, 2, figsize=(8, 3.2))
    for key in ("L_a", "L_k", "L_r", "L_c", "L_total"):
        vals = [h.get(key) for h in history]
        if all(v is not None for v in vals):
            a.semilogy(epochs, vals, label=key)
    a.set_xlabel("epoch")
    a.legend(fontsize=8)
    b.plot(epochs, [h["val_acc"] for h in history], marker="o")
    b.set_xlabel("epoch")
    b.set_ylabel("val accuracy")
    return _save(fig, path)
