"""Knowledge-similarity and attention-map exports as plain PGM/PPM plus JSON."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..model import BIFRNet
from ..synth import CLASS_NAMES, IMAGE_SIZE, SplitArrays
from .evaluation import run_batched


@dataclass
class SimilarityMatrix:
    values: np.ndarray  # N_class × N_class
    classes: list[str]

    def mean_off_diagonal(self) -> float:
        n = len(self.values)
        return float(self.values[~np.eye(n, dtype=bool)].mean())

    def to_dict(self) -> dict:
        return {"classes": self.classes, "cosine": self.values.tolist(), "mean_off_diagonal": self.mean_off_diagonal()}


def cosine_similarity(K: np.ndarray) -> np.ndarray:
    flat = np.asarray(K, dtype=np.float64).reshape(len(K), -1)
    norms = np.linalg.norm(flat, axis=1)
    assert np.all(norms > 0), "knowledge slice with zero norm"
    unit = flat / norms[:, None]
    S = unit @ unit.T
    S = 0.5 * (S + S.T)
    np.fill_diagonal(S, 1.0)
    return S


# ----------------------------------------------------------- image files


def _to_bytes(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(int)


def write_pgm(path: str | Path, img: np.ndarray) -> None:
    """Plain (P2) greyscale image from values in [0, 1]."""
    px = _to_bytes(img)
    h, w = px.shape
    rows = "\n".join(" ".join(map(str, r)) for r in px)
    Path(path).write_text(f"P2\n{w} {h}\n255\n{rows}\n")


def write_ppm(path: str | Path, img: np.ndarray) -> None:
    """Plain (P3) colour image from a 3×H×W array in [0, 1]."""
    px = _to_bytes(np.transpose(img, (1, 2, 0)))
    h, w, _ = px.shape
    rows = "\n".join(" ".join(map(str, r.ravel())) for r in px)
    Path(path).write_text(f"P3\n{w} {h}\n255\n{rows}\n")


def read_pnm(path: str | Path) -> np.ndarray:
    """Inverse of write_pgm / write_ppm, returning integer pixel values."""
    tokens = Path(path).read_text().split()
    magic, w, h, _ = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    vals = np.array(tokens[4:], dtype=int)
    if magic == "P2":
        return vals.reshape(h, w)
    if magic == "P3":
        return vals.reshape(h, w, 3)
    raise ValueError(f"unsupported image magic {magic!r}")


def export_similarity(K: np.ndarray, out: str | Path, classes=CLASS_NAMES) -> SimilarityMatrix:
    """Cosine similarity of the class slices, written as a heatmap and JSON.

    Each matrix cell becomes a 16×16 block so the heatmap is readable.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    sim = SimilarityMatrix(cosine_similarity(K), list(classes))
    heat = np.kron(np.clip(sim.values, 0.0, 1.0), np.ones((16, 16)))
    write_pgm(out / "similarity.pgm", heat)
    (out / "similarity.json").write_text(json.dumps(sim.to_dict(), indent=1))
    return sim


# ------------------------------------------------------------- attention


def upsample_nearest(P: np.ndarray, size: int = IMAGE_SIZE) -> np.ndarray:
    f = size // P.shape[-1]
    return np.repeat(np.repeat(P, f, axis=-2), f, axis=-1)


def attention_maps(model: BIFRNet, x: np.ndarray, batch: int = 200) -> np.ndarray:
    """P for each input, N×1×H_v×W_v."""
    dtype = model.params["head.fc1.w"].dtype
    return run_batched(lambda t: model.dvp_forward(model.vvp_forward(t)).P.data, x, batch, dtype)


def mask_iou(P: np.ndarray, O_f: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Per-sample IoU of the visible region predicted by P and the true one."""
    a = (P >= threshold).reshape(len(P), -1)
    b = (O_f >= 0.5).reshape(len(O_f), -1)
    inter = (a & b).sum(axis=1)
    union = (a | b).sum(axis=1)
    return np.where(union > 0, inter / np.maximum(union, 1), 1.0)


@dataclass
class AttentionStats:
    mean_iou: float
    mean_P_visible: float
    mean_P_occluded: float
    n: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def attention_stats(P: np.ndarray, O_f: np.ndarray) -> AttentionStats:
    vis = O_f >= 0.5
    return AttentionStats(
        mean_iou=float(mask_iou(P, O_f).mean()),
        mean_P_visible=float(P[vis].mean()) if vis.any() else float("nan"),
        mean_P_occluded=float(P[~vis].mean()) if (~vis).any() else float("nan"),
        n=len(P),
    )


def export_attention(model: BIFRNet, test: SplitArrays, indices, out: str | Path) -> list[dict]:
    """Write input / upsampled attention / feature-mask triplets for chosen samples."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    indices = [int(i) for i in indices]
    P = attention_maps(model, test.x_occ[indices])
    records = []
    for j, i in enumerate(indices):
        stem = f"{i:05d}_{test.levels[i]}_{test.types[i]}"
        write_ppm(out / f"{stem}_input.ppm", test.x_occ[i])
        write_pgm(out / f"{stem}_attention.pgm", upsample_nearest(P[j, 0]))
        write_pgm(out / f"{stem}_mask.pgm", upsample_nearest(test.O_f[i, 0]))
        records.append(
            {
                "index": i,
                "level": test.levels[i],
                "type": test.types[i],
                "label": int(test.labels[i]),
                "P": P[j, 0].tolist(),
                "iou": float(mask_iou(P[j : j + 1], test.O_f[i : i + 1])[0]),
            }
        )
    (out / "attention.json").write_text(json.dumps(records, indent=1))
    return records
