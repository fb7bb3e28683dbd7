"""Procedural shape dataset with synthetic block occlusion.

Six shape classes are rendered with anti-aliasing (4×4 supersampling) on a
faint textured background. Occluded variants follow
``x_occ = x * o + m * (1 - o)`` where ``o`` is a binary visibility mask
(1 = visible) that is zero inside one axis-aligned rectangle, and ``m`` is
the occluder patch, present only inside that rectangle.
"""

from __future__ import annotations

import colorsys
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .numerics import btf

log = logging.getLogger(__name__)

CLASS_NAMES = ("triangle", "disc", "cross", "ring", "bar-grid", "star")
N_CLASS = len(CLASS_NAMES)
IMAGE_SIZE = 64
FEATURE_SIZE = 4
OCCLUDER_TYPES = ("unchanged", "white", "noise", "texture", "object")
LEVELS = ("L0", "L1", "L2", "L3")
LEVEL_BANDS = {"L1": (0.20, 0.40), "L2": (0.40, 0.60), "L3": (0.60, 0.80)}
# class hue centres (degrees); jitter stays inside +-20 so palettes never overlap
CLASS_HUES = (0.0, 55.0, 120.0, 185.0, 240.0, 295.0)
SCALE_RANGE = (0.62, 0.83)  # shape radius as a fraction of the half-frame
MAX_TRIES = 1000
# object-occluder prototypes are identified by seed; the two ranges are disjoint
TRAIN_OCCLUDER_SEEDS = range(0, 500)
TEST_OCCLUDER_SEEDS = range(500, 1000)
OCCLUDER_KINDS = ("ellipse", "crescent", "arrow", "hexagon", "ell", "diamond", "heart")

_SPLIT_CODES = {"train": 1, "val": 2, "test": 3}
_SS = 4  # supersampling factor per axis


class GenerationError(RuntimeError):
    """Rejection sampling could not satisfy the requested occlusion band."""


@dataclass(frozen=True)
class Pose:
    scale: float
    rotation: float
    tx: float
    ty: float


@dataclass
class CleanSample:
    image: np.ndarray  # 3×H×W in [0, 1]
    label: int
    pose: Pose
    bbox: tuple[int, int, int, int]  # (row0, col0, row1, col1), half-open


@dataclass(frozen=True)
class OcclusionSpec:
    occluder_type: str
    level: str
    seed: int

    def __post_init__(self):
        if self.level not in LEVELS:
            raise ValueError(f"unknown level {self.level!r}")
        if self.occluder_type not in OCCLUDER_TYPES:
            raise ValueError(f"unknown occluder type {self.occluder_type!r}")
        if (self.level == "L0") != (self.occluder_type == "unchanged"):
            raise ValueError(f"level {self.level} is incompatible with occluder {self.occluder_type}")


@dataclass
class MaskPair:
    o: np.ndarray  # 1×H×W
    O_f: np.ndarray  # 1×H_v×W_v


@dataclass
class OccludedSample:
    clean: CleanSample
    x_occ: np.ndarray
    masks: MaskPair
    spec: OcclusionSpec
    realized_occluded_fraction: float
    occluder: dict = field(default_factory=dict)


# ---------------------------------------------------------------- geometry


def _grid(size: int) -> tuple[np.ndarray, np.ndarray]:
    """Supersampled pixel-centre coordinates, shape (size*SS, size*SS)."""
    t = (np.arange(size * _SS) + 0.5) / _SS
    return np.meshgrid(t, t, indexing="ij")


def _polygon_inside(u: np.ndarray, v: np.ndarray, verts: np.ndarray) -> np.ndarray:
    # even-odd ray casting, vectorised over the sample grid
    inside = np.zeros(u.shape, dtype=bool)
    n = len(verts)
    for i in range(n):
        x1, y1 = verts[i]
        x2, y2 = verts[(i + 1) % n]
        cond = (y1 > v) != (y2 > v)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = (x2 - x1) * (v - y1) / (y2 - y1) + x1
        inside ^= cond & (u < xint)
    return inside


def _regular_star(points: int, outer: float, inner: float, phase: float = -math.pi / 2) -> np.ndarray:
    angles = phase + np.arange(2 * points) * math.pi / points
    radii = np.where(np.arange(2 * points) % 2 == 0, outer, inner)
    return np.stack([radii * np.cos(angles), radii * np.sin(angles)], axis=1)


def _class_inside(class_id: int, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Canonical shapes, all contained in the unit disc."""
    r = np.hypot(u, v)
    if class_id == 0:  # triangle
        ang = -math.pi / 2 + np.arange(3) * 2 * math.pi / 3
        return _polygon_inside(u, v, np.stack([0.98 * np.cos(ang), 0.98 * np.sin(ang)], axis=1))
    if class_id == 1:  # disc
        return r <= 0.9
    if class_id == 2:  # cross
        w = 0.2
        return ((np.abs(u) <= w) & (np.abs(v) <= 0.94)) | ((np.abs(v) <= w) & (np.abs(u) <= 0.94))
    if class_id == 3:  # ring
        return (r <= 0.95) & (r >= 0.55)
    if class_id == 4:  # bar-grid: three vertical bars
        half = 0.68
        in_box = (np.abs(u) <= half) & (np.abs(v) <= half)
        bars = (np.abs(u) <= 0.14) | (np.abs(np.abs(u) - 0.54) <= 0.14)
        return in_box & bars
    if class_id == 5:  # star
        return _polygon_inside(u, v, _regular_star(5, 0.98, 0.42))
    raise ValueError(f"class id {class_id} out of range 0..{N_CLASS - 1}")


def _occluder_inside(kind: str, u: np.ndarray, v: np.ndarray, p: np.ndarray) -> np.ndarray:
    r = np.hypot(u, v)
    if kind == "ellipse":
        return (u / 0.95) ** 2 + (v / (0.4 + 0.4 * p[0])) ** 2 <= 1.0
    if kind == "crescent":
        return (r <= 0.9) & (np.hypot(u - 0.3 - 0.2 * p[0], v) >= 0.7)
    if kind == "arrow":
        verts = np.array([[-0.9, -0.2], [0.2, -0.2], [0.2, -0.6], [0.9, 0.0], [0.2, 0.6], [0.2, 0.2], [-0.9, 0.2]])
        return _polygon_inside(u, v, verts)
    if kind == "hexagon":
        ang = np.arange(6) * math.pi / 3 + p[0]
        return _polygon_inside(u, v, np.stack([0.9 * np.cos(ang), 0.9 * np.sin(ang)], axis=1))
    if kind == "ell":
        return ((np.abs(u + 0.5) <= 0.25) & (np.abs(v) <= 0.9)) | ((np.abs(v - 0.65) <= 0.25) & (np.abs(u) <= 0.75))
    if kind == "diamond":
        return np.abs(u) / 0.95 + np.abs(v) / (0.5 + 0.4 * p[0]) <= 1.0
    if kind == "heart":
        x, y = u * 1.2, -v * 1.2 + 0.3
        return (x * x + y * y - 1.0) ** 3 - x * x * y**3 <= 0.0
    raise ValueError(f"unknown occluder kind {kind!r}")


def _coverage(inside_fn, size: int, pose: Pose) -> np.ndarray:
    """Anti-aliased coverage in [0,1] of a canonical shape under ``pose``."""
    rows, cols = _grid(size)
    radius = pose.scale * size / 2.0
    cy = size / 2.0 + pose.ty
    cx = size / 2.0 + pose.tx
    y = (rows - cy) / radius
    x = (cols - cx) / radius
    c, s = math.cos(pose.rotation), math.sin(pose.rotation)
    u = c * x + s * y
    v = -s * x + c * y
    hit = inside_fn(u, v).astype(np.float64)
    return hit.reshape(size, _SS, size, _SS).mean(axis=(1, 3))


def _hsv(h_deg: float, s: float, v: float) -> np.ndarray:
    return np.array(colorsys.hsv_to_rgb((h_deg % 360.0) / 360.0, s, v))


def _background(size: int, rng: np.random.Generator) -> np.ndarray:
    """Faint grey value-noise texture."""
    coarse = rng.uniform(-1.0, 1.0, size=(9, 9))
    t = np.linspace(0, 8, size)
    i0 = np.clip(t.astype(int), 0, 7)
    f = t - i0
    rows = coarse[i0] * (1 - f)[:, None] + coarse[i0 + 1] * f[:, None]
    tex = rows[:, i0] * (1 - f)[None, :] + rows[:, i0 + 1] * f[None, :]
    base = rng.uniform(0.35, 0.55)
    tint = rng.uniform(-0.03, 0.03, size=3)
    img = base + 0.06 * tex[None] + tint[:, None, None]
    return np.clip(img, 0.0, 1.0)


def _bbox(alpha: np.ndarray) -> tuple[int, int, int, int]:
    ys, xs = np.nonzero(alpha >= 0.5)
    return int(ys.min()), int(xs.min()), int(ys.max()) + 1, int(xs.max()) + 1


# ----------------------------------------------------------------- render


def sample_pose(rng: np.random.Generator, size: int = IMAGE_SIZE) -> Pose:
    scale = float(rng.uniform(*SCALE_RANGE))
    radius = scale * size / 2.0
    slack = max(size / 2.0 - radius - 1.0, 0.0)
    return Pose(
        scale=scale,
        rotation=float(rng.uniform(0.0, 2.0 * math.pi)),
        tx=float(rng.uniform(-slack, slack)),
        ty=float(rng.uniform(-slack, slack)),
    )


def render_shape(class_id: int, pose: Pose, size: int = IMAGE_SIZE) -> CleanSample:
    """Deterministic render of class ``class_id`` under ``pose``.

    Palette, background and anti-aliasing all derive from ``(class_id, pose)``
    alone, so equal arguments give bit-identical images.
    """
    if not 0 <= class_id < N_CLASS:
        raise ValueError(f"class id {class_id} out of range 0..{N_CLASS - 1}")
    digest = hashlib.sha256(repr((class_id, pose.scale, pose.rotation, pose.tx, pose.ty)).encode()).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    alpha = _coverage(lambda u, v: _class_inside(class_id, u, v), size, pose)
    color = _hsv(CLASS_HUES[class_id] + rng.uniform(-20, 20), rng.uniform(0.65, 1.0), rng.uniform(0.75, 1.0))
    bg = _background(size, rng)
    img = bg * (1.0 - alpha[None]) + color[:, None, None] * alpha[None]
    return CleanSample(image=np.clip(img, 0.0, 1.0), label=class_id, pose=pose, bbox=_bbox(alpha))


def sample_clean(class_id: int, rng: np.random.Generator, size: int = IMAGE_SIZE) -> CleanSample:
    """Draw a pose whose object bounding box covers 30-70% of the frame."""
    for _ in range(MAX_TRIES):
        sample = render_shape(class_id, sample_pose(rng, size), size)
        r0, c0, r1, c1 = sample.bbox
        frac = (r1 - r0) * (c1 - c0) / float(size * size)
        if 0.30 <= frac <= 0.70:
            return sample
    raise GenerationError(f"no pose with bbox in [0.3, 0.7] of frame for class {class_id}")


# --------------------------------------------------------------- occluders


def occluder_prototype(seed: int) -> dict:
    """Shape kind, colours and parameters of object occluder ``seed``."""
    rng = np.random.default_rng([7919, seed])
    return {
        "seed": int(seed),
        "kind": OCCLUDER_KINDS[int(rng.integers(len(OCCLUDER_KINDS)))],
        "params": rng.uniform(0.0, 1.0, size=2).tolist(),
        "fg": _hsv(rng.uniform(0, 360), rng.uniform(0.4, 1.0), rng.uniform(0.4, 1.0)).tolist(),
        "bg": _hsv(rng.uniform(0, 360), rng.uniform(0.0, 0.6), rng.uniform(0.2, 0.9)).tolist(),
        "rotation": float(rng.uniform(0, 2 * math.pi)),
    }


def render_occluder_object(seed: int, h: int, w: int) -> np.ndarray:
    proto = occluder_prototype(seed)
    side = max(h, w)
    pose = Pose(scale=0.95, rotation=proto["rotation"], tx=0.0, ty=0.0)
    params = np.asarray(proto["params"])
    alpha = _coverage(lambda u, v: _occluder_inside(proto["kind"], u, v, params), side, pose)
    r0, c0 = (side - h) // 2, (side - w) // 2
    alpha = alpha[r0 : r0 + h, c0 : c0 + w]
    fg = np.asarray(proto["fg"])[:, None, None]
    bg = np.asarray(proto["bg"])[:, None, None]
    return np.clip(bg * (1.0 - alpha[None]) + fg * alpha[None], 0.0, 1.0)


def _plaid(h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    f1, f2 = rng.uniform(0.15, 0.9, size=2)
    p1, p2 = rng.uniform(0, 2 * math.pi, size=2)
    th = rng.uniform(0, math.pi)
    a = xx * math.cos(th) + yy * math.sin(th)
    b = -xx * math.sin(th) + yy * math.cos(th)
    wave = 0.5 + 0.25 * np.sin(f1 * a + p1) + 0.25 * np.sin(f2 * b + p2)
    c1 = _hsv(rng.uniform(0, 360), rng.uniform(0.0, 0.8), rng.uniform(0.2, 1.0))
    c2 = _hsv(rng.uniform(0, 360), rng.uniform(0.0, 0.8), rng.uniform(0.2, 1.0))
    return c1[:, None, None] * wave[None] + c2[:, None, None] * (1.0 - wave[None])


def sample_occluder(occluder_type: str, shape: tuple[int, int], rng: np.random.Generator, pool=TRAIN_OCCLUDER_SEEDS) -> np.ndarray:
    """3×h×w occluder patch of the given type."""
    h, w = shape
    if occluder_type == "white":
        return np.ones((3, h, w))
    if occluder_type == "noise":
        return rng.uniform(0.0, 1.0, size=(3, h, w))
    if occluder_type == "texture":
        return np.clip(_plaid(h, w, rng), 0.0, 1.0)
    if occluder_type == "object":
        seed = int(pool[int(rng.integers(len(pool)))])
        return render_occluder_object(seed, h, w)
    raise ValueError(f"cannot sample an occluder of type {occluder_type!r}")


# -------------------------------------------------------------- occlusion


def occluded_fraction(bbox: tuple[int, int, int, int], rect: tuple[int, int, int, int]) -> float:
    r0, c0, r1, c1 = bbox
    q0, d0, q1, d1 = rect
    ih = max(0, min(r1, q1) - max(r0, q0))
    iw = max(0, min(c1, d1) - max(c0, d0))
    return ih * iw / float((r1 - r0) * (c1 - c0))


def _place_rectangle(bbox, band, size, rng):
    r0, c0, r1, c1 = bbox
    bh, bw = r1 - r0, c1 - c0
    lo, hi = band
    for _ in range(MAX_TRIES):
        target = rng.uniform(lo, hi)
        # rectangles may overhang the box, so grow the area a little
        area = target * bh * bw * rng.uniform(1.0, 1.4)
        h = int(rng.integers(max(1, int(math.ceil(area / size))), size + 1))
        w = int(np.clip(round(area / h), 1, size))
        q0 = int(rng.integers(0, size - h + 1))
        d0 = int(rng.integers(0, size - w + 1))
        rect = (q0, d0, q0 + h, d0 + w)
        frac = occluded_fraction(bbox, rect)
        if lo <= frac <= hi:
            return rect, frac
    return None, None


def downsample_mask(o: np.ndarray, factor: int = IMAGE_SIZE // FEATURE_SIZE) -> np.ndarray:
    """Average-pool ``o`` (1×H×W) by ``factor`` and threshold: a cell is
    visible iff at least half of its pixels are visible."""
    if o.ndim != 3 or o.shape[1] % factor or o.shape[2] % factor:
        raise ValueError(f"mask of shape {o.shape} is not divisible by {factor}")
    c, h, w = o.shape
    frac = o.reshape(c, h // factor, factor, w // factor, factor).mean(axis=(2, 4))
    return (frac >= 0.5).astype(o.dtype)


def apply_occlusion(
    x: CleanSample,
    spec: OcclusionSpec,
    pool=TRAIN_OCCLUDER_SEEDS,
    force_mask: np.ndarray | None = None,
) -> OccludedSample:
    """Occlude ``x`` per ``spec``. ``force_mask`` (test hook) bypasses
    placement and uses the given visibility mask with a full-frame occluder."""
    size = x.image.shape[-1]
    rng = np.random.default_rng([spec.seed, 0x0CC])
    occluder: dict = {}
    if force_mask is not None:
        o = force_mask.astype(np.float64).reshape(1, size, size)
        kind = spec.occluder_type if spec.occluder_type != "unchanged" else "white"
        m = sample_occluder(kind, (size, size), rng, pool)
        x_occ = x.image * o + m * (1.0 - o)
        frac = float(1.0 - o[0, x.bbox[0] : x.bbox[2], x.bbox[1] : x.bbox[3]].mean())
        return OccludedSample(x, x_occ, MaskPair(o, downsample_mask(o)), spec, frac, {"forced": True})

    o = np.ones((1, size, size))
    m = np.zeros((3, size, size))
    frac = 0.0
    if spec.level != "L0":
        rect, frac = _place_rectangle(x.bbox, LEVEL_BANDS[spec.level], size, rng)
        if rect is None:
            raise GenerationError(f"could not place an occluder for {spec} after {MAX_TRIES} tries")
        q0, d0, q1, d1 = rect
        if spec.occluder_type == "object":
            seed = int(pool[int(rng.integers(len(pool)))])
            patch = render_occluder_object(seed, q1 - q0, d1 - d0)
            occluder["object_seed"] = seed
        else:
            patch = sample_occluder(spec.occluder_type, (q1 - q0, d1 - d0), rng, pool)
        o[:, q0:q1, d0:d1] = 0.0
        m[:, q0:q1, d0:d1] = patch
        occluder["rect"] = list(rect)
    x_occ = x.image * o + m * (1.0 - o)
    return OccludedSample(x, x_occ, MaskPair(o, downsample_mask(o)), spec, float(frac), occluder)


# ---------------------------------------------------------------- dataset


@dataclass
class DatasetConfig:
    classes: list[str] = field(default_factory=lambda: list(CLASS_NAMES))
    train: int = 4000
    val: int = 600
    test_per_class_level: int = 100
    seed: int = 0
    dtype: str = "float32"

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown dataset config keys: {sorted(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if list(self.classes) != list(CLASS_NAMES[: len(self.classes)]) or not self.classes:
            raise ValueError(f"classes must be a prefix of {CLASS_NAMES}")
        for name in ("train", "val", "test_per_class_level"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")


TRAIN_OPERATIONS = ("unchanged", "white", "noise", "image")


def plan_split(cfg: DatasetConfig, split: str) -> list[dict]:
    """Per-sample (label, spec) plan; cheap and fully determined by the seed."""
    n_class = len(cfg.classes)
    plan = []
    if split in ("train", "val"):
        count = cfg.train if split == "train" else cfg.val
        for i in range(count):
            rng = np.random.default_rng([cfg.seed, _SPLIT_CODES[split], i, 1])
            op = TRAIN_OPERATIONS[int(rng.integers(4))]
            if op == "unchanged":
                otype, level = "unchanged", "L0"
            else:
                otype = op if op != "image" else ("texture", "object")[int(rng.integers(2))]
                level = LEVELS[1 + int(rng.integers(3))]
            plan.append({"index": i, "label": i % n_class, "occluder_type": otype, "level": level})
    elif split == "test":
        i = 0
        types = OCCLUDER_TYPES[1:]
        for level in LEVELS:
            for c in range(n_class):
                for k in range(cfg.test_per_class_level):
                    otype = "unchanged" if level == "L0" else types[k % len(types)]
                    plan.append({"index": i, "label": c, "occluder_type": otype, "level": level})
                    i += 1
    else:
        raise ValueError(f"unknown split {split!r}")
    return plan


def make_sample(cfg: DatasetConfig, split: str, entry: dict) -> OccludedSample:
    code = _SPLIT_CODES[split]
    rng = np.random.default_rng([cfg.seed, code, entry["index"], 2])
    clean = sample_clean(entry["label"], rng)
    spec_seed = int(np.random.default_rng([cfg.seed, code, entry["index"], 3]).integers(2**63))
    spec = OcclusionSpec(entry["occluder_type"], entry["level"], spec_seed)
    pool = TEST_OCCLUDER_SEEDS if split == "test" else TRAIN_OCCLUDER_SEEDS
    return apply_occlusion(clean, spec, pool)


def _write_sample(root: Path, split: str, sample: OccludedSample, index: int, dtype) -> dict:
    stem = f"{split}/{index:05d}"
    files = {
        "x_occ": f"{stem}_occ.btf",
        "x_clean": f"{stem}_clean.btf",
        "o": f"{stem}_o.btf",
        "O_f": f"{stem}_of.btf",
    }
    btf.save(root / files["x_occ"], sample.x_occ.astype(dtype))
    btf.save(root / files["x_clean"], sample.clean.image.astype(dtype))
    btf.save(root / files["o"], sample.masks.o.astype(dtype))
    btf.save(root / files["O_f"], sample.masks.O_f.astype(dtype))
    return {
        "files": files,
        "label": sample.clean.label,
        "spec": asdict(sample.spec),
        "realized_occluded_fraction": round(sample.realized_occluded_fraction, 12),
        "pose": asdict(sample.clean.pose),
        "bbox": list(sample.clean.bbox),
        "occluder": sample.occluder,
    }


MANIFEST_VERSION = 1


def gen_dataset(cfg: DatasetConfig, out: str | Path) -> dict:
    """Write every split as BTF1 files plus ``manifest.json``; returns the manifest."""
    cfg.validate()
    root = Path(out)
    dtype = np.dtype(cfg.dtype)
    manifest = {
        "version": MANIFEST_VERSION,
        "classes": list(cfg.classes),
        "seed": cfg.seed,
        "config": asdict(cfg),
        "counts": {},
        "splits": {},
    }
    for split in ("train", "val", "test"):
        (root / split).mkdir(parents=True, exist_ok=True)
        plan = plan_split(cfg, split)
        records = []
        for entry in plan:
            sample = make_sample(cfg, split, entry)
            records.append(_write_sample(root, split, sample, entry["index"], dtype))
        manifest["splits"][split] = records
        manifest["counts"][split] = len(records)
        log.info("wrote %d %s samples", len(records), split)
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest


def load_manifest(root: str | Path) -> dict:
    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text())
    for split, recs in manifest["splits"].items():
        if len(recs) != manifest["counts"][split]:
            raise ValueError(f"manifest split {split}: {len(recs)} records, declared {manifest['counts'][split]}")
    return manifest


def regenerate(root: str | Path, split: str, index: int) -> OccludedSample:
    """Rebuild one sample from the seeds stored in the manifest."""
    manifest = load_manifest(root)
    cfg = DatasetConfig.from_dict(manifest["config"])
    entry = plan_split(cfg, split)[index]
    return make_sample(cfg, split, entry)


@dataclass
class SplitArrays:
    x_occ: np.ndarray  # N×3×H×W
    x_clean: np.ndarray
    O_f: np.ndarray  # N×1×H_v×W_v
    labels: np.ndarray  # N
    levels: list[str]
    types: list[str]

    def __len__(self) -> int:
        return len(self.labels)


def load_split(root: str | Path, split: str, manifest: dict | None = None, with_clean: bool = True) -> SplitArrays:
    root = Path(root)
    manifest = manifest or load_manifest(root)
    recs = manifest["splits"][split]
    x_occ = np.stack([btf.load(root / r["files"]["x_occ"]) for r in recs]) if recs else np.zeros((0, 3, IMAGE_SIZE, IMAGE_SIZE))
    x_clean = np.stack([btf.load(root / r["files"]["x_clean"]) for r in recs]) if recs and with_clean else None
    O_f = np.stack([btf.load(root / r["files"]["O_f"]) for r in recs]) if recs else np.zeros((0, 1, FEATURE_SIZE, FEATURE_SIZE))
    return SplitArrays(
        x_occ=x_occ,
        x_clean=x_clean,
        O_f=O_f,
        labels=np.array([r["label"] for r in recs], dtype=np.int64),
        levels=[r["spec"]["level"] for r in recs],
        types=[r["spec"]["occluder_type"] for r in recs],
    )
