"""Knowledge and completion ablations."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..model import BIFRNet, Teacher
from ..synth import SplitArrays, load_split
from ..training import TrainConfig, train
from .evaluation import EvalGrid, eval_grid

VARIANT_NAMES = ("baseline", "completion-cutoff", "BIFRNet-K", "BIFRNet-Completion")
RETRAIN_KINDS = {"BIFRNet-K": "no-knowledge", "BIFRNet-Completion": "no-completion"}


def noise_variant_name(sigma: float) -> str:
    return "baseline" if sigma == 0 else f"K+N(0,{sigma:g})"


def _valid_name(name: str) -> bool:
    return name in VARIANT_NAMES or (name.startswith("K+N(0,") and name.endswith(")"))


@dataclass
class AblationReport:
    variant: str
    grid: EvalGrid
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if not _valid_name(self.variant):
            raise ValueError(f"unknown ablation variant {self.variant!r}")

    def to_dict(self) -> dict:
        return {"variant": self.variant, "grid": self.grid.to_dict(), "config": self.config}


def knowledge_noise(model: BIFRNet, seed: int) -> np.ndarray:
    """Standard-normal draw shaped like the knowledge logits, fixed per run."""
    Z = model.params["knowledge.Z"]
    return np.random.default_rng([seed, 0x4E01]).standard_normal(Z.shape)


def ablate_knowledge_noise(model: BIFRNet, sigmas, test: SplitArrays, seed: int = 0) -> list[AblationReport]:
    """Re-evaluate with N(0, sigma) noise added to the knowledge logits.

    One standard-normal matrix is drawn per run and scaled by each sigma.
    """
    if model.config.variant == "no-knowledge":
        raise ValueError("model has no knowledge matrix to perturb")
    base = knowledge_noise(model, seed)
    reports = []
    for sigma in sigmas:
        sigma = float(sigma)
        noise = None if sigma == 0.0 else sigma * base
        grid, _ = eval_grid(model, test, knowledge_noise=noise)
        reports.append(AblationReport(noise_variant_name(sigma), grid, {"sigma": sigma, "noise_seed": seed}))
    return reports


def ablate_completion_cutoff(model: BIFRNet, test: SplitArrays) -> AblationReport:
    """Classify the visible features directly, skipping the completion module."""
    grid, _ = eval_grid(model, test, cutoff=True)
    return AblationReport("completion-cutoff", grid, {"cutoff": True})


def retrain_variant(
    kind: str,
    data_dir: str | Path,
    teacher: Teacher | str | Path,
    cfg: TrainConfig,
    out: str | Path,
    test: SplitArrays | None = None,
) -> tuple[BIFRNet, AblationReport, list[dict]]:
    if kind not in RETRAIN_KINDS:
        raise ValueError(f"unknown retrain kind {kind!r}; expected one of {sorted(RETRAIN_KINDS)}")
    vcfg = TrainConfig.from_dict({**asdict(cfg), "variant": RETRAIN_KINDS[kind]})
    model, history = train(data_dir, teacher, vcfg, out)
    test = test if test is not None else load_split(data_dir, "test", with_clean=False)
    grid, _ = eval_grid(model, test)
    return model, AblationReport(kind, grid, {"train_config": asdict(vcfg)}), history
