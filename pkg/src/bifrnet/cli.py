"""Command-line entry point: ``bifrnet <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import synth
from .model import BIFRNet
from .training import TrainConfig, pretrain_teacher, train

log_ = logging.getLogger("bifrnet")

USAGE_ERROR = 1
RUNTIME_ERROR = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _sigmas(text: str) -> list[float]:
    try:
        vals = [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")
    if not vals or any(v < 0 for v in vals):
        raise argparse.ArgumentTypeError("sigmas must be a non-empty list of values >= 0")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bifrnet", description="Occlusion-robust classifier: data, training, evaluation, ablations.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate the synthetic occluded dataset")
    g.add_argument("--config", required=True, help="dataset config JSON")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)

    t = sub.add_parser("pretrain-teacher", help="train the clean-image teacher")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config", help="training config JSON")
    t.add_argument("--seed", type=int)

    tr = sub.add_parser("train", help="train the occlusion-robust model")
    tr.add_argument("--config", help="training config JSON")
    tr.add_argument("--data", required=True)
    tr.add_argument("--teacher", required=True)
    tr.add_argument("--out", required=True)
    tr.add_argument("--seed", type=int)

    e = sub.add_parser("eval", help="accuracy grid over occlusion level and occluder type")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--seed", type=int, default=0)

    a = sub.add_parser("ablate", help="knowledge and completion ablations")
    a.add_argument("--kind", required=True, choices=["knowledge-noise", "completion-cutoff", "BIFRNet-K", "BIFRNet-Completion"])
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--ckpt", help="trained checkpoint (knowledge-noise, completion-cutoff)")
    a.add_argument("--teacher", help="teacher checkpoint (retrained variants)")
    a.add_argument("--config", help="training config JSON (retrained variants)")
    a.add_argument("--sigmas", type=_sigmas, default=[0.0, 1.0, 3.0, 5.0])
    a.add_argument("--seed", type=int, default=0)

    x = sub.add_parser("export-attention", help="write input / attention / mask image triplets")
    x.add_argument("--ckpt", required=True)
    x.add_argument("--data", required=True)
    x.add_argument("--out", required=True)
    x.add_argument("--per-level", type=int, default=2, help="samples per occlusion level")
    x.add_argument("--seed", type=int, default=0)

    k = sub.add_parser("export-knowledge", help="cosine similarity of the knowledge matrix")
    k.add_argument("--ckpt", required=True)
    k.add_argument("--out", required=True)
    k.add_argument("--seed", type=int, default=0)
    return p


# ---------------------------------------------------------------- commands


def _train_config(args) -> TrainConfig:
    cfg = TrainConfig.from_file(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        cfg = TrainConfig.from_dict({**asdict(cfg), "seed": args.seed})
    return cfg


def _emit(title: str, text: str) -> None:
    print(f"===== {title} =====")
    print(text)
    print(f"===== end {title} =====")


def cmd_gen_data(args) -> None:
    raw = json.loads(Path(args.config).read_text())
    if args.seed is not None:
        raw["seed"] = args.seed
    cfg = synth.DatasetConfig.from_dict(raw)
    manifest = synth.gen_dataset(cfg, args.out)
    _emit("gen-data", json.dumps(manifest["counts"], sort_keys=True))


def cmd_pretrain_teacher(args) -> None:
    _, history = pretrain_teacher(args.data, _train_config(args), args.out)
    _emit("pretrain-teacher", "\n".join(json.dumps(h, sort_keys=True) for h in history))


def cmd_train(args) -> None:
    from .harness.plotting import plot_training

    _, history = train(args.data, args.teacher, _train_config(args), args.out)
    plot_training(history, Path(args.out) / "training.png")
    _emit("train", "\n".join(json.dumps(h, sort_keys=True) for h in history))


def cmd_eval(args) -> None:
    from .harness import eval_grid, render_table, write_report
    from .harness.plotting import plot_grid

    model = BIFRNet.load(args.ckpt)
    test = synth.load_split(args.data, "test", with_clean=False)
    grid, pred = eval_grid(model, test)
    text = render_table(grid, model.config.variant)
    out = Path(args.out)
    write_report(out, {"grid": grid.to_dict(), "predictions": pred.tolist(), "ckpt": str(args.ckpt)}, text)
    plot_grid(grid, out / "grid.png")
    _emit("eval", text)


def cmd_ablate(args) -> None:
    from .harness import ablation, eval_grid, render_table, write_report
    from .harness.plotting import plot_level_means

    out = Path(args.out)
    test = synth.load_split(args.data, "test", with_clean=False)
    if args.kind in ("knowledge-noise", "completion-cutoff"):
        if not args.ckpt:
            raise UsageError(f"ablate --kind {args.kind} requires --ckpt")
        model = BIFRNet.load(args.ckpt)
        if args.kind == "knowledge-noise":
            reports = ablation.ablate_knowledge_noise(model, args.sigmas, test, seed=args.seed)
        else:
            base, _ = eval_grid(model, test)
            reports = [ablation.AblationReport("baseline", base, {"ckpt": str(args.ckpt)})]
            reports.append(ablation.ablate_completion_cutoff(model, test))
    else:
        if not args.teacher:
            raise UsageError(f"ablate --kind {args.kind} requires --teacher")
        _, report, _ = ablation.retrain_variant(args.kind, args.data, args.teacher, _train_config(args), out / "model", test)
        reports = [report]
        if args.ckpt:
            base, _ = eval_grid(BIFRNet.load(args.ckpt), test)
            reports.insert(0, ablation.AblationReport("baseline", base, {"ckpt": str(args.ckpt)}))
    text = "\n".join(render_table(r.grid, r.variant) for r in reports)
    write_report(out, {"kind": args.kind, "seed": args.seed, "reports": [r.to_dict() for r in reports]}, text)
    plot_level_means({r.variant: r.grid for r in reports}, out / "ablation.png", args.kind)
    _emit(f"ablate {args.kind}", text)


def cmd_export_attention(args) -> None:
    from .harness import export_attention
    from .harness.plotting import plot_attention
    from .harness.export import upsample_nearest

    test = synth.load_split(args.data, "test", with_clean=False)
    rng = np.random.default_rng([args.seed, 0xA77])
    levels = np.array(test.levels)
    idx = []
    for lv in synth.LEVELS:
        pool = np.flatnonzero(levels == lv)
        idx += sorted(rng.choice(pool, size=min(args.per_level, len(pool)), replace=False).tolist())
    records = export_attention(BIFRNet.load(args.ckpt), test, idx, args.out)
    for r in records:
        i = r["index"]
        plot_attention(test.x_occ[i], upsample_nearest(np.array(r["P"])), upsample_nearest(test.O_f[i, 0]), Path(args.out) / f"{i:05d}.png")
    _emit("export-attention", "\n".join(f"{r['index']:5d} {r['level']} {r['type']:<9} IoU {r['iou']:.3f}" for r in records))


def cmd_export_knowledge(args) -> None:
    from .harness import export_similarity
    from .harness.plotting import plot_similarity

    model = BIFRNet.load(args.ckpt)
    if model.config.variant == "no-knowledge":
        raise ValueError("checkpoint has no knowledge matrix")
    classes = list(synth.CLASS_NAMES[: model.config.n_class])
    sim = export_similarity(model.knowledge().data, args.out, classes)
    plot_similarity(sim.values, classes, Path(args.out) / "similarity.png")
    rows = [f"{c:>9} " + " ".join(f"{v:6.3f}" for v in row) for c, row in zip(classes, sim.values)]
    rows.append(f"mean off-diagonal {sim.mean_off_diagonal():.4f}")
    _emit("export-knowledge", "\n".join(rows))


COMMANDS = {
    "gen-data": cmd_gen_data,
    "pretrain-teacher": cmd_pretrain_teacher,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "export-attention": cmd_export_attention,
    "export-knowledge": cmd_export_knowledge,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return USAGE_ERROR
    except SystemExit as e:  # --help
        return 0 if not e.code else USAGE_ERROR
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as e:
        print(f"bifrnet {args.command}: error: {e}", file=sys.stderr)
        return USAGE_ERROR
    except Exception as e:  # noqa: BLE001
        log_.debug("command failed", exc_info=True)
        print(f"bifrnet {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return RUNTIME_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())
