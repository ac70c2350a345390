"""Command-line pipeline runner.

Subcommands: prepare (split a manifest), train, evaluate, perturb (build a
corrupted test set), report (render a saved report). Exit codes: 0 success,
2 data error, 3 training numeric failure, 4 checkpoint mismatch, 1 otherwise.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .checkpoint import CheckpointMismatch, load_checkpoint, load_pretrained
from .config import RunConfig, apply_tiny, load_config, with_seed
from .data import (CLASS_NAMES, DataError, Split, load_labeled_images,
                   load_manifest, split_entries, write_manifest)
from .evaluation import evaluate
from .model import ModelVariant, build_model
from .perturb import MODES, PerturbationPlan, per_mode_report, write_perturbed_set
from .train import NonFiniteLoss, fit


def _dump_json(payload: dict, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _base_config(args) -> RunConfig:
    config = load_config(getattr(args, "config", None))
    if getattr(args, "output", None):
        config = replace(config, output_dir=args.output)
    if getattr(args, "seed", None) is not None:
        config = with_seed(config, args.seed)
    if getattr(args, "tiny", False):
        config = apply_tiny(config)
    return config


def _resolve_manifest(args, config: RunConfig):
    manifest_arg = getattr(args, "manifest", None) or config.data.manifest
    if manifest_arg is None:
        raise DataError("no manifest given (positional argument or data.manifest in config)")
    manifest_path = Path(manifest_arg)
    root = getattr(args, "root", None) or config.data.root
    return load_manifest(manifest_path,
                         root=Path(root) if root else None,
                         verify_files=config.data.verify_files)


def cmd_prepare(args) -> int:
    config = _base_config(args)
    manifest = _resolve_manifest(args, config)
    fractions = config.data.fractions
    train_e, val_e, test_e = split_entries(manifest, fractions, config.seed)
    out = Path(config.output_dir)
    splits_dir = out / "splits"
    for name, entries in (("train", train_e), ("val", val_e), ("test", test_e)):
        write_manifest(entries, splits_dir / f"{name}.tsv")
    _dump_json({
        "seed": config.seed,
        "fractions": list(fractions),
        "counts": {"train": len(train_e), "val": len(val_e), "test": len(test_e)},
        "root": str(manifest.root.resolve()),
        "image_side": config.model.image_side,
    }, splits_dir / "split.json")
    print(f"wrote {len(train_e)}/{len(val_e)}/{len(test_e)} "
          f"train/val/test entries to {splits_dir}")
    return 0


def cmd_train(args) -> int:
    config = _base_config(args)
    train_cfg = config.train
    if args.no_augment:
        train_cfg = replace(train_cfg, augment_enabled=False)
    for flag, name in (("epochs", "epochs"), ("max_steps", "max_steps"),
                       ("batch_size", "batch_size"), ("lr", "learning_rate"),
                       ("eval_every", "eval_every")):
        value = getattr(args, flag)
        if value is not None:
            train_cfg = replace(train_cfg, **{name: value})
    config = replace(config, train=train_cfg)
    if args.variant:
        config = replace(config, model=replace(config.model,
                                               variant=ModelVariant(args.variant)))

    splits_dir = Path(args.splits) if args.splits else Path(config.output_dir) / "splits"
    record_path = splits_dir / "split.json"
    if not record_path.exists():
        raise DataError(f"missing split record {record_path}; run prepare first")
    record = json.loads(record_path.read_text())
    root = Path(record["root"])
    side = config.model.image_side
    train_manifest = load_manifest(splits_dir / "train.tsv", root=root)
    val_manifest = load_manifest(splits_dir / "val.tsv", root=root)
    train_images = load_labeled_images(train_manifest, side=side, split=Split.TRAIN)
    val_images = load_labeled_images(val_manifest, side=side, split=Split.VAL)

    if args.pretrained:
        model = load_pretrained(config.model, args.pretrained, seed=config.seed)
    else:
        model = build_model(config.model, seed=config.seed)
    best_path, state = fit(model, train_images, val_images, config.train,
                           Path(config.output_dir) / "train")
    print(f"best val f1_task_b {state.best_val_f1:.4f} after {state.step} steps")
    print(best_path)
    return 0


def _render_table(report: dict) -> str:
    lines = []
    lines.append(f"{'metric':<24}{'value':>10}")
    lines.append(f"{'f1_task_a':<24}{report['f1_task_a']:>10.4f}")
    lines.append(f"{'f1_task_b':<24}{report['f1_task_b']:>10.4f}")
    lines.append(f"{'n_samples':<24}{report['n_samples']:>10d}")
    lines.append("")
    lines.append(f"{'class':<24}{'f1':>10}")
    for name in CLASS_NAMES:
        lines.append(f"{name:<24}{report['per_class_f1'][name]:>10.4f}")
    if "per_mode" in report:
        lines.append("")
        lines.append(f"{'mode':<24}{'f1_task_a':>10}{'f1_task_b':>12}")
        for mode in sorted(report["per_mode"]):
            sub = report["per_mode"][mode]
            lines.append(f"{mode:<24}{sub['f1_task_a']:>10.4f}{sub['f1_task_b']:>12.4f}")
    return "\n".join(lines) + "\n"


def _render_plot(report: dict, path: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    scores = [report["per_class_f1"][name] for name in CLASS_NAMES]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(range(len(CLASS_NAMES)), scores, color="#4878a8")
    ax.set_xticks(range(len(CLASS_NAMES)))
    ax.set_xticklabels(CLASS_NAMES, rotation=30, ha="right")
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("F1")
    ax.set_title(f"per-class F1 (six-way macro {report['f1_task_b']:.4f})")
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)


def cmd_evaluate(args) -> int:
    config = _base_config(args)
    model, model_cfg = load_checkpoint(args.checkpoint)
    manifest = _resolve_manifest(args, config)
    images = load_labeled_images(manifest, side=model_cfg.image_side, split=Split.TEST)
    has_modes = any(img.mode for img in images)
    if has_modes:
        reports = per_mode_report(model, images, batch_size=args.batch_size)
        payload = reports["ALL"].to_dict()
        payload["per_mode"] = {mode: rep.to_dict()
                               for mode, rep in reports.items() if mode != "ALL"}
    else:
        payload = evaluate(model, images, batch_size=args.batch_size).to_dict()
    out = Path(config.output_dir)
    _dump_json(payload, out / "report.json")
    if args.table:
        print(_render_table(payload), end="")
    if args.plot:
        _render_plot(payload, out / "report.png")
    print(f"report written to {out / 'report.json'}")
    return 0


def cmd_perturb(args) -> int:
    config = _base_config(args)
    manifest = _resolve_manifest(args, config)
    plan = config.perturb
    if args.modes:
        plan = replace(plan, modes=tuple(m.strip().upper() for m in args.modes.split(",")))
    if args.policy:
        plan = replace(plan, per_image_policy=args.policy)
    for flag, name in (("brightness", "brightness_factor"),
                       ("noise_sigma", "noise_sigma"),
                       ("jpeg_quality", "jpeg_quality")):
        value = getattr(args, flag)
        if value is not None:
            plan = replace(plan, **{name: value})
    out = Path(config.output_dir)
    manifest_path = write_perturbed_set(manifest, plan, out,
                                        side=config.model.image_side)
    written = load_manifest(manifest_path)
    counts: dict[str, int] = {}
    for entry in written.entries:
        counts[entry.mode or "CLEAN"] = counts.get(entry.mode or "CLEAN", 0) + 1
    for mode in plan.modes:
        print(f"{mode}: {counts.get(mode, 0)}")
    print(f"{len(written.entries)} images across {len(plan.modes)} modes")
    _dump_json(plan.to_dict(), out / "plan.json")
    return 0


def cmd_report(args) -> int:
    report_path = Path(args.report)
    if not report_path.exists():
        raise DataError(f"missing report file {report_path}")
    report = json.loads(report_path.read_text())
    out = Path(args.output) if args.output else report_path.parent
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(_render_table(report))
    _render_plot(report, out / "report.png")
    print(f"wrote {out / 'report.txt'} and {out / 'report.png'}")
    return 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, help="YAML config file")
    parser.add_argument("--seed", type=int, default=None, help="root seed override")
    parser.add_argument("--output", default=None, help="output directory override")
    parser.add_argument("--tiny", action="store_true",
                        help="use the small CPU-friendly model preset")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="agid", description="AI-generated image detection pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="split a manifest into train/val/test")
    p.add_argument("manifest", nargs="?", default=None)
    p.add_argument("--root", default=None, help="image root (default: manifest directory)")
    _add_common(p)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="fine-tune a classifier on prepared splits")
    p.add_argument("--splits", default=None,
                   help="splits directory (default: OUTPUT/splits)")
    p.add_argument("--no-augment", action="store_true",
                   help="disable training-time augmentation")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--max-steps", type=int, default=None, dest="max_steps")
    p.add_argument("--batch-size", type=int, default=None, dest="batch_size")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--eval-every", type=int, default=None, dest="eval_every")
    p.add_argument("--variant", default=None,
                   choices=[v.value for v in ModelVariant])
    p.add_argument("--pretrained", default=None,
                   help="backbone checkpoint to start from (head stays fresh)")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint against a manifest")
    p.add_argument("checkpoint")
    p.add_argument("manifest", nargs="?", default=None)
    p.add_argument("--root", default=None)
    p.add_argument("--batch-size", type=int, default=64, dest="batch_size")
    p.add_argument("--table", action="store_true", help="print an aligned text table")
    p.add_argument("--plot", action="store_true", help="write a per-class F1 bar chart")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("perturb", help="materialise a perturbed copy of a manifest")
    p.add_argument("manifest", nargs="?", default=None)
    p.add_argument("--root", default=None)
    p.add_argument("--modes", default=None,
                   help=f"comma-separated subset of {','.join(MODES)}")
    p.add_argument("--policy", default=None, choices=("ALL_MODES", "ONE_RANDOM"))
    p.add_argument("--brightness", type=float, default=None)
    p.add_argument("--noise-sigma", type=float, default=None, dest="noise_sigma")
    p.add_argument("--jpeg-quality", type=int, default=None, dest="jpeg_quality")
    _add_common(p)
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("report", help="render report.txt and report.png from report.json")
    p.add_argument("report")
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


def entrypoint(argv=None) -> int:
    try:
        return main(argv)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NonFiniteLoss as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return 3
    except CheckpointMismatch as exc:
        print(f"checkpoint mismatch: {exc}", file=sys.stderr)
        return 4
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(entrypoint())
