"""Subcommands: train-seg, train-reg, export."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import data


def _cmd_train_seg(args: argparse.Namespace) -> int:
    from .segmenter import save_segmenter, train_segmenter

    entries = data.load_manifest(args.manifest, args.split)
    if args.limit:
        entries = entries[: args.limit]
    model, history = train_segmenter(
        entries,
        epochs_per_stage=args.epochs_per_stage,
        batch_size=args.batch_scenes,
        from_scratch=args.from_scratch,
        seed=args.seed,
    )
    save_segmenter(args.out, model, history, args.from_scratch)
    print(args.out)
    return 0


def _cmd_train_reg(args: argparse.Namespace) -> int:
    from .regressor import save_checkpoint, train_regressor

    train_entries = data.load_manifest(args.manifest, args.split)
    if args.limit:
        train_entries = train_entries[: args.limit]
    train_set = data.CropDataset(train_entries, mask_dir=args.masks_dir)
    val_set = None
    if args.val_split:
        val_entries = data.load_manifest(args.manifest, args.val_split)
        if args.val_limit:
            val_entries = val_entries[: args.val_limit]
        val_set = data.CropDataset(val_entries)
    model, history = train_regressor(
        train_set, val_set, epochs=args.epochs, lr=args.lr, seed=args.seed
    )
    save_checkpoint(args.out, model, history)
    print(args.out)
    return 0


def _cmd_export(args: argparse.Namespace) -> int:
    from .export import export_predictions
    from .regressor import load_checkpoint
    from .segmenter import load_segmenter

    entries = data.load_manifest(args.manifest, args.split)
    if args.limit:
        entries = entries[: args.limit]
    segmenter = None
    if not args.oracle_masks:
        if not args.segmenter:
            print("error: pass --segmenter or --oracle-masks",
                  file=sys.stderr)
            return 2
        segmenter = load_segmenter(args.segmenter)
    regressor = load_checkpoint(args.regressor)
    export_predictions(
        segmenter, regressor, entries, args.out,
        oracle_masks=args.oracle_masks, score_min=args.score_min,
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sqnn",
        description="Neural segmentation and parameter regression for "
                    "superquadric range-image datasets.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    seg = sub.add_parser("train-seg", help="two-stage Mask R-CNN fine-tune")
    seg.add_argument("--manifest", type=Path, required=True)
    seg.add_argument("--split", default="train")
    seg.add_argument("--limit", type=int, default=0,
                     help="cap the number of scenes (0 = all)")
    seg.add_argument("--epochs-per-stage", type=int, default=2)
    seg.add_argument("--batch-scenes", type=int, default=2)
    seg.add_argument("--from-scratch", action="store_true",
                     help="random ResNet-18 backbone instead of a "
                          "pretrained one (for offline environments)")
    seg.add_argument("--seed", type=int, default=0)
    seg.add_argument("--out", type=Path, required=True)
    seg.set_defaults(func=_cmd_train_seg)

    reg = sub.add_parser("train-reg", help="train the parameter regressor")
    reg.add_argument("--manifest", type=Path, required=True)
    reg.add_argument("--split", default="train")
    reg.add_argument("--val-split", default="val")
    reg.add_argument("--limit", type=int, default=0)
    reg.add_argument("--val-limit", type=int, default=0)
    reg.add_argument("--masks-dir", type=Path,
                     help="train on externally produced masks instead of "
                          "the ground truth (IoU > 0.5 filter applies)")
    reg.add_argument("--epochs", type=int, default=10)
    reg.add_argument("--lr", type=float, default=1e-3)
    reg.add_argument("--seed", type=int, default=0)
    reg.add_argument("--out", type=Path, required=True)
    reg.set_defaults(func=_cmd_train_reg)

    exp = sub.add_parser("export", help="write predictions for evaluation")
    exp.add_argument("--manifest", type=Path, required=True)
    exp.add_argument("--split", default="test")
    exp.add_argument("--limit", type=int, default=0)
    exp.add_argument("--segmenter", type=Path)
    exp.add_argument("--regressor", type=Path, required=True)
    exp.add_argument("--oracle-masks", action="store_true",
                     help="use ground-truth masks instead of the segmenter")
    exp.add_argument("--score-min", type=float, default=0.5)
    exp.add_argument("--out", type=Path, required=True)
    exp.set_defaults(func=_cmd_export)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
