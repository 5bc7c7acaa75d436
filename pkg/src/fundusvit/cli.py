"""Command-line surface: synth, preprocess, train, eval, infer.

Exit codes are a stable contract: 0 success, 1 usage or configuration
error, 2 missing input, 3 checkpoint/configuration incompatibility.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .checkpoint import IncompatibleCheckpointError, load_bank
from .config import ConfigError, RunConfig, effective_lines, load_config
from .dataset import (ManifestRow, load_input_image, prepare_input,
                      read_manifest, write_manifest)
from .metrics import N_FEATURES, evaluate
from .ppm import read_ppm, write_ppm
from .synth import generate_dataset
from .training import train_bank, train_task

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_MISSING_INPUT = 2
EXIT_INCOMPATIBLE = 3


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems with exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _bool_flag(value: str) -> bool:
    if value in ("true", "1", "yes"):
        return True
    if value in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {value!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fundusvit",
                     description="Glaucoma-screening pipeline: synthetic data, "
                                 "preprocessing, training, evaluation, inference.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic labeled dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--pos-fraction", type=float, default=0.5)

    p = sub.add_parser("preprocess", help="apply crop/background/resize to a manifest")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--target", type=int, default=64)
    p.add_argument("--od-crop", type=_bool_flag, default=True)
    p.add_argument("--bg-removal", type=_bool_flag, default=True)

    p = sub.add_parser("train", help="train one task or the full 11-task bank")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--od-crop", type=_bool_flag, default=None)
    p.add_argument("--bg-removal", type=_bool_flag, default=None)
    p.add_argument("--task", default=None,
                   choices=["glaucoma", *[f"feature{k}" for k in range(1, 11)], "bank"])

    p = sub.add_parser("eval", help="evaluate a checkpoint or bank on a manifest")
    p.add_argument("--checkpoint", type=Path, required=True,
                   help="a .ckpt file or a directory of <task>.ckpt files")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="report file")
    p.add_argument("--roc-out", type=Path, default=None)
    p.add_argument("--scores-out", type=Path, default=None,
                   help="dump raw per-image scores for cross-checking")
    p.add_argument("--threshold", type=float, default=0.5)

    p = sub.add_parser("infer", help="score one image")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--image", type=Path, required=True)
    p.add_argument("--detection", type=Path, default=None,
                   help="normalized bbox text file for this image")
    return parser


def cmd_synth(args) -> int:
    manifest = generate_dataset(args.out, args.n, args.seed, size=args.size,
                                pos_fraction=args.pos_fraction)
    print(f"wrote {manifest}")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    from .dataset import PreprocessOptions

    rows = read_manifest(args.manifest)
    base = args.manifest.parent
    opts = PreprocessOptions(od_crop=args.od_crop, bg_removal=args.bg_removal)
    out_dir = args.out
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    new_rows = []
    for row in rows:
        image = load_input_image(row, base)
        prepared, plan = prepare_input(image, row, base, opts, args.target)
        if plan.is_full_image and opts.od_crop:
            print(f"{row.image_id}: fallback: full image", file=sys.stderr)
        write_ppm(out_dir / "images" / f"{row.image_id}.ppm", prepared)
        new_rows.append(replace(row, image_path=f"images/{row.image_id}.ppm",
                                width=args.target, height=args.target,
                                detection_path=None))
    write_manifest(out_dir / "manifest.tsv", new_rows)
    print(f"wrote {out_dir / 'manifest.tsv'}")
    return EXIT_OK


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if args.seed is not None:
        cfg = replace(cfg, train=replace(cfg.train, seed=args.seed))
    if args.task is not None:
        cfg = replace(cfg, train=replace(cfg.train, task=args.task))
    if args.od_crop is not None:
        cfg = replace(cfg, prep=replace(cfg.prep, od_crop=args.od_crop))
    if args.bg_removal is not None:
        cfg = replace(cfg, prep=replace(cfg.prep, bg_removal=args.bg_removal))
    if args.out is not None:
        cfg = replace(cfg, out_dir=str(args.out))
    return cfg


def cmd_train(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    if cfg.manifest is None:
        raise ConfigError("paths.manifest is not set")
    if cfg.out_dir is None:
        raise ConfigError("paths.out is not set (or pass --out)")
    manifest_path = Path(cfg.manifest)
    if not manifest_path.is_absolute():
        manifest_path = args.config.parent / manifest_path
    rows = read_manifest(manifest_path)
    base = manifest_path.parent
    lines = effective_lines(cfg)
    aug = cfg.augment if cfg.augment_enabled else None
    from .preprocess import AugmentParams

    if aug is None:
        # Disabled augmentation: zero-probability flips, degenerate ranges.
        aug = AugmentParams(p_flip_h=0.0, p_flip_v=0.0, rot_lo=0.0, rot_hi=0.0,
                            sat_lo=1.0, sat_hi=1.0, bright_lo=1.0, bright_hi=1.0,
                            hue_lo=1.0, hue_hi=1.0, seed=cfg.augment.seed)
    out_dir = Path(cfg.out_dir)
    if cfg.train.task == "bank":
        bank = train_bank(cfg.model, replace(cfg.train, task="glaucoma"), aug,
                          cfg.prep, rows, base, out_dir=out_dir, config_lines=lines)
        print(f"trained {len(bank.models)} tasks, skipped {len(bank.skipped)}")
    else:
        result = train_task(cfg.model, cfg.train, aug, cfg.prep, rows, base,
                            out_dir=out_dir, config_lines=lines)
        print(f"task {result.task}: best_epoch={result.best_epoch} "
              f"best_val_metric={result.best_metric:.6f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    bank = load_bank(args.checkpoint)
    rows = read_manifest(args.manifest)
    report, g_scores, g_labels, f_scores, f_truth = evaluate(
        bank, rows, args.manifest.parent, threshold=args.threshold,
        collect_scores=True)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    report.write(args.out)
    if args.roc_out is not None:
        report.write_roc_table(args.roc_out)
    if args.scores_out is not None:
        lines = ["image_id\trg\tglaucoma_score\t"
                 + "\t".join(f"feature{k}" for k in range(1, N_FEATURES + 1))]
        for i, row in enumerate(rows):
            feats = "\t".join(f"{v:.9f}" for v in f_scores[i])
            lines.append(f"{row.image_id}\t{g_labels[i]}\t{g_scores[i]:.9f}\t{feats}")
        args.scores_out.write_text("\n".join(lines) + "\n")
    print(f"tpr_at_95={report.tpr_at_95:.6f} auc={report.auc:.6f} "
          f"nhd_mean={report.nhd_mean:.6f}")
    return EXIT_OK


def cmd_infer(args) -> int:
    bank = load_bank(args.checkpoint)
    if not args.image.is_file():
        raise FileNotFoundError(f"image not found: {args.image}")
    image = read_ppm(args.image)
    height, width = image.shape[:2]
    detection_path = None
    if args.detection is not None:
        if not args.detection.is_file():
            raise FileNotFoundError(f"detection file not found: {args.detection}")
        detection_path = str(args.detection.resolve())
    row = ManifestRow(image_id=args.image.stem, image_path=str(args.image.resolve()),
                      width=width, height=height, rg=0, features=(0,) * 10,
                      detection_path=detection_path)
    prepared, plan = prepare_input(image, row, Path("/"), bank.prep,
                                   bank.config.height)
    if bank.prep.od_crop and plan.is_full_image:
        print("fallback: full image", file=sys.stderr)
    unit = prepared.astype(np.float64) / 255.0
    print(f"glaucoma {bank.models['glaucoma'].predict(unit):.6f}")
    for k in range(1, N_FEATURES + 1):
        task = f"feature{k}"
        if task in bank.models:
            print(f"{task} {bank.models[task].predict(unit):.6f}")
    return EXIT_OK


_COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"fundusvit: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"fundusvit: missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except IncompatibleCheckpointError as exc:
        print(f"fundusvit: incompatible checkpoint: {exc}", file=sys.stderr)
        return EXIT_INCOMPATIBLE
    except ValueError as exc:
        print(f"fundusvit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
