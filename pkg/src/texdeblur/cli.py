"""Command-line interface.

    texdeblur make-synthetic --out corpus
    texdeblur split-data corpus
    texdeblur train-stage1 corpus --out run
    texdeblur train-stage2 corpus --checkpoint run/stage1.npz --out run
    texdeblur infer blurry.png --checkpoint run/stage2.npz --out restored
    texdeblur eval corpus --checkpoint run/stage2.npz --out scores
    texdeblur ablate corpus --out ablations --set train.stage1_steps=20

Every subcommand takes one optional config file (--config) plus repeatable
--set key=value overrides; infer and eval read their model configuration
from the checkpoint instead.  Exit codes: 0 success, 2 config error,
3 data or checkpoint error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from .config import Config, apply_overrides, desk_config, load_config
from .data import (
    load_split,
    load_train_pairs,
    make_synthetic_corpus,
    save_split_descriptor,
    split_unpaired,
)
from .errors import CheckpointError, ConfigError, DataError, NumericalError, TexDeblurError
from .inference import evaluate, infer_file
from .training import train_stage1, train_stage2

ABLATIONS = (
    "no_dm",
    "no_tpe",
    "no_ttformer",
    "no_multi_scale",
    "no_joint_train",
    "no_wave_loss",
)


def _config(args) -> Config:
    cfg = load_config(args.config) if args.config else desk_config()
    return apply_overrides(cfg, args.overrides)


def _split_for(corpus: Path):
    descriptor = corpus / "split.json"
    if not descriptor.exists():
        raise DataError(f"no split descriptor at {descriptor}, run split-data first")
    return load_split(corpus, descriptor)


def cmd_make_synthetic(args) -> None:
    cfg = _config(args)
    info = make_synthetic_corpus(args.out, cfg, args.seed)
    print(
        f"corpus: {info['out_dir']} "
        f"({info['train_scenes']} train scenes, {info['val_scenes']} val pairs)"
    )


def cmd_split_data(args) -> None:
    cfg = _config(args)
    pairs = load_train_pairs(args.corpus)
    split = split_unpaired(
        pairs, (cfg["data.ratio_blurry"], cfg["data.ratio_sharp"]), args.seed
    )
    descriptor = args.corpus / "split.json"
    save_split_descriptor(descriptor, split)
    print(f"split: {len(split.blurry_set)} blurry / {len(split.sharp_set)} sharp -> {descriptor}")


def cmd_train_stage1(args) -> None:
    cfg = _config(args)
    result = train_stage1(cfg, _split_for(args.corpus), args.out, args.seed)
    print(
        f"stage 1 done: step {result.final['step']} "
        f"loss {result.final['loss_total']:.4f} -> {result.checkpoint}"
    )


def cmd_train_stage2(args) -> None:
    cfg = _config(args)
    result = train_stage2(cfg, _split_for(args.corpus), args.out, args.seed, args.checkpoint)
    print(
        f"stage 2 done: step {result.final['step']} "
        f"loss {result.final['loss_total']:.4f} "
        f"(prior {result.final['loss_diff']:.4f}) -> {result.checkpoint}"
    )


def cmd_infer(args) -> None:
    args.out.mkdir(parents=True, exist_ok=True)
    target = args.out / f"{args.input.stem}.restored.png"
    infer_file(args.checkpoint, args.input, target, args.seed)
    print(f"restored -> {target}")


def cmd_eval(args) -> None:
    manifest = args.corpus / "val_manifest.jsonl"
    report = evaluate(args.checkpoint, args.corpus, manifest, args.out, args.seed)
    print(
        f"psnr {report['restored']['psnr_mean']:.2f} dB "
        f"(blurry {report['blurry']['psnr_mean']:.2f} dB, "
        f"gain {report['gain']['psnr_mean']:+.2f} dB) -> {args.out / 'report.json'}"
    )


def cmd_ablate(args) -> None:
    base_cfg = _config(args)
    split = _split_for(args.corpus)
    manifest = args.corpus / "val_manifest.jsonl"
    rows = []
    for name in ("baseline",) + ABLATIONS:
        cfg = base_cfg if name == "baseline" else base_cfg.updated({f"ablation.{name}": True})
        run_dir = args.out / name
        s1 = train_stage1(cfg, split, run_dir, args.seed)
        s2 = train_stage2(cfg, split, run_dir, args.seed, s1.checkpoint)
        report = evaluate(s2.checkpoint, args.corpus, manifest, run_dir, args.seed)
        rows.append(
            {
                "ablation": name,
                "psnr_restored_mean": report["restored"]["psnr_mean"],
                "psnr_restored_median": report["restored"]["psnr_median"],
                "ssim_restored_mean": report["restored"]["ssim_mean"],
                "psnr_gain_mean": report["gain"]["psnr_mean"],
            }
        )
        print(
            f"{name:>16}: psnr {rows[-1]['psnr_restored_mean']:.2f} dB "
            f"(gain {rows[-1]['psnr_gain_mean']:+.2f} dB)"
        )
    table = args.out / "ablations.csv"
    with open(table, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    print(f"ablation table -> {table}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="texdeblur", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=False, checkpoint=False):
        p.add_argument("--config", type=Path, default=None, help="key=value config file")
        p.add_argument("--seed", type=int, default=0, help="run seed")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="config override, repeatable",
        )
        if out_required:
            p.add_argument("--out", type=Path, required=True, help="output directory")
        if checkpoint:
            p.add_argument("--checkpoint", type=Path, required=True, help="checkpoint to load")

    p = sub.add_parser("make-synthetic", help="render the synthetic corpus")
    common(p, out_required=True)
    p.set_defaults(func=cmd_make_synthetic)

    p = sub.add_parser("split-data", help="assign scenes to unpaired domains")
    p.add_argument("corpus", type=Path)
    common(p)
    p.set_defaults(func=cmd_split_data)

    p = sub.add_parser("train-stage1", help="adversarial cycle training")
    p.add_argument("corpus", type=Path)
    common(p, out_required=True)
    p.set_defaults(func=cmd_train_stage1)

    p = sub.add_parser("train-stage2", help="conditional prior sampler training")
    p.add_argument("corpus", type=Path)
    common(p, out_required=True, checkpoint=True)
    p.set_defaults(func=cmd_train_stage2)

    p = sub.add_parser("infer", help="deblur one image")
    p.add_argument("input", type=Path)
    common(p, out_required=True, checkpoint=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score the validation manifest")
    p.add_argument("corpus", type=Path)
    common(p, out_required=True, checkpoint=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and score every ablation toggle")
    p.add_argument("corpus", type=Path)
    common(p, out_required=True)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except TexDeblurError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
