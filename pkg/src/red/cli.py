"""Command-line entry point: synth, train, eval, heatmap."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .config import load_config
from .dataio import read_gray_image, read_idx_images, write_gray_png, write_labels_csv
from .errors import ConfigError, IngestionError, SynthesisError
from .harness import evaluate, heatmap, load_dataset, train
from .stained import StainConfig, synthesize_dataset


def _find_idx_images(path: Path) -> Path:
    if path.is_file():
        return path
    candidates = sorted(path.glob("*idx3*"))
    if not candidates:
        raise IngestionError(f"{path}: no IDX image file (*idx3*) found")
    return candidates[0]


def _cmd_synth(args) -> int:
    cfg = StainConfig(
        scale_factor=args.scale,
        stain_probability=args.prob,
    )
    images = read_idx_images(_find_idx_images(Path(args.mnist)))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = synthesize_dataset(images, cfg, args.count, args.seed)
    rows = []
    for i, item in enumerate(dataset):
        name = f"img_{i:05d}.png"
        write_gray_png(out / name, item.image, bits=8)
        rows.append(
            {"filename": name, "label": item.label, "seed": item.seed, "digit_index": item.digit_index}
        )
    write_labels_csv(out / "labels.csv", rows)
    positives = sum(r["label"] for r in rows)
    print(f"wrote {len(rows)} images ({positives} positive) to {out}")
    return 0


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    train(cfg, args.out)
    print(f"trained {cfg.episodes} episodes; checkpoints and metrics.csv in {args.out}")
    return 0


def _cmd_eval(args) -> int:
    params, run_cfg, episode, _ = load_checkpoint(args.ckpt)
    data = load_dataset(args.data)
    metrics = evaluate(
        params,
        run_cfg.episode_config(),
        data,
        seed=args.seed,
        random_actions=args.random_actions,
    )
    print(f"images: {metrics.n_images}")
    print(f"accuracy: {metrics.accuracy:.4f}")
    print(f"mean_regret: {metrics.mean_regret:.6f}")
    print(f"mean_yhat_pos: {metrics.mean_yhat_pos:.6f}")
    print(f"mean_yhat_neg: {metrics.mean_yhat_neg:.6f}")
    print(f"seconds_per_image: {metrics.seconds_per_image:.6f}")
    return 0


def _cmd_heatmap(args) -> int:
    params, run_cfg, _, _ = load_checkpoint(args.ckpt)
    image = read_gray_image(args.image)
    hist = heatmap(
        params,
        run_cfg.episode_config(),
        image,
        args.steps,
        args.out,
        seed=args.seed,
        beta=args.beta,
    )
    print(f"wrote heatmap ({int(hist.sum())} attended steps) to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="red",
        description="Recurrent existence determination: synthesize data, train, "
        "evaluate, and export attention heatmaps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize a stained-digit dataset from MNIST IDX files")
    p.add_argument("--mnist", required=True, help="IDX image file or directory containing one")
    p.add_argument("--out", required=True, help="output directory (PNGs + labels.csv)")
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--scale", type=float, default=0.0625, help="scale factor (1.0 = full size)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prob", type=float, default=0.5, help="fraction of images given stains")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train from a run config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="checkpoint/metrics directory")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="deterministic evaluation of a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="dataset directory or toy:COUNT:SEED")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--random-actions", action="store_true", help="attention ablation")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("heatmap", help="attention-distribution heatmap for one image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--beta", type=float, default=None, help="override exploration scale")
    p.set_defaults(func=_cmd_heatmap)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, IngestionError, SynthesisError, ValueError, RuntimeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
