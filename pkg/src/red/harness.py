"""Training loop, deterministic evaluation, dataset loading, heatmap export.

Serial by default so a (config, seed) pair fixes every artifact byte; the
RED_THREADS environment variable allows the per-episode rollouts to run in
a thread pool (each rollout owns its tape and random stream, derived from
(seed, episode, rollout-index), so results do not depend on scheduling).
"""

from __future__ import annotations

import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .config import RunConfig
from .dataio import read_gray_image, read_idx_images, read_idx_labels, read_labels_csv
from .errors import IngestionError
from .glimpse import encode_where, extract_glimpse, low_res_overview, snap_center
from .gru import gru_step, init_state
from .policy import (
    EpisodeConfig,
    ModelParams,
    init_model_params,
    policy_gradient,
    rollout,
    select_action,
    apply_update,
)
from .stained import LabeledImage
from .toytask import make_toy_dataset

METRICS_HEADER = "episode,mean_regret,accuracy,mean_yhat_pos,mean_yhat_neg,eps_per_sec"


@dataclass
class Metrics:
    n_images: int
    accuracy: float
    mean_regret: float
    mean_yhat_pos: float
    mean_yhat_neg: float
    seconds_per_image: float


def load_dataset(path, shuffle_seed: int | None = None) -> list[LabeledImage]:
    """Load (image, label) pairs from a directory.

    Accepts an image directory with a labels.csv, an MNIST IDX pair, or the
    synthetic scheme "toy:COUNT:SEED". Images come out as float64 in [0,1];
    order is deterministic, optionally shuffled by `shuffle_seed`.
    """
    text = str(path)
    if text.startswith("toy:"):
        parts = text.split(":")
        if len(parts) != 3:
            raise IngestionError(f"toy dataset spec must be toy:COUNT:SEED, got {text!r}")
        samples = make_toy_dataset(int(parts[1]), int(parts[2]))
        data = [
            LabeledImage(image=s.image, label=s.label, digit_index=i, seed=int(parts[2]))
            for i, s in enumerate(samples)
        ]
    else:
        p = Path(path)
        if not p.exists():
            raise IngestionError(f"dataset path {p} does not exist")
        csv_path = p / "labels.csv" if p.is_dir() else None
        if csv_path is not None and csv_path.exists():
            data = []
            for row in read_labels_csv(csv_path):
                img_path = p / row["filename"]
                if not img_path.exists():
                    raise IngestionError(f"labels.csv row names missing file {img_path}")
                data.append(
                    LabeledImage(
                        image=read_gray_image(img_path),
                        label=int(row["label"]),
                        digit_index=int(row["digit_index"]),
                        seed=int(row["seed"]),
                    )
                )
        elif p.is_dir():
            image_files = sorted(p.glob("*idx3*"))
            label_files = sorted(p.glob("*idx1*"))
            if not image_files or not label_files:
                raise IngestionError(f"{p}: found neither labels.csv nor an MNIST IDX pair")
            images = read_idx_images(image_files[0])
            labels = read_idx_labels(label_files[0])
            if len(images) != len(labels):
                raise IngestionError(f"{p}: IDX image/label counts differ")
            data = [
                LabeledImage(image=img.astype(np.float64) / 255.0, label=int(lab), digit_index=i, seed=0)
                for i, (img, lab) in enumerate(zip(images, labels))
            ]
        else:
            raise IngestionError(f"dataset path {p} is not a directory")
    if shuffle_seed is not None:
        order = np.random.default_rng(np.random.SeedSequence([shuffle_seed])).permutation(len(data))
        data = [data[i] for i in order]
    return data


def _rollout_streams(seed: int, episode: int, m: int) -> list[np.random.Generator]:
    return [np.random.default_rng(np.random.SeedSequence([seed, episode, r])) for r in range(m)]


def _episode_rollouts(image, label, params, ecfg, rngs, threads: int):
    jobs = [(image, label, params, ecfg, rng) for rng in rngs]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda j: rollout(*j, record_grad=True), jobs))
    return [rollout(*j, record_grad=True) for j in jobs]


def _fmt(v: float) -> str:
    return repr(float(v))


def train(cfg: RunConfig, out_dir, dataset: list[LabeledImage] | None = None) -> ModelParams:
    """Run the training loop and write metrics.csv plus checkpoints.

    One episode processes one image with m rollouts; the same rollouts give
    the mean-regret baseline and the gradient estimate. Parameters persist
    across episodes. Aborts (keeping the last-good checkpoint) if an update
    produces a non-finite parameter.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ecfg = cfg.episode_config()
    data = dataset if dataset is not None else load_dataset(cfg.dataset)
    if not data:
        raise IngestionError("training dataset is empty")
    bad = {d.label for d in data} - {0, 1}
    if bad:
        raise ValueError(f"training labels must be 0/1, found {sorted(bad)}")

    init_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    params = init_model_params(ecfg, init_rng)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
    order = shuffle_rng.permutation(len(data))
    threads = max(1, int(os.environ.get("RED_THREADS", "1")))
    velocity: dict[str, np.ndarray] = {}

    metrics_path = out / "metrics.csv"
    metrics_path.write_text(METRICS_HEADER + "\n")
    last_path = out / "last.bin"
    save_checkpoint(last_path, params, cfg, 0, shuffle_rng.bit_generator.state)

    window: list[tuple[float, float, int]] = []  # (episode mean regret, mean Y_hat, label)
    t_window = time.perf_counter()

    for ep in range(cfg.episodes):
        sample = data[order[ep % len(data)]]
        rngs = _rollout_streams(cfg.seed, ep, ecfg.m_rollouts)
        trajs = _episode_rollouts(sample.image, sample.label, params, ecfg, rngs, threads)
        b = sum(t.regret for t in trajs) / len(trajs)
        est = policy_gradient(
            trajs, sample.label, b, params, beta=ecfg.beta, score_chain_full=ecfg.score_chain_full
        )
        apply_update(params, est, cfg.alpha, cfg.momentum, velocity)
        if not all(np.isfinite(t.data).all() for t in params.groups().values()):
            raise RuntimeError(
                f"non-finite parameter after episode {ep + 1}; "
                f"last good checkpoint: {last_path}"
            )
        window.append((est.mean_regret, float(np.mean([t.Y_hat for t in trajs])), sample.label))

        if (ep + 1) % cfg.checkpoint_interval == 0 or ep + 1 == cfg.episodes:
            _write_metrics_row(metrics_path, ep + 1, window, t_window, cfg.log_throughput)
            save_checkpoint(last_path, params, cfg, ep + 1, shuffle_rng.bit_generator.state)
            save_checkpoint(out / f"ckpt_{ep + 1:06d}.bin", params, cfg, ep + 1,
                            shuffle_rng.bit_generator.state)
            window = []
            t_window = time.perf_counter()

    if cfg.episodes == 0:
        # initialization is the final state; last.bin already holds it
        pass
    return params


def _write_metrics_row(path, episode, window, t_start, log_throughput):
    if not window:
        return
    regrets = [w[0] for w in window]
    pos = [w[1] for w in window if w[2] == 1]
    neg = [w[1] for w in window if w[2] == 0]
    correct = sum(1 for w in window if (w[1] >= 0.5) == (w[2] == 1))
    elapsed = time.perf_counter() - t_start
    eps_per_sec = len(window) / elapsed if (log_throughput and elapsed > 0) else 0.0
    row = ",".join(
        [
            str(episode),
            _fmt(np.mean(regrets)),
            _fmt(correct / len(window)),
            _fmt(np.mean(pos) if pos else float("nan")),
            _fmt(np.mean(neg) if neg else float("nan")),
            _fmt(eps_per_sec),
        ]
    )
    with open(path, "a") as f:
        f.write(row + "\n")


def evaluate(
    params: ModelParams,
    ecfg: EpisodeConfig,
    dataset: list[LabeledImage],
    seed: int = 0,
    random_actions: bool = False,
) -> Metrics:
    """Deterministic evaluation: exploration noise off, Y_hat >= 0.5 means
    "exists" (ties positive). Never mutates parameters. `random_actions`
    replaces the policy with uniform actions (the attention ablation)."""
    if not dataset:
        raise ValueError("evaluate: empty dataset")
    correct = 0
    regrets = []
    yhat_pos, yhat_neg = [], []
    t0 = time.perf_counter()
    for idx, sample in enumerate(dataset):
        rng = np.random.default_rng(np.random.SeedSequence([seed, idx]))
        traj = rollout(
            sample.image,
            sample.label,
            params,
            ecfg,
            rng,
            record_grad=False,
            beta=0.0,
            random_actions=random_actions,
        )
        pred = 1 if traj.Y_hat >= 0.5 else 0
        correct += int(pred == sample.label)
        regrets.append(traj.regret)
        (yhat_pos if sample.label == 1 else yhat_neg).append(traj.Y_hat)
    elapsed = time.perf_counter() - t0
    return Metrics(
        n_images=len(dataset),
        accuracy=correct / len(dataset),
        mean_regret=float(np.mean(regrets)),
        mean_yhat_pos=float(np.mean(yhat_pos)) if yhat_pos else float("nan"),
        mean_yhat_neg=float(np.mean(yhat_neg)) if yhat_neg else float("nan"),
        seconds_per_image=elapsed / len(dataset),
    )


def attention_histogram(
    params: ModelParams,
    ecfg: EpisodeConfig,
    image: np.ndarray,
    steps: int,
    seed: int = 0,
    beta: float | None = None,
) -> np.ndarray:
    """Single long rollout with exploration on and aggregation disabled;
    counts attended pixel centers into an H x W histogram."""
    if steps < 1:
        raise ValueError(f"attention_histogram: steps must be >= 1, got {steps}")
    if beta is None:
        beta = ecfg.beta
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    H, W = image.shape
    n1, c = ecfg.glimpse.n1, ecfg.glimpse.c
    hist = np.zeros((H, W), dtype=np.float64)

    s = init_state(n1, ecfg.state_channels)
    thumb = low_res_overview(image, n1)
    from . import autodiff as ad

    s = gru_step(s, ad.constant(np.repeat(thumb[:, :, None], c, axis=2)), params.gru)
    for _ in range(steps):
        noise = rng.normal(0.0, beta, size=2) if beta > 0 else np.zeros(2)
        a_node, _ = select_action(s, params.w_as, noise)
        r, col = snap_center(a_node.data, H, W)
        hist[r, col] += 1.0
        raw = extract_glimpse(image, a_node.data, ecfg.glimpse)
        s = gru_step(s, encode_where(raw, a_node, params.w_xa), params.gru)
    return hist


def heatmap(
    params: ModelParams,
    ecfg: EpisodeConfig,
    image: np.ndarray,
    steps: int,
    out_path,
    seed: int = 0,
    beta: float | None = None,
) -> np.ndarray:
    """Write the normalized attention histogram as a 16-bit grayscale PNG
    the size of the input; returns the raw (unnormalized) histogram."""
    from .dataio import write_gray_png

    hist = attention_histogram(params, ecfg, image, steps, seed=seed, beta=beta)
    peak = hist.max()
    norm = hist / peak if peak > 0 else hist
    write_gray_png(out_path, norm, bits=16)
    return hist
