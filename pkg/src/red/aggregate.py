"""Per-step existence probabilities and k-maximum prediction aggregation.

Each step emits a temporary probability y_t from the recurrent state; the
final prediction is the time-discount-weighted average of the k largest
temporary predictions at or after a warm-up step t0:

    K = k-argmax over t in [t0, T] of y_t        (ties: smaller t wins)
    Y_hat = sum_{t in K} (1 - gamma^t) y_t / Z,  Z = sum_{t in K} (1 - gamma^t)

The weights grow with t, so later confident steps count more. Under
differentiation K is treated as a constant of the forward pass (the
max-pooling convention; ties have measure zero).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .errors import ConfigError


@dataclass(frozen=True)
class AggregationConfig:
    k: int
    gamma: float
    t0: int
    T: int

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"aggregation k must be >= 1, got {self.k}")
        if not (0.0 <= self.gamma < 1.0):
            raise ConfigError(f"aggregation gamma must be in [0, 1), got {self.gamma}")
        if self.t0 < 1:
            raise ConfigError(f"aggregation t0 must be >= 1, got {self.t0}")
        if self.T - self.t0 + 1 < self.k:
            raise ConfigError(
                f"aggregation needs T - t0 + 1 >= k, got T={self.T}, t0={self.t0}, k={self.k}"
            )

    def weight(self, t: int) -> float:
        return 1.0 - self.gamma**t


def temp_predict(s: ad.Tensor, w_ys: ad.Tensor) -> ad.Tensor:
    """y = (1 + tanh(W_ys . flatten(s))) / 2, a scalar strictly inside (0,1)."""
    flat = ad.reshape(s, (s.size,))
    if w_ys.shape != flat.shape:
        raise ValueError(f"temp_predict: head {w_ys.shape} does not match state size {flat.shape}")
    return ad.affine(ad.tanh(ad.vdot(w_ys, flat)), 0.5, 0.5)


def k_argmax(yhat_seq: Sequence[float], cfg: AggregationConfig) -> list[int]:
    """Indices (1-based steps) of the k largest y_t for t in [t0, T]."""
    if len(yhat_seq) != cfg.T:
        raise ValueError(f"expected {cfg.T} temporary predictions, got {len(yhat_seq)}")
    candidates = range(cfg.t0, cfg.T + 1)
    ranked = sorted(candidates, key=lambda t: (-float(yhat_seq[t - 1]), t))
    return sorted(ranked[: cfg.k])


def k_max_aggregate(yhat_seq: Sequence[float], cfg: AggregationConfig) -> float:
    """Final prediction from raw temporary-prediction values."""
    K = k_argmax(yhat_seq, cfg)
    weights = [cfg.weight(t) for t in K]
    z = sum(weights)
    return sum(w * float(yhat_seq[t - 1]) for w, t in zip(weights, K)) / z


def aggregate_gradient(
    yhat_seq: Sequence[float], cfg: AggregationConfig, upstream: float = 1.0
) -> np.ndarray:
    """d(Y_hat)/d(y_t) scaled by `upstream`: (1 - gamma^t)/Z inside K, else 0."""
    K = k_argmax(yhat_seq, cfg)
    z = sum(cfg.weight(t) for t in K)
    grads = np.zeros(cfg.T, dtype=np.float64)
    for t in K:
        grads[t - 1] = upstream * cfg.weight(t) / z
    return grads


def aggregate_nodes(yhat_nodes: Sequence[ad.Tensor], cfg: AggregationConfig) -> ad.Tensor:
    """Tape-level aggregation over scalar prediction nodes.

    Selection happens on values; the combination is recorded so gradients
    flow back into the selected steps with weights (1 - gamma^t)/Z.
    """
    values = [y.item() for y in yhat_nodes]
    K = k_argmax(values, cfg)
    weights = [cfg.weight(t) for t in K]
    z = sum(weights)
    return ad.weighted_sum([yhat_nodes[t - 1] for t in K], [w / z for w in weights])
