"""Action selection, episode rollout, and the two-term policy gradient.

An episode processes one image: the zero state first consumes the low-res
overview, then for T steps the agent picks a location (tanh readout of the
state plus Gaussian exploration noise), receives a glimpse, updates the
recurrent state, and emits a temporary prediction. The aggregated prediction
gives the regret L = (Y_hat - Y)^2 and reward r = 1 - L.

The gradient estimate has two parts:

  score term    (L - b) * grad log P(actions)   handles the non-
                differentiable crop indexing; b is a mean-regret baseline
  pathwise term 2 (Y_hat - Y) * grad Y_hat      backpropagated through the
                aggregation, prediction heads, GRU steps and where-pathway

Both are assembled on the rollout's tape and extracted in a single reverse
pass. The score function uses the unclamped Gaussian density; clamping to
[-1, 1]^2 is treated as part of the environment.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .aggregate import AggregationConfig, aggregate_nodes, k_argmax, temp_predict
from .errors import ConfigError
from .glimpse import (
    GlimpseConfig,
    PixelReadCounter,
    encode_where,
    extract_glimpse,
    low_res_overview,
    snap_center,
)
from .gru import GruParams, gru_step, init_gru_params, init_state


@dataclass
class EpisodeConfig:
    """Everything a rollout needs: glimpse geometry, aggregation, exploration."""

    glimpse: GlimpseConfig
    agg: AggregationConfig
    state_channels: int = 8
    gru_kernel: int = 3
    beta: float = 0.15
    alpha: float = 0.01
    m_rollouts: int = 15
    score_chain_full: bool = True
    random_actions: bool = False

    def __post_init__(self):
        if self.state_channels < 1 or self.gru_kernel < 1 or self.gru_kernel % 2 == 0:
            raise ConfigError(
                f"state_channels must be >= 1 and gru_kernel odd, got "
                f"{self.state_channels}, {self.gru_kernel}"
            )
        if self.m_rollouts < 1:
            raise ConfigError(f"m_rollouts must be >= 1, got {self.m_rollouts}")
        if self.beta < 0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")

    @property
    def T(self) -> int:
        return self.agg.T

    @property
    def state_size(self) -> int:
        return self.glimpse.n1 * self.glimpse.n1 * self.state_channels


@dataclass
class ModelParams:
    """All trainable weight groups."""

    w_xa: ad.Tensor  # (n1*n1*c, 2) what/where fusion
    gru: GruParams
    w_as: ad.Tensor  # (2, n1*n1*C_s) action readout
    w_ys: ad.Tensor  # (n1*n1*C_s,) prediction head

    def groups(self) -> dict[str, ad.Tensor]:
        return {
            "w_xa": self.w_xa,
            "w_zh": self.gru.w_zh,
            "w_zx": self.gru.w_zx,
            "w_rh": self.gru.w_rh,
            "w_rx": self.gru.w_rx,
            "w_sh": self.gru.w_sh,
            "w_sx": self.gru.w_sx,
            "w_as": self.w_as,
            "w_ys": self.w_ys,
        }


def init_model_params(cfg: EpisodeConfig, rng: np.random.Generator) -> ModelParams:
    """Fresh parameters: W_xa uniform in [-0.01, 0.01] (kept small so patch
    content dominates the fused observation), everything else 1/sqrt(fan-in)."""
    n1, c = cfg.glimpse.n1, cfg.glimpse.c
    fs = cfg.state_size
    w_xa = ad.parameter(rng.uniform(-0.01, 0.01, size=(n1 * n1 * c, 2)), name="w_xa")
    gru = init_gru_params(cfg.gru_kernel, c, cfg.state_channels, rng)
    r = 1.0 / np.sqrt(fs)
    w_as = ad.parameter(rng.uniform(-r, r, size=(2, fs)), name="w_as")
    w_ys = ad.parameter(rng.uniform(-r, r, size=fs), name="w_ys")
    return ModelParams(w_xa=w_xa, gru=gru, w_as=w_as, w_ys=w_ys)


@dataclass
class Trajectory:
    """Record of one episode plus the tape handles the estimator needs."""

    label: float
    actions: np.ndarray  # (T, 2) clamped
    raw_actions: np.ndarray  # (T, 2) pre-clamp samples
    mus: np.ndarray  # (T, 2) action means
    centers: list[tuple[int, int]]
    observations: list[np.ndarray]  # x_0 .. x_T
    states: list[np.ndarray]  # s_0 (post-overview) .. s_T
    yhat: np.ndarray  # (T,)
    Y_hat: float
    regret: float
    reward: float
    K: list[int]
    # gradient plumbing (None when recorded without gradients)
    tape: ad.Tape | None = None
    loss_node: ad.Tensor | None = None
    yhat_node: ad.Tensor | None = None
    logp_node: ad.Tensor | None = None
    params_ref: "ModelParams | None" = field(default=None, repr=False)


def select_action(
    s: ad.Tensor, w_as: ad.Tensor, noise: np.ndarray
) -> tuple[ad.Tensor, ad.Tensor]:
    """mu = tanh(W_as . flatten(s)); a = clamp(mu + noise). Returns (a, mu)."""
    mu = ad.tanh(ad.matvec(w_as, ad.reshape(s, (s.size,))))
    a = ad.clamp(ad.add(mu, ad.constant(np.asarray(noise, dtype=np.float64))), -1.0, 1.0)
    return a, mu


def regret(y_hat: float, y: float) -> float:
    """Squared error between the aggregated prediction and the label."""
    return (float(y_hat) - float(y)) ** 2


def log_prob_grad(a, mu, beta: float) -> np.ndarray:
    """d/d(mu) of log N(a; mu, beta^2 I): (a - mu) / beta^2."""
    if beta <= 0:
        raise ConfigError(f"log_prob_grad needs beta > 0, got {beta}")
    return (np.asarray(a, dtype=np.float64) - np.asarray(mu, dtype=np.float64)) / beta**2


def rollout(
    image: np.ndarray,
    y: float,
    params: ModelParams,
    cfg: EpisodeConfig,
    rng: np.random.Generator,
    record_grad: bool = True,
    beta: float | None = None,
    counter: PixelReadCounter | None = None,
    frozen_centers: Sequence[tuple[int, int]] | None = None,
    random_actions: bool | None = None,
) -> Trajectory:
    """Run one episode on `image` with ground truth `y`.

    `beta` overrides the exploration scale (pass 0.0 for evaluation);
    `frozen_centers` pins the crop pixels (gradient checks); `counter`
    tallies hard-attention pixel reads. With `record_grad` the trajectory
    carries a tape, the loss node, and the summed log-probability node.
    """
    if beta is None:
        beta = cfg.beta
    if random_actions is None:
        random_actions = cfg.random_actions
    H, W = image.shape
    n1, c = cfg.glimpse.n1, cfg.glimpse.c
    T = cfg.T

    tape = ad.Tape() if record_grad else None
    mus = np.zeros((T, 2))
    raws = np.zeros((T, 2))
    acts = np.zeros((T, 2))
    centers: list[tuple[int, int]] = []
    observations: list[np.ndarray] = []
    states: list[np.ndarray] = []
    yhat_nodes: list[ad.Tensor] = []
    logp_sq_terms: list[ad.Tensor] = []

    def run() -> tuple[ad.Tensor, ad.Tensor, ad.Tensor | None]:
        s = init_state(n1, cfg.state_channels)
        thumb = low_res_overview(image, n1)
        x0 = np.repeat(thumb[:, :, None], c, axis=2)
        observations.append(x0)
        s = gru_step(s, ad.constant(x0), params.gru)
        states.append(s.data)

        for t in range(1, T + 1):
            if random_actions:
                a_val = rng.uniform(-1.0, 1.0, size=2)
                a_node = ad.constant(a_val)
                mu_val = a_val
                raw = a_val
            else:
                noise = rng.normal(0.0, beta, size=2) if beta > 0 else np.zeros(2)
                a_node, mu_node = select_action(s, params.w_as, noise)
                mu_val = mu_node.data
                raw = mu_val + noise
                if record_grad and beta > 0:
                    d = ad.sub(ad.constant(raw.copy()), mu_node)
                    logp_sq_terms.append(ad.tsum(ad.mul(d, d)))
            mus[t - 1] = mu_val
            raws[t - 1] = raw
            acts[t - 1] = a_node.data
            center = (
                tuple(frozen_centers[t - 1])
                if frozen_centers is not None
                else snap_center(a_node.data, H, W)
            )
            centers.append(center)
            raw_channels = extract_glimpse(image, a_node.data, cfg.glimpse, counter, center)
            x = encode_where(raw_channels, a_node, params.w_xa)
            observations.append(x.data)
            s = gru_step(s, x, params.gru)
            states.append(s.data)
            yhat_nodes.append(temp_predict(s, params.w_ys))

        y_hat_node = aggregate_nodes(yhat_nodes, cfg.agg)
        diff = ad.affine(y_hat_node, 1.0, -float(y))
        loss = ad.mul(diff, diff)
        logp = None
        if logp_sq_terms:
            coeff = -1.0 / (2.0 * beta * beta)
            logp = ad.weighted_sum(logp_sq_terms, [coeff] * len(logp_sq_terms))
        return loss, y_hat_node, logp

    if tape is not None:
        with tape:
            loss, y_hat_node, logp = run()
    else:
        loss, y_hat_node, logp = run()

    y_hat = y_hat_node.item()
    l_t = loss.item()
    yhat_vals = np.array([node.item() for node in yhat_nodes])
    return Trajectory(
        label=float(y),
        actions=acts,
        raw_actions=raws,
        mus=mus,
        centers=centers,
        observations=observations,
        states=states,
        yhat=yhat_vals,
        Y_hat=y_hat,
        regret=l_t,
        reward=1.0 - l_t,
        K=k_argmax(yhat_vals, cfg.agg),
        tape=tape,
        loss_node=loss if tape is not None else None,
        yhat_node=y_hat_node if tape is not None else None,
        logp_node=logp if tape is not None else None,
        params_ref=params,
    )


def estimate_baseline(
    image: np.ndarray,
    y: float,
    params: ModelParams,
    cfg: EpisodeConfig,
    m: int,
    rng: np.random.Generator,
    rollout_fn: Callable[..., Trajectory] | None = None,
) -> float:
    """Mean regret over m independent rollouts of the same image.

    The result is treated as a constant (no gradient). `rollout_fn` is a
    seam for tests that substitute a stub policy.
    """
    if m < 1:
        raise ConfigError(f"estimate_baseline needs m >= 1, got {m}")
    fn = rollout_fn or rollout
    total = 0.0
    for _ in range(m):
        total += fn(image, y, params, cfg, rng, record_grad=False).regret
    return total / m


@dataclass
class GradientEstimate:
    """Per-group gradients plus scalar diagnostics."""

    grads: dict[str, np.ndarray]
    mean_regret: float
    baseline: float


def _immediate_score_grad(traj: Trajectory, beta: float) -> np.ndarray:
    """Outer-product score gradient for W_as only: the per-step partial
    ((a - mu)/beta^2 o (1 - mu^2)) s_{t-1}^T, no recurrent chaining."""
    g = np.zeros((2, traj.states[0].size))
    for t in range(1, len(traj.yhat) + 1):
        mu = traj.mus[t - 1]
        dmu = log_prob_grad(traj.raw_actions[t - 1], mu, beta) * (1.0 - mu * mu)
        g += np.outer(dmu, traj.states[t - 1].reshape(-1))
    return g


def policy_gradient(
    trajectories: Sequence[Trajectory],
    y: float,
    b: float,
    params: ModelParams,
    beta: float | None = None,
    score_chain_full: bool = True,
) -> GradientEstimate:
    """Average the two-term estimator over rollouts.

    Per rollout: (L - b) * grad log P(actions) + 2 (Y_hat - Y) * grad Y_hat.
    The pathwise term backpropagates through aggregation, heads, GRU steps
    and the where-pathway; crop indexing contributes only via the score
    term. With `score_chain_full` the log-probability gradient flows through
    the full recurrent graph; otherwise only the immediate W_as partial is
    used (ablation mode).
    """
    if not trajectories:
        raise ValueError("policy_gradient needs at least one trajectory")
    groups = params.groups()
    total = {name: np.zeros_like(t.data) for name, t in groups.items()}
    mean_regret = 0.0

    for traj in trajectories:
        if traj.tape is None or traj.loss_node is None:
            raise ValueError("trajectory was recorded without gradients")
        if traj.params_ref is not params:
            raise ValueError("trajectory was generated under different parameters")
        mean_regret += traj.regret

        if traj.logp_node is not None and score_chain_full:
            # recorded on the rollout's own tape so one reverse pass yields
            # score and pathwise terms together
            with traj.tape:
                objective = ad.add(traj.loss_node, ad.scale(traj.logp_node, traj.regret - b))
        else:
            objective = traj.loss_node
        leaf_grads = ad.backward(traj.tape, objective)
        for name, tensor in groups.items():
            g = leaf_grads.get(tensor)
            if g is not None:
                total[name] += g
        if traj.logp_node is not None and not score_chain_full:
            if beta is None:
                raise ValueError("immediate-partial score mode needs beta")
            total["w_as"] += (traj.regret - b) * _immediate_score_grad(traj, beta)

    n = len(trajectories)
    grads = {name: g / n for name, g in total.items()}
    return GradientEstimate(grads=grads, mean_regret=mean_regret / n, baseline=b)


def apply_update(
    params: ModelParams,
    estimate: GradientEstimate | dict[str, np.ndarray],
    alpha: float,
    momentum: float = 0.0,
    velocity: dict[str, np.ndarray] | None = None,
) -> ModelParams:
    """Plain gradient descent, in place: W <- W - alpha * g per group.

    Optional heavy-ball momentum (off by default). Returns `params` for
    convenience; tensors keep their identity across updates.
    """
    grads = estimate.grads if isinstance(estimate, GradientEstimate) else estimate
    groups = params.groups()
    for name, tensor in groups.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != tensor.data.shape:
            raise ValueError(f"apply_update: gradient shape {g.shape} != {name} {tensor.data.shape}")
        if momentum > 0.0:
            if velocity is None:
                raise ValueError("momentum needs a velocity dict")
            v = velocity.setdefault(name, np.zeros_like(tensor.data))
            v *= momentum
            v -= alpha * g
            tensor.data += v
        else:
            tensor.data -= alpha * g
    return params
