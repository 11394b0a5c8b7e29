"""Convolutional gated recurrent unit.

State and input transforms are same-size convolutions so the state keeps
its 2-D spatial layout (n1 x n1 x C_s). No bias terms anywhere: the update
equations are

    z = sigmoid(W_zh * s + W_zx * x)        update gate
    v = sigmoid(W_rh * s + W_rx * x)        reset gate
    s~ = tanh(W_sh * (v o s) + W_sx * x)    candidate
    s' = (1 - z) o s + z o s~

with * convolution and o the Hadamard product. From a zero initial state
every value stays strictly inside (-1, 1): each update is a convex mix of
the previous state and a tanh output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


@dataclass
class GruParams:
    """Six convolution kernels, k x k spatial, no biases.

    State-facing kernels (w_zh, w_rh, w_sh) map C_s -> C_s channels;
    input-facing kernels (w_zx, w_rx, w_sx) map c -> C_s.
    """

    w_zh: ad.Tensor
    w_zx: ad.Tensor
    w_rh: ad.Tensor
    w_rx: ad.Tensor
    w_sh: ad.Tensor
    w_sx: ad.Tensor

    def __post_init__(self):
        ks = {t.shape[:2] for t in self.kernels()}
        if len(ks) != 1:
            raise ValueError(f"GRU kernels must share spatial size, got {sorted(ks)}")
        k = next(iter(ks))[0]
        if k % 2 == 0:
            raise ValueError(f"GRU kernel spatial size must be odd, got {k}")
        couts = {t.shape[3] for t in self.kernels()}
        if len(couts) != 1:
            raise ValueError("GRU kernels must produce a single state channel count")
        for name in ("w_zh", "w_rh", "w_sh"):
            t = getattr(self, name)
            if t.shape[2] != t.shape[3]:
                raise ValueError(f"{name} must map state channels to state channels, got {t.shape}")

    def kernels(self) -> tuple[ad.Tensor, ...]:
        return (self.w_zh, self.w_zx, self.w_rh, self.w_rx, self.w_sh, self.w_sx)

    @property
    def state_channels(self) -> int:
        return self.w_zh.shape[3]

    @property
    def input_channels(self) -> int:
        return self.w_zx.shape[2]


def init_gru_params(k: int, c_in: int, c_state: int, rng: np.random.Generator) -> GruParams:
    """Uniform init in [-r, r] with r = 1/sqrt(fan-in) per kernel."""

    def kernel(cin: int, name: str) -> ad.Tensor:
        r = 1.0 / np.sqrt(k * k * cin)
        return ad.parameter(rng.uniform(-r, r, size=(k, k, cin, c_state)), name=name)

    return GruParams(
        w_zh=kernel(c_state, "w_zh"),
        w_zx=kernel(c_in, "w_zx"),
        w_rh=kernel(c_state, "w_rh"),
        w_rx=kernel(c_in, "w_rx"),
        w_sh=kernel(c_state, "w_sh"),
        w_sx=kernel(c_in, "w_sx"),
    )


def init_state(n1: int, c_state: int) -> ad.Tensor:
    """All-zero recurrent state, n1 x n1 x C_s."""
    return ad.constant(np.zeros((n1, n1, c_state)))


def gru_step(
    s_prev: ad.Tensor,
    x: ad.Tensor,
    p: GruParams,
    _gate_override: dict[str, float] | None = None,
) -> ad.Tensor:
    """One state update. `_gate_override` is a test seam that pins the update
    (`z`) or reset (`v`) gate to a constant value."""
    if s_prev.shape[2] != p.state_channels or x.shape[2] != p.input_channels:
        raise ValueError(
            f"gru_step: state {s_prev.shape} / input {x.shape} do not match "
            f"kernels ({p.state_channels} state, {p.input_channels} input channels)"
        )

    z = ad.sigmoid(ad.add(ad.conv2d_same(s_prev, p.w_zh), ad.conv2d_same(x, p.w_zx)))
    v = ad.sigmoid(ad.add(ad.conv2d_same(s_prev, p.w_rh), ad.conv2d_same(x, p.w_rx)))
    if _gate_override is not None:
        if "z" in _gate_override:
            z = ad.constant(np.full(z.shape, float(_gate_override["z"])))
        if "v" in _gate_override:
            v = ad.constant(np.full(v.shape, float(_gate_override["v"])))
    cand = ad.tanh(ad.add(ad.conv2d_same(ad.mul(v, s_prev), p.w_sh), ad.conv2d_same(x, p.w_sx)))
    return ad.add(ad.mul(ad.affine(z, -1.0, 1.0), s_prev), ad.mul(z, cand))
