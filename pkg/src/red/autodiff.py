"""Dense-array arithmetic with reverse-mode differentiation.

A `Tensor` wraps a float64 numpy array. Operations executed while a `Tape`
is active are recorded, and `backward` replays the records in exact reverse
creation order to accumulate adjoints into the trainable leaves. Everything
runs on the CPU in float64; that is deliberate, the models built on top are
tiny and the finite-difference checks need the headroom.

Elementwise surface: sigmoid, tanh, hadamard (mul), add, scale (affine).
Structured ops: conv2d_same, matvec, vdot, weighted_sum, reshape, clamp,
tsum. Gradients of every op are checked against central differences in the
test suite.
"""

from __future__ import annotations

import contextvars
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "constant",
    "parameter",
    "add",
    "sub",
    "mul",
    "hadamard",
    "scale",
    "affine",
    "sigmoid",
    "tanh",
    "conv2d_same",
    "matvec",
    "vdot",
    "weighted_sum",
    "reshape",
    "clamp",
    "tsum",
    "backward",
    "finite_diff_check",
]


class Tensor:
    """A float64 array plus the bookkeeping needed for reverse mode."""

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self.tape: "Tape | None" = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of size {self.data.size}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        tag = self.name or ("param" if self.requires_grad and self.tape is None else "tensor")
        return f"Tensor({tag}, shape={self.shape})"

    # convenience operators used throughout the model code
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)


def constant(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=False, name=name)


def parameter(data, name: str | None = None) -> Tensor:
    """A trainable leaf; `backward` accumulates a gradient of its shape."""
    return Tensor(data, requires_grad=True, name=name)


_ACTIVE_TAPE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "red_active_tape", default=None
)


class Tape:
    """Ordered record of primitive ops for one rollout.

    A tape is confined to a single rollout; parallel rollouts each own one.
    Entering the context makes it the recording target; records are kept
    after exit so adjoints can be replayed later.
    """

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.records)


def _record(out: Tensor, inputs: tuple[Tensor, ...], bwd: Callable) -> Tensor:
    """Attach `out` to the active tape if any differentiable input feeds it."""
    tape = _ACTIVE_TAPE.get()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.tape = tape
        tape.records.append((out, inputs, bwd))
    return out


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    out = Tensor(a.data + b.data)
    return _record(out, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    out = Tensor(a.data - b.data)
    return _record(out, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard (elementwise) product."""
    _check_same_shape(a, b, "mul")
    out = Tensor(a.data * b.data)
    return _record(out, (a, b), lambda g, ad=a.data, bd=b.data: (g * bd, g * ad))


hadamard = mul


def affine(x: Tensor, mul_const: float, add_const: float = 0.0) -> Tensor:
    """mul_const * x + add_const with scalar constants."""
    out = Tensor(mul_const * x.data + add_const)
    return _record(out, (x,), lambda g: (mul_const * g,))


def scale(x: Tensor, factor: float) -> Tensor:
    return affine(x, factor, 0.0)


def sigmoid(x: Tensor) -> Tensor:
    # numerically stable in both tails
    xd = x.data
    y = np.where(xd >= 0, 1.0 / (1.0 + np.exp(-np.abs(xd))), np.exp(-np.abs(xd)) / (1.0 + np.exp(-np.abs(xd))))
    out = Tensor(y)
    return _record(out, (x,), lambda g, y=y: (g * y * (1.0 - y),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    out = Tensor(y)
    return _record(out, (x,), lambda g, y=y: (g * (1.0 - y * y),))


def _pad2d(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    if ph == 0 and pw == 0:
        return x
    H, W, C = x.shape
    out = np.zeros((H + 2 * ph, W + 2 * pw, C), dtype=x.dtype)
    out[ph : H + ph, pw : W + pw] = x
    return out


def _windows(xp: np.ndarray, kh: int, kw: int) -> np.ndarray:
    # (H, W, C, kh, kw) sliding view over the padded array
    H = xp.shape[0] - kh + 1
    W = xp.shape[1] - kw + 1
    s0, s1, s2 = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp, shape=(H, W, xp.shape[2], kh, kw), strides=(s0, s1, s2, s0, s1), writeable=False
    )


def _conv2d_same_raw(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    kh, kw = k.shape[0], k.shape[1]
    xp = _pad2d(x, (kh - 1) // 2, (kw - 1) // 2)
    return np.einsum("hwcij,ijcd->hwd", _windows(xp, kh, kw), k)


def conv2d_same(x: Tensor, kernel: Tensor) -> Tensor:
    """Same-size 2-D convolution, zero padded.

    x is H x W x Cin, kernel is kh x kw x Cin x Cout with odd kh, kw; the
    output keeps the spatial extents of the input.
    """
    if x.data.ndim != 3 or kernel.data.ndim != 4:
        raise ValueError(
            f"conv2d_same: expected HxWxCin input and khxkwxCinxCout kernel, "
            f"got {x.shape} and {kernel.shape}"
        )
    kh, kw, cin, _ = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"conv2d_same: kernel spatial size must be odd, got {kh}x{kw}")
    if x.shape[2] != cin:
        raise ValueError(f"conv2d_same: input has {x.shape[2]} channels, kernel expects {cin}")

    xd, kd = x.data, kernel.data
    xp = _pad2d(xd, (kh - 1) // 2, (kw - 1) // 2)
    win = _windows(xp, kh, kw)
    out = Tensor(np.einsum("hwcij,ijcd->hwd", win, kd))

    def bwd(g, win=win, kd=kd):
        # d/dx: correlate the upstream with the spatially flipped kernel,
        # swapping in/out channels; exact for odd kernels with same padding.
        kflip = kd[::-1, ::-1].transpose(0, 1, 3, 2)
        dx = _conv2d_same_raw(g, kflip)
        dk = np.einsum("hwcij,hwd->ijcd", win, g)
        return dx, dk

    return _record(out, (x, kernel), bwd)


def matvec(w: Tensor, v: Tensor) -> Tensor:
    """w @ v for a (m, n) matrix and an (n,) vector."""
    if w.data.ndim != 2 or v.data.ndim != 1 or w.shape[1] != v.shape[0]:
        raise ValueError(f"matvec: incompatible shapes {w.shape} and {v.shape}")
    out = Tensor(w.data @ v.data)
    return _record(out, (w, v), lambda g, wd=w.data, vd=v.data: (np.outer(g, vd), wd.T @ g))


def vdot(a: Tensor, b: Tensor) -> Tensor:
    """Inner product of two equal-length vectors; returns a scalar tensor."""
    if a.data.ndim != 1 or b.data.ndim != 1:
        raise ValueError(f"vdot: expected vectors, got {a.shape} and {b.shape}")
    _check_same_shape(a, b, "vdot")
    out = Tensor(a.data @ b.data)
    return _record(out, (a, b), lambda g, ad=a.data, bd=b.data: (g * bd, g * ad))


def weighted_sum(xs: Sequence[Tensor], coeffs: Sequence[float]) -> Tensor:
    """sum_i coeffs[i] * xs[i] with constant coefficients."""
    if len(xs) != len(coeffs) or not xs:
        raise ValueError("weighted_sum: need matching, non-empty tensors and coefficients")
    for x in xs[1:]:
        _check_same_shape(xs[0], x, "weighted_sum")
    acc = np.zeros_like(xs[0].data)
    for x, c in zip(xs, coeffs):
        acc += c * x.data
    out = Tensor(acc)
    cs = tuple(float(c) for c in coeffs)
    return _record(out, tuple(xs), lambda g, cs=cs: tuple(c * g for c in cs))


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor(x.data.reshape(shape))
    return _record(out, (x,), lambda g, s=x.shape: (g.reshape(s),))


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clip values to [lo, hi]; gradient passes through strictly inside."""
    out = Tensor(np.clip(x.data, lo, hi))
    inside = (x.data > lo) & (x.data < hi)
    return _record(out, (x,), lambda g, m=inside: (g * m,))


def tsum(x: Tensor) -> Tensor:
    out = Tensor(x.data.sum())
    return _record(out, (x,), lambda g, s=x.shape: (np.broadcast_to(g, s).copy(),))


def backward(tape: Tape, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Replay the tape in reverse and return gradients keyed by trainable leaf.

    `loss` must be a scalar recorded on `tape`. Leaves that never influenced
    the loss are absent from the result; callers that need dense gradients
    fill in zeros.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss.tape is not tape:
        raise ValueError("backward: loss was not recorded on this tape")

    adjoint: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaf_grads: dict[Tensor, np.ndarray] = {}
    for out, inputs, bwd in reversed(tape.records):
        g = adjoint.pop(id(out), None)
        if g is None:
            continue
        input_grads = bwd(g)
        for inp, gi in zip(inputs, input_grads):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in adjoint:
                adjoint[key] = adjoint[key] + gi
            else:
                adjoint[key] = np.array(gi, dtype=np.float64, copy=True)
            if inp.tape is None:  # trainable leaf
                leaf_grads[inp] = adjoint[key]
    return leaf_grads


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Iterable[Tensor],
    step: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f` must be deterministic (fix seeds, zero exploration noise) and return
    a scalar tensor recorded on a tape; behaviour is undefined otherwise.
    Error per coordinate is |analytic - central| / max(1e-8, |central|).
    """
    params = list(params)
    loss = f()
    if loss.tape is None:
        raise ValueError("finite_diff_check: f() must record on a tape")
    grads = backward(loss.tape, loss)

    worst = 0.0
    for p in params:
        analytic = grads.get(p)
        if analytic is None:
            analytic = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        aflat = analytic.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + step
            hi = f().item()
            flat[i] = saved - step
            lo = f().item()
            flat[i] = saved
            central = (hi - lo) / (2.0 * step)
            err = abs(aflat[i] - central) / max(1e-8, abs(central))
            worst = max(worst, err)
    return worst
