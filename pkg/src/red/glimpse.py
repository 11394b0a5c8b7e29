"""Hard-attention retina: multi-resolution patches around an attended point.

A glimpse reads c concentric square patches centered at the attended pixel,
mean-pools each down to the finest size n1, and fuses the location through
the what/where pathway (a small learned transform of the action added to the
patch stack). The number of pixels touched per glimpse is sum(n_i^2) no
matter how large the image is, which is what makes a rollout's cost
independent of image size.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError


class PixelReadCounter:
    """Counts pixels touched by hard-attention reads (window area, padding
    included, so counts compare across image sizes). The one-time low-res
    overview is not a hard-attention read and is not counted."""

    def __init__(self):
        self.count = 0

    def add(self, n: int) -> None:
        self.count += n


@dataclass
class GlimpseConfig:
    """Patch side lengths n = [n1..nc], strictly increasing, in pixels."""

    n: tuple[int, ...]

    def __post_init__(self):
        n = tuple(int(v) for v in self.n)
        if not n or n[0] < 1:
            raise ConfigError(f"glimpse sizes must start at >= 1, got {n}")
        if any(b <= a for a, b in zip(n, n[1:])):
            raise ConfigError(f"glimpse sizes must be strictly increasing, got {n}")
        n1 = n[0]
        effective = []
        for v in n:
            if v % n1 != 0:
                rounded = ((v + n1 - 1) // n1) * n1
                warnings.warn(
                    f"glimpse size {v} is not a multiple of n1={n1}; "
                    f"extracting at {rounded} instead"
                )
                v = rounded
            effective.append(v)
        self.n = tuple(effective)

    @property
    def c(self) -> int:
        return len(self.n)

    @property
    def n1(self) -> int:
        return self.n[0]

    @property
    def pixels_per_glimpse(self) -> int:
        return sum(v * v for v in self.n)


def to_pixel(a, H: int, W: int) -> tuple[float, float]:
    """Map an action in [-1,1]^2 to raster (row, col) pixel-center coordinates.

    (-1,-1) is the bottom-left pixel center, (1,1) the top-right; affine in
    between. Inputs are clamped, never rejected.
    """
    if H < 1 or W < 1:
        raise ValueError(f"to_pixel: image extents must be >= 1, got {H}x{W}")
    ax = min(1.0, max(-1.0, float(a[0])))
    ay = min(1.0, max(-1.0, float(a[1])))
    col = (ax + 1.0) / 2.0 * (W - 1)
    row = (1.0 - ay) / 2.0 * (H - 1)
    return row, col


def snap_center(a, H: int, W: int) -> tuple[int, int]:
    """Nearest-integer pixel for an action; halves round up (toward +inf)."""
    row, col = to_pixel(a, H, W)
    return int(np.floor(row + 0.5)), int(np.floor(col + 0.5))


def _crop_padded(image: np.ndarray, rc: int, cc: int, size: int) -> np.ndarray:
    """size x size window centered at (rc, cc), zero filled out of bounds.

    Even sizes anchor so the center pixel lands at index size//2. Only the
    in-bounds overlap is read from the image.
    """
    H, W = image.shape
    r0 = rc - size // 2
    c0 = cc - size // 2
    patch = np.zeros((size, size), dtype=np.float64)
    ri0, ri1 = max(r0, 0), min(r0 + size, H)
    ci0, ci1 = max(c0, 0), min(c0 + size, W)
    if ri0 < ri1 and ci0 < ci1:
        patch[ri0 - r0 : ri1 - r0, ci0 - c0 : ci1 - c0] = image[ri0:ri1, ci0:ci1]
    return patch


def extract_glimpse(
    image: np.ndarray,
    a,
    cfg: GlimpseConfig,
    counter: PixelReadCounter | None = None,
    center: tuple[int, int] | None = None,
) -> np.ndarray:
    """Raw retina channels: an n1 x n1 x c stack of mean-pooled patches.

    Channel i is the n_i x n_i square centered at the attended pixel,
    zero padded past the border and pooled down to n1 x n1. `center`
    overrides the action-derived pixel (used to freeze crop positions in
    gradient checks). The result is plain data; hard attention is not
    differentiable through the crop.
    """
    n1 = cfg.n1
    rc, cc = center if center is not None else snap_center(a, *image.shape)
    channels = np.empty((n1, n1, cfg.c), dtype=np.float64)
    for i, size in enumerate(cfg.n):
        patch = _crop_padded(image, rc, cc, size)
        f = size // n1
        channels[:, :, i] = patch.reshape(n1, f, n1, f).mean(axis=(1, 3))
        if counter is not None:
            counter.add(size * size)
    return channels


def encode_where(raw: np.ndarray, a_node: ad.Tensor, w_xa: ad.Tensor) -> ad.Tensor:
    """Fuse patch content with the attended location: x = raw + tanh(W_xa a).

    Differentiable in both the action and W_xa; `raw` enters as a constant.
    W_xa maps the 2-vector action to one offset per retina value and is kept
    small by its initialization so the patch content dominates.
    """
    n1, _, c = raw.shape
    offset = ad.reshape(ad.tanh(ad.matvec(w_xa, a_node)), (n1, n1, c))
    return ad.add(ad.constant(raw), offset)


def low_res_overview(image: np.ndarray, n1: int) -> np.ndarray:
    """Whole-image thumbnail: average pooled down to n1 x n1."""
    H, W = image.shape
    if H < n1 or W < n1:
        raise ValueError(f"low_res_overview: image {H}x{W} smaller than n1={n1}")
    out = np.empty((n1, n1), dtype=np.float64)
    rows = [(i * H) // n1 for i in range(n1 + 1)]
    cols = [(j * W) // n1 for j in range(n1 + 1)]
    for i in range(n1):
        for j in range(n1):
            out[i, j] = image[rows[i] : rows[i + 1], cols[j] : cols[j + 1]].mean()
    return out
