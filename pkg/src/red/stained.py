"""Stained-digit synthesizer: a high-resolution existence-determination task.

Source digits are upscaled bilinearly, smoothed, and "thinned" by zeroing
everything near high-gradient pixels; dot stains of maximal tonal value are
then planted at high-gradient pixels of the thinned image. The task is to
decide whether stains exist. All pixel-unit settings rescale together with
`scale_factor` so a proportional desk-scale dataset keeps the geometry of
the full-size one.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ConfigError, SynthesisError

log = logging.getLogger(__name__)


def _scaled_int(value: float, factor: float) -> int:
    """Round to nearest, never below 1."""
    return max(1, int(np.floor(value * factor + 0.5)))


@dataclass(frozen=True)
class StainConfig:
    """Defaults are the full-scale task constants; scale_factor shrinks them
    proportionally (pixel-unit fields round to nearest >= 1).

    The gradient threshold is tonal units per pixel, so it also scales:
    bilinear upscaling by 1/scale_factor divides every gradient by the same
    factor, and an unscaled threshold would select nothing at desk scale.
    """

    target_size: int = 7168
    smooth_kernel: int = 20
    grad_threshold: float = 0.2
    erosion_radius: int = 500
    stain_count_range: tuple[int, int] = (10, 15)
    stain_radius: int = 12
    stain_probability: float = 0.5
    scale_factor: float = 1.0

    def __post_init__(self):
        if min(self.target_size, self.smooth_kernel, self.erosion_radius, self.stain_radius) < 1:
            raise ConfigError("all pixel-unit fields must be positive")
        lo, hi = self.stain_count_range
        if lo > hi or lo < 0:
            raise ConfigError(f"stain_count_range must be nondecreasing, got {self.stain_count_range}")
        if not (0.0 < self.stain_probability < 1.0):
            raise ConfigError(f"stain_probability must be in (0,1), got {self.stain_probability}")
        if self.grad_threshold <= 0 or self.scale_factor <= 0:
            raise ConfigError("grad_threshold and scale_factor must be positive")

    @property
    def scaled_size(self) -> int:
        return _scaled_int(self.target_size, self.scale_factor)

    @property
    def scaled_kernel(self) -> int:
        return _scaled_int(self.smooth_kernel, self.scale_factor)

    @property
    def scaled_erosion(self) -> int:
        return _scaled_int(self.erosion_radius, self.scale_factor)

    @property
    def scaled_stain_radius(self) -> int:
        return _scaled_int(self.stain_radius, self.scale_factor)

    @property
    def scaled_threshold(self) -> float:
        return self.grad_threshold * self.scale_factor


@dataclass
class LabeledImage:
    """A synthesized image with its existence label (1 iff stains planted)."""

    image: np.ndarray
    label: int
    digit_index: int
    seed: int
    stain_count: int = 0
    stain_centers: list[tuple[int, int]] = field(default_factory=list)


def upscale_bilinear(img: np.ndarray, size: int) -> np.ndarray:
    """Bilinear upscale to size x size (corner-aligned; identity at size==H)."""
    h, w = img.shape
    if size < max(h, w):
        raise ValueError(f"upscale_bilinear: target {size} smaller than source {h}x{w}")
    img = np.asarray(img, dtype=np.float64)
    ys = np.linspace(0.0, h - 1.0, size)
    xs = np.linspace(0.0, w - 1.0, size)
    y0 = np.minimum(ys.astype(np.int64), h - 2) if h > 1 else np.zeros(size, dtype=np.int64)
    x0 = np.minimum(xs.astype(np.int64), w - 2) if w > 1 else np.zeros(size, dtype=np.int64)
    dy = (ys - y0)[:, None]
    dx = (xs - x0)[None, :]
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    return (
        img[np.ix_(y0, x0)] * (1 - dy) * (1 - dx)
        + img[np.ix_(y0, x1)] * (1 - dy) * dx
        + img[np.ix_(y1, x0)] * dy * (1 - dx)
        + img[np.ix_(y1, x1)] * dy * dx
    )


def gaussian_kernel(ksize: int) -> np.ndarray:
    """Normalized 1-D Gaussian, sigma = ksize/4, weights on (half-)integer
    offsets symmetric about the kernel middle."""
    if ksize < 1:
        raise ValueError(f"gaussian_kernel: ksize must be >= 1, got {ksize}")
    sigma = ksize / 4.0
    offsets = np.arange(ksize) - (ksize - 1) / 2.0
    w = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    return w / w.sum()


def gaussian_smooth(img: np.ndarray, ksize: int) -> np.ndarray:
    """Separable Gaussian blur with zero padding; a ksize of 1 is a no-op."""
    if ksize == 1:
        return np.asarray(img, dtype=np.float64).copy()
    w = gaussian_kernel(ksize)
    out = ndimage.convolve1d(np.asarray(img, dtype=np.float64), w, axis=0, mode="constant", cval=0.0)
    return ndimage.convolve1d(out, w, axis=1, mode="constant", cval=0.0)


def central_gradient(img: np.ndarray) -> np.ndarray:
    """Gradient magnitude from half-difference central stencils (one-sided
    at the borders)."""
    img = np.asarray(img, dtype=np.float64)
    if img.shape[0] < 3 or img.shape[1] < 3:
        raise ValueError(f"central_gradient: image must be at least 3x3, got {img.shape}")
    gy, gx = np.gradient(img)
    return np.hypot(gx, gy)


def thin_writings(img: np.ndarray, grad_threshold: float, erosion_radius: int) -> np.ndarray:
    """Zero every pixel within `erosion_radius` (Euclidean) of a pixel whose
    gradient magnitude is at least `grad_threshold`."""
    img = np.asarray(img, dtype=np.float64)
    c = central_gradient(img) >= grad_threshold
    out = img.copy()
    if not c.any():
        return out
    dist = ndimage.distance_transform_edt(~c)
    out[dist <= erosion_radius] = 0.0
    return out


def _disk_offsets(radius: int) -> np.ndarray:
    r = int(radius)
    dy, dx = np.mgrid[-r : r + 1, -r : r + 1]
    keep = dy * dy + dx * dx <= r * r
    return np.stack([dy[keep], dx[keep]], axis=1)


def add_stains(
    img: np.ndarray, cfg: StainConfig, rng: np.random.Generator
) -> tuple[np.ndarray, int, list[tuple[int, int]]]:
    """Plant `count` ~ U(stain_count_range) stains of tonal value 1.0 at
    high-gradient pixels sampled without replacement. Raises SynthesisError
    when the high-gradient set is too small."""
    img = np.asarray(img, dtype=np.float64)
    grad = central_gradient(img)
    candidates = np.argwhere(grad >= cfg.scaled_threshold)
    lo, hi = cfg.stain_count_range
    count = int(rng.integers(lo, hi + 1))
    if len(candidates) == 0:
        raise SynthesisError("no pixel reaches the gradient threshold; cannot place stains")
    if count > len(candidates):
        raise SynthesisError(
            f"high-gradient set has {len(candidates)} pixels, need {count} distinct centers"
        )
    picks = candidates[rng.choice(len(candidates), size=count, replace=False)]
    out = img.copy()
    offsets = _disk_offsets(cfg.scaled_stain_radius)
    h, w = out.shape
    centers = []
    for cy, cx in picks:
        pts = offsets + (cy, cx)
        keep = (pts[:, 0] >= 0) & (pts[:, 0] < h) & (pts[:, 1] >= 0) & (pts[:, 1] < w)
        pts = pts[keep]
        out[pts[:, 0], pts[:, 1]] = 1.0
        centers.append((int(cy), int(cx)))
    return out, count, centers


def synthesize_image(
    digit: np.ndarray, cfg: StainConfig, rng: np.random.Generator
) -> tuple[np.ndarray, int, int, list[tuple[int, int]]]:
    """Full pipeline for one source digit (already in [0,1]).

    Returns (image, label, stain_count, stain_centers); raises
    SynthesisError when a positive was drawn but no stain can be placed.
    """
    up = upscale_bilinear(digit, cfg.scaled_size)
    smooth = gaussian_smooth(up, cfg.scaled_kernel)
    thin = thin_writings(smooth, cfg.scaled_threshold, cfg.scaled_erosion)
    if rng.random() < cfg.stain_probability:
        stained, count, centers = add_stains(thin, cfg, rng)
        label = 1 if count >= 1 else 0
        return stained, label, count, centers
    return thin, 0, 0, []


def synthesize_dataset(
    images: np.ndarray, cfg: StainConfig, n_images: int, seed: int
) -> list[LabeledImage]:
    """Synthesize `n_images` labeled images from uint8 source digits.

    Digit i uses the independent random stream derived from (seed, i), so
    images may be generated in any order or in parallel and the dataset is
    bit-identical for identical (source, cfg, seed). Source digits whose
    synthesis fails are skipped with a log entry.
    """
    images = np.asarray(images)
    if images.ndim != 3 or images.shape[0] == 0:
        raise ValueError(f"synthesize_dataset: need a (N, H, W) digit stack, got {images.shape}")
    out: list[LabeledImage] = []
    for i in range(n_images):
        digit_index = i % images.shape[0]
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        digit = images[digit_index].astype(np.float64) / 255.0
        try:
            img, label, count, centers = synthesize_image(digit, cfg, rng)
        except SynthesisError as e:
            log.warning("skipping digit %d (image %d): %s", digit_index, i, e)
            continue
        out.append(
            LabeledImage(
                image=img,
                label=label,
                digit_index=digit_index,
                seed=seed,
                stain_count=count,
                stain_centers=centers,
            )
        )
    return out
