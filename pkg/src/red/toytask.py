"""Separable toy existence task: a bright square, present or absent.

Images are 112x112 with a blocky noise background: a 4x4 grid of 28x28
constant blocks with levels drawn uniformly from [0.35, 0.75]. Positive
images add an 8x8 square of tonal value 1.0 at the image center (rows and
columns 52..59). Because pixel values above 0.75 occur only inside the
square, the classes are perfectly separable by any glimpse that resolves
the center at full resolution.

The four center blocks overlap the square, so their levels are compensated:
the level is solved so the 28-px average-pooled cell value is still
distributed U(0.35, 0.75), identically in both classes. The n1=4 low-res
overview therefore carries zero class information, and a model that never
attends near the center (e.g. with uniformly random actions) can do no
better than the small chance of a random glimpse hitting the square.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SIZE = 112
BLOCK = 28
SQUARE = 8
SQUARE_START = (SIZE - SQUARE) // 2  # 52; rows/cols 52..59, center 55.5
LEVEL_LO = 0.35
LEVEL_HI = 0.75

# per center block: 4x4 = 16 square pixels out of 28x28 = 784
_SQ_PIX = (SQUARE // 2) ** 2
_BLK_PIX = BLOCK * BLOCK


@dataclass
class ToyImage:
    image: np.ndarray
    label: int


def make_toy_image(rng: np.random.Generator, label: int | None = None) -> ToyImage:
    """One sample; `label` forces the class, otherwise a fair coin."""
    if label is None:
        label = int(rng.random() < 0.5)
    levels = rng.uniform(LEVEL_LO, LEVEL_HI, size=(SIZE // BLOCK, SIZE // BLOCK))
    if label:
        # choose the pooled cell value first, then solve for the block level
        # that yields it once 16 px of the block are overwritten with 1.0
        for bi in (1, 2):
            for bj in (1, 2):
                v = rng.uniform(LEVEL_LO, LEVEL_HI)
                levels[bi, bj] = (v * _BLK_PIX - _SQ_PIX) / (_BLK_PIX - _SQ_PIX)
    image = np.kron(levels, np.ones((BLOCK, BLOCK)))
    if label:
        sl = slice(SQUARE_START, SQUARE_START + SQUARE)
        image[sl, sl] = 1.0
    return ToyImage(image=image, label=label)


def make_toy_dataset(n: int, seed: int) -> list[ToyImage]:
    """Balanced, seed-deterministic sample list (alternating labels)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    return [make_toy_image(rng, label=i % 2) for i in range(n)]
