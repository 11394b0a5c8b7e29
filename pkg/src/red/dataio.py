"""File formats: IDX (big-endian MNIST container), grayscale PNG/PGM, labels CSV."""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import IngestionError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

LABELS_CSV_FIELDS = ["filename", "label", "seed", "digit_index"]


def read_idx_images(path) -> np.ndarray:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise IngestionError(f"cannot read IDX image file {path}: {e}") from e
    if len(raw) < 16:
        raise IngestionError(f"IDX image file {path} is truncated")
    magic, n, h, w = struct.unpack(">IIII", raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise IngestionError(f"{path}: bad IDX image magic 0x{magic:08x}")
    if len(raw) != 16 + n * h * w:
        raise IngestionError(f"{path}: payload size does not match header {n}x{h}x{w}")
    return np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(n, h, w)


def read_idx_labels(path) -> np.ndarray:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise IngestionError(f"cannot read IDX label file {path}: {e}") from e
    if len(raw) < 8:
        raise IngestionError(f"IDX label file {path} is truncated")
    magic, n = struct.unpack(">II", raw[:8])
    if magic != IDX_LABELS_MAGIC:
        raise IngestionError(f"{path}: bad IDX label magic 0x{magic:08x}")
    if len(raw) != 8 + n:
        raise IngestionError(f"{path}: payload size does not match header n={n}")
    return np.frombuffer(raw, dtype=np.uint8, offset=8)


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    n, h, w = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w))
        f.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.size))
        f.write(labels.tobytes())


def write_gray_png(path, image01: np.ndarray, bits: int = 8) -> None:
    """Quantize a [0,1] array to 8- or 16-bit grayscale PNG."""
    image01 = np.clip(np.asarray(image01, dtype=np.float64), 0.0, 1.0)
    if bits == 8:
        data = np.floor(image01 * 255.0 + 0.5).astype(np.uint8)
        Image.fromarray(data, mode="L").save(path, format="PNG")
    elif bits == 16:
        data = np.floor(image01 * 65535.0 + 0.5).astype(np.uint16)
        Image.fromarray(data, mode="I;16").save(path, format="PNG")
    else:
        raise ValueError(f"write_gray_png: bits must be 8 or 16, got {bits}")


def read_gray_image(path) -> np.ndarray:
    """Load a grayscale image as float64 in [0,1] (255 or 65535 maps to 1.0)."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.mode == "I;16":
                arr = np.asarray(im, dtype=np.float64) / 65535.0
            elif im.mode == "I":
                arr = np.asarray(im, dtype=np.float64) / 65535.0
            else:
                arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    except OSError as e:
        raise IngestionError(f"cannot read image {path}: {e}") from e
    return arr


def write_labels_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=LABELS_CSV_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in LABELS_CSV_FIELDS})


def read_labels_csv(path) -> list[dict]:
    path = Path(path)
    try:
        with open(path, newline="") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames is None or list(reader.fieldnames) != LABELS_CSV_FIELDS:
                raise IngestionError(
                    f"{path}: expected columns {LABELS_CSV_FIELDS}, got {reader.fieldnames}"
                )
            return [dict(row) for row in reader]
    except OSError as e:
        raise IngestionError(f"cannot read labels CSV {path}: {e}") from e
