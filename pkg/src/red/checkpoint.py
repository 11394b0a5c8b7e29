"""Binary checkpoints: little-endian, magic REDCKPT1, exact round-trips.

Layout: magic, format version, length-prefixed config text, episode
counter, length-prefixed canonical-JSON RNG state, then per parameter group
(name, shape, raw float64 values). save(load(x)) == x byte for byte.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .config import RunConfig, format_config, parse_config
from .gru import GruParams
from .policy import ModelParams

MAGIC = b"REDCKPT1"
VERSION = 1

_GROUP_ORDER = ["w_xa", "w_zh", "w_zx", "w_rh", "w_rx", "w_sh", "w_sx", "w_as", "w_ys"]


def save_checkpoint(path, params: ModelParams, cfg: RunConfig, episode: int, rng_state: dict) -> None:
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    cfg_bytes = format_config(cfg).encode("utf-8")
    chunks.append(struct.pack("<Q", len(cfg_bytes)))
    chunks.append(cfg_bytes)
    chunks.append(struct.pack("<Q", episode))
    state_bytes = json.dumps(rng_state, sort_keys=True, separators=(",", ":")).encode("utf-8")
    chunks.append(struct.pack("<Q", len(state_bytes)))
    chunks.append(state_bytes)
    groups = params.groups()
    chunks.append(struct.pack("<I", len(_GROUP_ORDER)))
    for name in _GROUP_ORDER:
        data = np.ascontiguousarray(groups[name].data, dtype="<f8")
        name_b = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(name_b)))
        chunks.append(name_b)
        chunks.append(struct.pack("<I", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}q", *data.shape))
        chunks.append(data.tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise ValueError(f"checkpoint {self.path} is truncated")
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> tuple[ModelParams, RunConfig, int, dict]:
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(len(MAGIC)) != MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (cfg_len,) = r.unpack("<Q")
    cfg = parse_config(r.take(cfg_len).decode("utf-8"))
    (episode,) = r.unpack("<Q")
    (state_len,) = r.unpack("<Q")
    rng_state = json.loads(r.take(state_len).decode("utf-8"))
    (ngroups,) = r.unpack("<I")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(ngroups):
        (name_len,) = r.unpack("<I")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<I")
        shape = r.unpack(f"<{ndim}q")
        count = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(r.take(count * 8), dtype="<f8").reshape(shape).copy()
        arrays[name] = data
    missing = [n for n in _GROUP_ORDER if n not in arrays]
    if missing:
        raise ValueError(f"{path}: missing parameter groups {missing}")

    expected = _expected_shapes(cfg)
    for name, shape in expected.items():
        if arrays[name].shape != shape:
            raise ValueError(
                f"{path}: group {name} has shape {arrays[name].shape}, "
                f"config expects {shape}"
            )
    params = ModelParams(
        w_xa=ad.parameter(arrays["w_xa"], name="w_xa"),
        gru=GruParams(
            w_zh=ad.parameter(arrays["w_zh"], name="w_zh"),
            w_zx=ad.parameter(arrays["w_zx"], name="w_zx"),
            w_rh=ad.parameter(arrays["w_rh"], name="w_rh"),
            w_rx=ad.parameter(arrays["w_rx"], name="w_rx"),
            w_sh=ad.parameter(arrays["w_sh"], name="w_sh"),
            w_sx=ad.parameter(arrays["w_sx"], name="w_sx"),
        ),
        w_as=ad.parameter(arrays["w_as"], name="w_as"),
        w_ys=ad.parameter(arrays["w_ys"], name="w_ys"),
    )
    return params, cfg, episode, rng_state


def _expected_shapes(cfg: RunConfig) -> dict[str, tuple[int, ...]]:
    ecfg = cfg.episode_config()
    n1, c, cs, k = ecfg.glimpse.n1, ecfg.glimpse.c, ecfg.state_channels, ecfg.gru_kernel
    fs = ecfg.state_size
    return {
        "w_xa": (n1 * n1 * c, 2),
        "w_zh": (k, k, cs, cs),
        "w_zx": (k, k, c, cs),
        "w_rh": (k, k, cs, cs),
        "w_rx": (k, k, c, cs),
        "w_sh": (k, k, cs, cs),
        "w_sx": (k, k, c, cs),
        "w_as": (2, fs),
        "w_ys": (fs,),
    }
