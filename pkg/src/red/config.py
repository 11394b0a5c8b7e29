"""Flat `key = value` run configuration.

Every key is typed and listed in `RunConfig`; unknown keys are errors. The
format round-trips losslessly (floats are written with repr, which Python
parses back to the identical double).
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .aggregate import AggregationConfig
from .errors import ConfigError
from .glimpse import GlimpseConfig
from .policy import EpisodeConfig


@dataclass
class RunConfig:
    # run
    seed: int = 0
    episodes: int = 1000
    checkpoint_interval: int = 100
    dataset: str = ""
    eval_dataset: str = ""
    log_throughput: bool = True
    # glimpse / state
    glimpse_sizes: tuple[int, ...] = (18, 36, 54)
    state_channels: int = 8
    gru_kernel: int = 3
    # aggregation
    horizon: int = 350
    agg_k: int = 25
    agg_gamma: float = 0.95
    agg_t0: int = 10
    # policy
    beta: float = 0.15
    alpha: float = 0.01
    m_rollouts: int = 15
    momentum: float = 0.0
    score_chain_full: bool = True
    random_actions: bool = False

    def episode_config(self) -> EpisodeConfig:
        return EpisodeConfig(
            glimpse=GlimpseConfig(self.glimpse_sizes),
            agg=AggregationConfig(k=self.agg_k, gamma=self.agg_gamma, t0=self.agg_t0, T=self.horizon),
            state_channels=self.state_channels,
            gru_kernel=self.gru_kernel,
            beta=self.beta,
            alpha=self.alpha,
            m_rollouts=self.m_rollouts,
            score_chain_full=self.score_chain_full,
            random_actions=self.random_actions,
        )


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(text: str, ftype: type, key: str):
    text = text.strip()
    if ftype is bool:
        if text not in ("true", "false"):
            raise ConfigError(f"{key}: expected true/false, got {text!r}")
        return text == "true"
    if ftype is int:
        return int(text)
    if ftype is float:
        return float(text)
    if ftype is str:
        return text
    # tuple[int, ...]
    if text == "":
        raise ConfigError(f"{key}: empty list")
    return tuple(int(v) for v in text.split(","))


def format_config(cfg: RunConfig) -> str:
    lines = [f"{f.name} = {_format_value(getattr(cfg, f.name))}" for f in fields(cfg)]
    return "\n".join(lines) + "\n"


def parse_config(text: str) -> RunConfig:
    ftypes = {}
    for f in fields(RunConfig):
        if f.name in ("glimpse_sizes",):
            ftypes[f.name] = tuple
        else:
            ftypes[f.name] = type(getattr(RunConfig(), f.name))
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in ftypes:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(val, ftypes[key], key)
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(format_config(cfg))
