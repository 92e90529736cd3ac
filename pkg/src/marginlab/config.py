"""Run configuration: a flat key = value file with command-line overrides.

The file format is one ``key = value`` per line, ``#`` starts a comment,
unknown keys are an error. Every key has a matching kebab-case CLI flag that
takes precedence over the file. The effective configuration is echoed into
the output directory so any artifact can be reproduced from its echo file.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import get_args, get_origin, get_type_hints

from .data import SyntheticSpec
from .errors import ConfigError
from .losses import MarginConfig
from .train import TrainConfig


@dataclass(frozen=True)
class RunConfig:
    # synthetic data
    num_speakers: int = 20
    utts_per_speaker: int = 50
    feature_dim: int = 20
    within_std: float = 1.0
    between_std: float = 3.0
    data_seed: int = 7
    num_target_trials: int = 200
    num_nontarget_trials: int = 1000
    trial_seed: int = 101
    # model
    hidden_dim: int = 64
    embedding_dim: int = 16
    init_seed: int = 11
    # loss
    loss: str = "am"
    m: float = 0.2
    s: float = 30.0
    floor_mode: str = "literal"
    # training
    lr: float = 0.05
    momentum: float = 0.9
    epochs: int = 30
    batch_size: int = 64
    train_seed: int = 23
    shuffle: bool = True
    # paths (empty data_dir/checkpoint/trials fall back to out_dir defaults)
    out_dir: str = "out"
    data_dir: str = ""
    checkpoint: str = ""
    trials: str = ""
    # hardness diagnostics
    easy_threshold: float = 0.99
    hard_threshold: float = 0.5
    # loss-surface probe
    probe_variants: tuple[str, ...] = ("softmax", "am", "ram")
    probe_m: tuple[float, ...] = (0.0, 0.2, 0.35)
    probe_s: tuple[float, ...] = (1.0, 30.0)
    delta_min: float = -2.0
    delta_max: float = 2.0
    delta_step: float = 0.05
    # gradient checking
    grad_eps: float = 1e-5
    # figure rendering alongside CSV outputs
    figures: bool = True


_HINTS = get_type_hints(RunConfig)
KEYS = tuple(f.name for f in dataclasses.fields(RunConfig))

# Tuned (margin, scale) presets for the two benchmark families.
PRESETS: dict[str, dict[str, object]] = {
    "voxceleb-am": {"loss": "am", "m": 0.20, "s": 30.0},
    "voxceleb-ram": {"loss": "ram", "m": 0.30, "s": 30.0},
    "cnceleb-am": {"loss": "am", "m": 0.10, "s": 30.0},
    "cnceleb-ram": {"loss": "ram", "m": 0.20, "s": 30.0},
}


def parse_value(key: str, text: str):
    """Coerce the textual value of ``key`` to its declared type."""
    if key not in _HINTS:
        raise ConfigError(f"unknown configuration key {key!r}")
    hint = _HINTS[key]
    text = text.strip()
    try:
        if hint is bool:
            lowered = text.lower()
            if lowered in ("true", "1", "yes"):
                return True
            if lowered in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
        if hint is str:
            return text
        if get_origin(hint) is tuple:
            item = get_args(hint)[0]
            parts = [p.strip() for p in text.split(",") if p.strip()]
            return tuple(item(p) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {exc}") from exc
    raise ConfigError(f"unsupported type for key {key!r}")  # pragma: no cover


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def load_config_file(path) -> dict[str, object]:
    """Parse a ``key = value`` file into typed values."""
    values: dict[str, object] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}: line {lineno}: expected 'key = value', got {raw.strip()!r}")
            key, _, text = line.partition("=")
            key = key.strip()
            try:
                values[key] = parse_value(key, text)
            except ConfigError as exc:
                raise ConfigError(f"{path}: line {lineno}: {exc}") from exc
    return values


def build_config(file_values: dict[str, object] | None = None,
                 overrides: dict[str, object] | None = None,
                 preset: str | None = None) -> RunConfig:
    """Layer defaults, preset, config file and flag overrides, in that order."""
    merged: dict[str, object] = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(
                f"unknown preset {preset!r}; available: {', '.join(sorted(PRESETS))}"
            )
        merged.update(PRESETS[preset])
    merged.update(file_values or {})
    merged.update(overrides or {})
    for key in merged:
        if key not in KEYS:
            raise ConfigError(f"unknown configuration key {key!r}")
    return RunConfig(**merged)


def write_effective_config(cfg: RunConfig, path) -> None:
    """Echo every key so the run can be reproduced from this file alone."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key in KEYS:
            fh.write(f"{key} = {format_value(getattr(cfg, key))}\n")


def synthetic_spec(cfg: RunConfig) -> SyntheticSpec:
    return SyntheticSpec(
        num_speakers=cfg.num_speakers,
        utts_per_speaker=cfg.utts_per_speaker,
        d_in=cfg.feature_dim,
        within_std=cfg.within_std,
        between_std=cfg.between_std,
        seed=cfg.data_seed,
    )


def margin_config(cfg: RunConfig) -> MarginConfig:
    return MarginConfig(variant=cfg.loss, m=cfg.m, s=cfg.s, floor_mode=cfg.floor_mode)


def train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(
        loss=margin_config(cfg),
        lr=cfg.lr,
        momentum=cfg.momentum,
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        seed=cfg.train_seed,
        shuffle=cfg.shuffle,
    )
