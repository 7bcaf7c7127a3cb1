"""Flat experiment settings read from ``key = value`` text and CLI overrides.

Every field of :class:`ExperimentSpec` can be set in a config file or on the
command line; command-line values win.  The defaults describe the toy
ablation: 50 source and 30 target identities of 8x8 pixels.
"""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .haze import HazeParams
from .losses import LossWeights
from .trainer import TrainConfig


@dataclass(frozen=True)
class ExperimentSpec:
    # generated data
    ids: int = 50
    per_id: int = 8
    cams: int = 2
    height: int = 8
    width: int = 8
    id_offset: int = 0
    test_ids: int = 0
    source_ids: int = 50
    target_ids: int = 30
    queries_per_id: int = 4
    # haze
    A: float = 0.9
    beta_lo: float = 1.0
    beta_hi: float = 2.0
    depth: str = "ramp"
    workers: int = 1
    # training
    pretrain_epochs: int = 40
    adapt_epochs: int = 20
    batch_size: int = 32
    lr: float = 0.003
    milestones: tuple[float, ...] = (1 / 3, 3 / 4)
    decay: float = 0.1
    adapt_lr: float = 0.0015
    adapt_milestones: tuple[float, ...] = ()
    disc_lr: float = 0.0001
    lambda1: float = 4.0
    lambda2: float = 0.1
    epsilon: float = 0.1
    delta: float = 10.0
    hidden: tuple[int, ...] = (128, 64)
    feature_dim: int = 32
    slope: float = 0.1
    disc_hidden: int = 32
    use_isl: bool = True
    use_idkl: bool = True
    source_ce_replay: bool = False
    # seeds
    seed: int = 0
    seeds: tuple[int, ...] = (0, 1, 2)

    def __post_init__(self):
        # build the derived objects once so bad values fail at load time
        self.train_config(self.seed)
        self.haze_params(self.seed)
        if not self.seeds:
            raise ConfigError("at least one seed is required")

    def weights(self) -> LossWeights:
        return LossWeights(self.lambda1, self.lambda2, self.epsilon, self.delta)

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            pretrain_epochs=self.pretrain_epochs, adapt_epochs=self.adapt_epochs,
            batch_size=self.batch_size, lr=self.lr, milestones=self.milestones,
            decay=self.decay, adapt_lr=self.adapt_lr, adapt_milestones=self.adapt_milestones,
            disc_lr=self.disc_lr, weights=self.weights(), hidden=self.hidden,
            feature_dim=self.feature_dim, slope=self.slope, disc_hidden=self.disc_hidden,
            model_seed=seed, data_seed=seed, haze_seed=seed,
            use_isl=self.use_isl, use_idkl=self.use_idkl, source_ce_replay=self.source_ce_replay,
        )

    def haze_params(self, seed: int) -> HazeParams:
        return HazeParams(self.A, self.beta_lo, self.beta_hi, seed)

    def replace(self, **changes) -> "ExperimentSpec":
        unknown = set(changes) - field_names()
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = [f"{f.name} = {format_value(getattr(self, f.name))}" for f in fields(self)]
        return "\n".join(lines) + "\n"


_HINTS = typing.get_type_hints(ExperimentSpec)


def field_names() -> set[str]:
    return {f.name for f in fields(ExperimentSpec)}


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(format_value(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_value(key: str, text: str):
    if key not in _HINTS:
        raise ConfigError(f"unknown config key {key!r}")
    hint = _HINTS[key]
    try:
        if hint is bool:
            return _parse_bool(text)
        if hint in (int, float, str):
            return hint(text.strip())
        inner = typing.get_args(hint)[0]
        parts = [p for p in text.replace(" ", "").split(",") if p]
        return tuple(inner(p) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r} ({exc})") from None


def parse_config_text(text: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment; blank lines ignored."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = parse_value(key, value)
    return values


def load_spec(path: str | Path | None = None, overrides: dict | None = None) -> ExperimentSpec:
    values = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        values.update(parse_config_text(path.read_text()))
    values.update(overrides or {})
    return ExperimentSpec().replace(**values)
