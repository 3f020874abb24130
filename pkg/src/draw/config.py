"""Training configuration as plain ``key=value`` lines.

Blank lines and ``#`` comments are ignored; unknown keys are errors.
"""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

TASKS = ("mnist", "two-digit", "cluttered-class")
BINARIZE_MODES = ("threshold", "stochastic", "fixed")


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    task: str = "mnist"
    # network size (one row of the hyper-parameter table)
    glimpses: int = 64
    lstm_h: int = 256
    z: int = 100
    read_size: int = 2
    write_size: int = 5
    attention: bool = True
    # optimisation
    batch_size: int = 64
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 10.0
    epochs: int = 10
    max_steps: int = 0
    time_budget: float = 0.0
    precision: int = 32
    checkpoint_every: int = 0
    # data
    train_size: int = 0
    valid_size: int = 0
    binarize: str = "threshold"
    canvas: int = 100
    clutter: int = 8
    clutter_size: int = 8
    data_seed: int = 0

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.binarize not in BINARIZE_MODES:
            raise ConfigError(f"binarize must be one of {BINARIZE_MODES}, got {self.binarize!r}")
        if self.precision not in (32, 64):
            raise ConfigError("precision must be 32 or 64")
        for key in ("glimpses", "lstm_h", "batch_size", "read_size"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be positive")

    @property
    def dtype(self):
        import numpy as np

        return np.float32 if self.precision == 32 else np.float64


def _coerce(field_type, key, raw: str):
    try:
        if field_type in ("bool", bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if field_type in ("int", int):
            return int(raw)
        if field_type in ("float", float):
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    types = {f.name: f.type for f in fields(TrainConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(types[key], key, raw)
    return replace(base or TrainConfig(), **values)


def load_config(path) -> TrainConfig:
    return parse_config(Path(path).read_text())


def dump_config(cfg: TrainConfig) -> str:
    return "".join(f"{f.name}={getattr(cfg, f.name)}\n" for f in fields(cfg))


def to_numeric(cfg: TrainConfig) -> dict[str, float]:
    """Numeric echo of every field, for storage in a checkpoint."""
    out = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if f.name == "task":
            v = TASKS.index(v)
        elif f.name == "binarize":
            v = BINARIZE_MODES.index(v)
        out[f.name] = float(v)
    return out


def from_numeric(values: dict[str, float]) -> TrainConfig:
    kwargs = {}
    for f in fields(TrainConfig):
        if f.name not in values:
            continue
        v = values[f.name]
        if f.name == "task":
            v = TASKS[int(v)]
        elif f.name == "binarize":
            v = BINARIZE_MODES[int(v)]
        elif f.type in ("bool", bool):
            v = bool(v)
        elif f.type in ("int", int):
            v = int(v)
        kwargs[f.name] = v
    return TrainConfig(**kwargs)
