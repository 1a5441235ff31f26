"""
Run configuration: model shape, training recipe and the flat key=value file
format shared by every configuration record.

Values are resolved as dataclass defaults < configuration file < flags.
"""
import os
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .Adapter import SOFTMAX_AXES
from .Errors import ConfigurationError, FormatError

LEARNING_RATES = (1e-5, 2e-5, 3e-5, 5e-5)
BATCH_SIZES = (16, 32, 64)
DROPOUTS = (0.1, 0.2, 0.3)
GRAD_CLIPS = (7.0, 10.0, 15.0)
WARMUP_FRACTION = 0.1
WEIGHT_DECAY = 1e-8

THREADS_ENV = "SCENAFUSE_THREADS"


@dataclass(frozen=True)
class ModelConfig:
    """
    Shape of the host encoder and adapter; hidden is both d and t
    """
    vocab_size : int = 64
    hidden : int = 32
    heads : int = 4
    blocks : int = 2
    max_len : int = 24
    d_prime : int = 32
    grid_size : int = 3
    adapter_heads : int = 4
    softmax_axis : str = "feature"

    def __post_init__(self):
        if min(self.vocab_size, self.hidden, self.heads, self.blocks, self.d_prime, self.grid_size, self.adapter_heads) < 1:
            raise ConfigurationError(f"model extents must be positive: {self}")
        if self.hidden % self.heads or self.hidden % self.adapter_heads:
            raise ConfigurationError(f"hidden size {self.hidden} must be divisible by {self.heads} and {self.adapter_heads} heads")
        if self.max_len < 5:
            raise ConfigurationError(f"max_len must be at least 5, got {self.max_len}")
        if self.d_prime < 4:
            raise ConfigurationError(f"d' must be at least 4, got {self.d_prime}")
        if self.softmax_axis not in SOFTMAX_AXES:
            raise ConfigurationError(f"softmax_axis must be one of {sorted(SOFTMAX_AXES)}, got {self.softmax_axis!r}")

    @property
    def k(self) -> int:
        return self.grid_size * self.grid_size


@dataclass(frozen=True)
class TrainConfig:
    """
    Optimisation recipe; outside the published grids only with unsafe set
    """
    learning_rate : float = 2e-5
    warmup_fraction : float = WARMUP_FRACTION
    weight_decay : float = WEIGHT_DECAY
    batch_size : int = 32
    dropout : float = 0.1
    grad_clip : float = 10.0
    epochs : int = 3
    seed : int = 0
    unsafe : bool = False

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigurationError(f"epochs must be >= 0 and batch_size >= 1, got {self.epochs}, {self.batch_size}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.grad_clip <= 0.0 or self.learning_rate <= 0.0:
            raise ConfigurationError("grad_clip and learning_rate must be positive")
        if not 0.0 <= self.warmup_fraction <= 1.0:
            raise ConfigurationError(f"warmup_fraction must lie in [0, 1], got {self.warmup_fraction}")
        if self.unsafe:
            return
        for name, grid in (("learning_rate", LEARNING_RATES), ("batch_size", BATCH_SIZES),
                           ("dropout", DROPOUTS), ("grad_clip", GRAD_CLIPS)):
            if getattr(self, name) not in grid:
                raise ConfigurationError(f"{name}={getattr(self, name)} is outside {grid}; set unsafe=true to override")
        if self.warmup_fraction != WARMUP_FRACTION or self.weight_decay != WEIGHT_DECAY:
            raise ConfigurationError(f"warmup_fraction and weight_decay are fixed at {WARMUP_FRACTION} and {WEIGHT_DECAY}; "
                                     "set unsafe=true to override")


# from-scratch toy models need a far larger step than fine-tuning
DESK_PRESET = dict(learning_rate=1e-3, epochs=20, unsafe=True)


def desk_train_config(**overrides) -> TrainConfig:
    return replace(TrainConfig(**DESK_PRESET), **overrides)


def _coerce(value : str, kind, key : str):
    try:
        if kind is bool:
            lowered = value.strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if kind is int:
            return int(value)
        if kind is float:
            return float(value)
    except ValueError as error:
        raise ConfigurationError(f"{key}: cannot read {value!r} as {kind.__name__}") from error
    return value.strip()


def read_config_file(path) -> dict[str, str]:
    """
    Parse a flat key=value file; '#' starts a comment, blank lines are skipped

    :param path: Configuration file
    :return: Raw string values by key, in file order
    """
    values = dict()
    for number, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"expected key=value, got {line!r}", line=number)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise FormatError("empty key", line=number)
        values[key] = value
    return values


def write_config_file(path, *records):
    """
    Write dataclass records as key=value lines (one record after another)
    """
    lines = []
    for record in records:
        lines.append(f"# {type(record).__name__}")
        lines.extend(f"{f.name}={getattr(record, f.name)}" for f in fields(record))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def apply_values(record, values : dict):
    """
    Copy of a dataclass record with string or typed values applied by field name

    Unknown keys raise ConfigurationError.
    """
    kinds = {f.name: f.type for f in fields(record)}
    unknown = sorted(set(values) - set(kinds))
    if unknown:
        raise ConfigurationError(f"unknown {type(record).__name__} keys: {', '.join(unknown)}")
    typed = {key: _coerce(value, kinds[key], key) if isinstance(value, str) else value
             for key, value in values.items()}
    return replace(record, **typed)


def partition_values(values : dict, *records) -> list[dict]:
    """
    Split one flat mapping between several dataclass records by field name

    :return: One mapping per record, in the order given
    """
    parts = [dict() for _ in records]
    for key, value in values.items():
        owners = [i for i, record in enumerate(records) if key in {f.name for f in fields(record)}]
        if not owners:
            names = ", ".join(type(r).__name__ for r in records)
            raise ConfigurationError(f"unknown configuration key {key!r} (not a field of {names})")
        for i in owners:
            parts[i][key] = value
    return parts


def resolve(defaults : list, config_path=None, flags : dict | None = None) -> list:
    """
    Apply the configuration file and then the flags on top of each default record

    :param defaults: Dataclass records holding the defaults
    :param config_path: Optional key=value file
    :param flags: Values given on the command line (None entries are ignored)
    """
    values = read_config_file(config_path) if config_path else dict()
    # one merged update per record so validation sees the final combination
    values.update({k: v for k, v in (flags or dict()).items() if v is not None})
    return [apply_values(record, part) for record, part in zip(defaults, partition_values(values, *defaults))]


def worker_count(flag : int | None = None) -> int:
    """
    Evaluation worker threads: the flag, else $SCENAFUSE_THREADS, else 1
    """
    raw = flag if flag is not None else os.environ.get(THREADS_ENV, "1")
    try:
        count = int(raw)
    except ValueError as error:
        raise ConfigurationError(f"{THREADS_ENV} must be an integer, got {raw!r}") from error
    if count < 1:
        raise ConfigurationError(f"worker count must be at least 1, got {count}")
    return count
