"""Flat "key = value" configuration text.

Keys are dotted (model.e_dim, train.steps), values are plain scalars or
comma-separated lists; '#' starts a comment. The canonical dump is sorted and
deterministic, and is the exact block embedded into checkpoints.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .errors import ConfigError
from .model import ModelConfig


@dataclass
class TrainSettings:
    steps: int = 2000
    batch_size: int = 32
    warm_n: int = 400
    lr_scale: float = 1.0
    synth_count: int = 32
    synth_max_len: int = 5
    eval_every: int = 0
    finetune_steps: int = 200
    finetune_lr: float = 1e-5


def parse_text(text):
    """Config text -> {dotted key: raw string value}."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"line {lineno}: empty key or value in {raw!r}")
        values[key] = value
    return values


def _coerce(name, value, target_type):
    try:
        if target_type is bool:
            if value.lower() in ("true", "1", "yes"):
                return True
            if value.lower() in ("false", "0", "no"):
                return False
            raise ValueError(value)
        if target_type is int:
            return int(value)
        if target_type is float:
            return float(value)
        if target_type is tuple:
            if value.lower() == "none":
                return ()
            return tuple(
                int(part) if part.strip().isdigit() else part.strip()
                for part in value.split(",")
            )
        return value
    except ValueError:
        raise ConfigError(f"key {name}: cannot parse {value!r} as {target_type.__name__}") from None


def _apply_section(values, prefix, cls, defaults):
    known = {f.name: f.type for f in fields(cls)}
    kwargs = dict(defaults)
    for key, raw in values.items():
        if not key.startswith(prefix + "."):
            continue
        name = key[len(prefix) + 1 :]
        if name not in known:
            raise ConfigError(f"unknown config key: {key}")
        current = getattr(cls(**defaults), name)
        target = tuple if isinstance(current, tuple) else type(current)
        kwargs[name] = _coerce(key, raw, target)
    return cls(**kwargs)


def load_config(text):
    """Text -> (ModelConfig, TrainSettings); unknown keys are errors."""
    values = parse_text(text)
    for key in values:
        section = key.split(".", 1)[0]
        if section not in ("model", "train"):
            raise ConfigError(f"unknown config key: {key}")
    model = _apply_section(values, "model", ModelConfig, {})
    train = _apply_section(values, "train", TrainSettings, {})
    model.validate()
    return model, train


def _format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value) if value else "none"
    return str(value)


def dump_config(model: ModelConfig, train: TrainSettings):
    """Canonical sorted dump; parse(dump(x)) == x."""
    lines = []
    for f in fields(ModelConfig):
        lines.append(f"model.{f.name} = {_format_value(getattr(model, f.name))}")
    for f in fields(TrainSettings):
        lines.append(f"train.{f.name} = {_format_value(getattr(train, f.name))}")
    return "\n".join(sorted(lines)) + "\n"
