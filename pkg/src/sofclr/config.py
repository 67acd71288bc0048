"""Flat ``key = value`` configuration files for :class:`TrainConfig`.

One assignment per line, ``#`` starts a comment, unknown keys are rejected.
Tuples are comma separated (an empty value is the empty tuple), augmentations
use the ``kind:params`` form, booleans are ``true``/``false``.
"""

from __future__ import annotations

from dataclasses import fields
from pathlib import Path

from .data import AugmentOp, parse_augment
from .trainer import TrainConfig

__all__ = ["ConfigError", "parse_config", "load_config", "dump_config", "config_to_dict", "config_from_dict"]


class ConfigError(ValueError):
    pass


_DEFAULTS = TrainConfig()
_FIELDS = {f.name: type(getattr(_DEFAULTS, f.name)) for f in fields(TrainConfig)}


def _parse_value(key: str, text: str):
    kind = _FIELDS[key]
    text = text.strip()
    if kind is bool:
        if text.lower() not in ("true", "false"):
            raise ValueError(f"expected true or false, got {text!r}")
        return text.lower() == "true"
    if kind is tuple:
        return tuple(int(t) for t in text.split(",")) if text else ()
    if kind is AugmentOp:
        return parse_augment(text)
    return kind(text)


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_from_dict(values: dict) -> TrainConfig:
    unknown = sorted(set(values) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    try:
        parsed = {k: v if not isinstance(v, str) or _FIELDS[k] is str else _parse_value(k, v)
                  for k, v in values.items()}
        return TrainConfig(**parsed)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def config_to_dict(cfg: TrainConfig) -> dict:
    """Plain-text values, suitable for JSON and for :func:`config_from_dict`."""
    return {f.name: _format_value(getattr(cfg, f.name)) for f in fields(cfg)}


def parse_config(text: str, source: str = "<config>") -> TrainConfig:
    values = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"{source}: line {ln}: expected key = value")
        if key not in _FIELDS:
            raise ConfigError(f"{source}: line {ln}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}: line {ln}: duplicate key {key!r}")
        try:
            values[key] = _parse_value(key, value)
        except ValueError as exc:
            raise ConfigError(f"{source}: line {ln}: {key}: {exc}") from None
    return config_from_dict(values)


def load_config(path) -> TrainConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parse_config(text, str(path))


def dump_config(cfg: TrainConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in config_to_dict(cfg).items())
