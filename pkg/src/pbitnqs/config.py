"""Flat ``key = value`` run configuration files.

Keys are the :class:`~pbitnqs.vmc.TrainConfig` field names; ``#`` starts a
comment.  Unknown keys are rejected.
"""
from __future__ import annotations

import dataclasses
import typing

from .vmc import TrainConfig


class ConfigError(ValueError):
    pass


PRESETS = {
    "tfim12": dict(n_spins=12, J=1.0, gamma=1.0, alpha=4, chain_strength=1.0),
}

_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}


def _convert(key, text):
    hint = typing.get_type_hints(TrainConfig)[key]
    text = text.strip()
    if key == "chimera":
        if text.lower() in ("", "auto", "none"):
            return None
        parts = text.split(",")
        if len(parts) != 3:
            raise ConfigError(f"{key}: expected M,N,L, got {text!r}")
        return tuple(int(x) for x in parts)
    if key == "endpoint":
        return text or None
    if hint is int:
        return int(text)
    if hint is float:
        return float(text)
    return text


def parse_assignments(items, source="<overrides>") -> dict:
    """Parse ``key=value`` strings; reports the source line for errors."""
    out = {}
    for lineno, raw in items:
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            out[key] = _convert(key, value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from None
    return out


def read_config_file(path) -> dict:
    with open(path) as f:
        return parse_assignments(enumerate(f, 1), str(path))


def build_config(preset=None, values=None) -> TrainConfig:
    merged = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; known: {', '.join(PRESETS)}")
        merged.update(PRESETS[preset])
    merged.update(values or {})
    try:
        return TrainConfig(**merged)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def format_config(cfg: TrainConfig) -> str:
    lines = []
    for name in _FIELDS:
        v = getattr(cfg, name)
        if name == "chimera":
            v = "auto" if v is None else ",".join(map(str, v))
        elif v is None:
            v = ""
        lines.append(f"{name} = {v}")
    return "\n".join(lines) + "\n"
