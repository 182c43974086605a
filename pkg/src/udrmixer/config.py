"""Flat ``key=value`` run configuration covering model, training and rain settings.

Keys are namespaced: ``model.<field>``, ``train.<field>`` and
``rain.<field>``.  Blank lines and lines starting with ``#`` are ignored.
Ranges are written as ``low,high``; the optional ``model.sfrl_size`` takes
``none``; booleans are ``true``/``false``.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .model import ConfigError, ModelConfig
from .rainsynth import RainConfig
from .train import TrainConfig

SECTIONS = {"model": ModelConfig, "train": TrainConfig, "rain": RainConfig}


def _field_types(cls) -> dict[str, type]:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)}


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(key: str, text: str, tp):
    text = text.strip()
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    try:
        if origin is typing.Union or (origin is not None and type(None) in args):
            if text.lower() == "none":
                return None
            inner = next(a for a in args if a is not type(None))
            return _parse(key, text, inner)
        if origin is tuple:
            parts = [p for p in text.split(",")]
            if len(parts) != len(args):
                raise ValueError(f"expected {len(args)} comma-separated values")
            return tuple(_parse(key, p, a) for p, a in zip(parts, args))
        if tp is bool:
            low = text.lower()
            if low not in ("true", "false"):
                raise ValueError("expected true or false")
            return low == "true"
        if tp is int:
            return int(text)
        if tp is float:
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r} ({exc})") from exc
    raise ConfigError(f"unsupported type for {key}")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    rain: RainConfig = field(default_factory=RainConfig)

    @staticmethod
    def known_keys() -> list[str]:
        return [f"{s}.{k}" for s, cls in SECTIONS.items() for k in _field_types(cls)]

    def to_pairs(self) -> list[tuple[str, str]]:
        out = []
        for section in SECTIONS:
            obj = getattr(self, section)
            for name in _field_types(type(obj)):
                out.append((f"{section}.{name}", _format(getattr(obj, name))))
        return out

    def serialize(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.to_pairs())

    def with_overrides(self, overrides: dict[str, str]) -> "RunConfig":
        """Apply ``{"section.field": "text"}`` overrides, rejecting unknown keys."""
        updates: dict[str, dict] = {s: {} for s in SECTIONS}
        for key, text in overrides.items():
            section, _, name = key.partition(".")
            types = _field_types(SECTIONS[section]) if section in SECTIONS else {}
            if name not in types:
                raise ConfigError(f"unknown config key {key!r}")
            updates[section][name] = _parse(key, text, types[name])
        try:
            return RunConfig(**{s: dataclasses.replace(getattr(self, s), **u) for s, u in updates.items()})
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def parse(cls, text: str, base: "RunConfig | None" = None) -> "RunConfig":
        overrides = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            if key in overrides:
                raise ConfigError(f"line {lineno}: duplicate key {key!r}")
            overrides[key] = value
        return (base or cls()).with_overrides(overrides)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.parse(Path(path).read_text(encoding="utf-8"))

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.serialize(), encoding="utf-8")
