"""One INI file shared by every subcommand.

Sections map onto the config dataclasses::

    [run]      seed
    [scene]    SceneConfig
    [noise]    NoiseConfig
    [codec]    CodecConfig
    [encoder]  EncoderConfig
    [robot]    RobotConfig (scalar and tuple fields)
    [pipeline] PipelineConfig
    [score]    ScoreConfig

Values resolve as command-line flag, then file, then dataclass default.
"""
from __future__ import annotations

import configparser
import dataclasses
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .benchmark import ScoreConfig
from .codec import CodecConfig
from .encoder import EncoderConfig
from .handover.pipeline import PipelineConfig
from .handover.robot import RobotConfig
from .synth.scene import NoiseConfig, SceneConfig


class ConfigError(ValueError):
    pass


SECTIONS = {
    "scene": SceneConfig,
    "noise": NoiseConfig,
    "codec": CodecConfig,
    "encoder": EncoderConfig,
    "robot": RobotConfig,
    "pipeline": PipelineConfig,
    "score": ScoreConfig,
}


@dataclass(frozen=True)
class Config:
    seed: int = 0
    scene: SceneConfig = field(default_factory=SceneConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    codec: CodecConfig = field(default_factory=CodecConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    robot: RobotConfig = field(default_factory=RobotConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    score: ScoreConfig = field(default_factory=ScoreConfig)

    def with_seed(self, seed: int | None) -> "Config":
        return self if seed is None else dataclasses.replace(self, seed=seed)

    def override(self, section: str, **values) -> "Config":
        """Replace fields of one section, skipping values that are None."""
        values = {k: v for k, v in values.items() if v is not None}
        if not values:
            return self
        return dataclasses.replace(self, **{section: dataclasses.replace(getattr(self, section), **values)})


def _parse_tuple(text: str, hint) -> tuple:
    args = typing.get_args(hint)
    inner = args[0] if args else float
    text = text.strip().strip("()")
    if inner is tuple or typing.get_origin(inner) is tuple:
        # nested pairs written as "a b; c d"
        return tuple(tuple(float(x) for x in part.split()) for part in text.split(";") if part.strip())
    conv = int if inner is int else float
    return tuple(conv(x) for x in text.replace(",", " ").split())


def _convert(text: str, hint, where: str) -> Any:
    origin = typing.get_origin(hint)
    try:
        if origin in (typing.Union, types.UnionType):
            options = [a for a in typing.get_args(hint) if a is not type(None)]
            if text.strip().lower() in ("", "none"):
                return None
            return _convert(text, options[0], where)
        if hint is bool:
            return text.strip().lower() in ("1", "true", "yes", "on")
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
        if hint is str:
            return text.strip()
        if hint is tuple or origin is tuple:
            return _parse_tuple(text, hint)
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {text!r} ({exc})") from exc
    raise ConfigError(f"{where}: not settable from a config file")


def _section(current, items: dict[str, str], name: str):
    cls = type(current)
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    values = {}
    for key, text in items.items():
        if key not in known:
            raise ConfigError(f"[{name}] unknown key {key!r}")
        values[key] = _convert(text, hints[key], f"[{name}] {key}")
    try:
        return dataclasses.replace(current, **values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}] {exc}") from exc


def load_config(path: str | Path | None = None, base: Config | None = None) -> Config:
    """Read an INI file on top of ``base`` (defaults when omitted)."""
    cfg = base or Config()
    if path is None:
        return cfg
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    updates: dict[str, Any] = {}
    for name in parser.sections():
        items = dict(parser.items(name, raw=True))
        if name == "run":
            extra = set(items) - {"seed"}
            if extra:
                raise ConfigError(f"[run] unknown keys {sorted(extra)}")
            if "seed" in items:
                updates["seed"] = _convert(items["seed"], int, "[run] seed")
            continue
        if name not in SECTIONS:
            raise ConfigError(f"{path}: unknown section [{name}]")
        updates[name] = _section(getattr(cfg, name), items, name)
    return dataclasses.replace(cfg, **updates)
