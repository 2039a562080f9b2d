"""Flat ``key = value`` run configuration.

Keys carry a section prefix (``model.``, ``env.``, ``train.``); a bare
``seed`` sets all three seeds at once. Lines starting with ``#`` are comments.
Every key and value is checked against the dataclass schemas before any work
starts, and all problems are reported together.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable

from .envs import EnvConfig
from .models.policy import ModelConfig
from .trainer import TrainConfig

SECTIONS = {"model": ModelConfig, "env": EnvConfig, "train": TrainConfig}


class ConfigError(ValueError):
    def __init__(self, problems: Iterable[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {p}" for p in self.problems))


@dataclass
class RunConfig:
    model: ModelConfig
    env: EnvConfig
    train: TrainConfig

    def dumps(self) -> str:
        lines = []
        for section, obj in (("model", self.model), ("env", self.env), ("train", self.train)):
            for f in fields(obj):
                v = getattr(obj, f.name)
                lines.append(f"{section}.{f.name} = {_format(v)}")
        return "\n".join(lines) + "\n"


def _format(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _schema(cls) -> dict[str, type]:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in fields(cls)}


def _coerce(text: str, annotation):
    optional = False
    args = typing.get_args(annotation)
    if args and type(None) in args:
        optional = True
        annotation = next(a for a in args if a is not type(None))
    if optional and text.lower() in ("none", "", "-"):
        return None
    if annotation is bool:
        low = text.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if annotation is int:
        return int(text.replace("_", ""))
    if annotation is float:
        return float(text)
    if annotation is str:
        return text
    raise ValueError(f"unsupported field type {annotation}")


def parse_pairs(text: str, source: str = "<config>") -> list[tuple[str, str, str]]:
    """``(key, value, location)`` triples from config text."""
    out = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError([f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}"])
        key, value = (part.strip() for part in line.split("=", 1))
        out.append((key, value, f"{source}:{lineno}"))
    return out


def build_config(pairs: Iterable[tuple[str, str, str]]) -> RunConfig:
    values: dict[str, dict[str, object]] = {s: {} for s in SECTIONS}
    problems = []
    schemas = {s: _schema(cls) for s, cls in SECTIONS.items()}
    for key, value, where in pairs:
        if key == "seed":
            try:
                seed = int(value)
            except ValueError:
                problems.append(f"{where}: seed: expected an integer, got {value!r}")
                continue
            for s in SECTIONS:
                values[s]["seed"] = seed
            continue
        section, _, name = key.partition(".")
        if section not in SECTIONS or not name:
            problems.append(f"{where}: unknown key {key!r} (expected model.*, env.*, train.* or seed)")
            continue
        if name not in schemas[section]:
            known = ", ".join(sorted(schemas[section]))
            problems.append(f"{where}: unknown key {key!r}; {section} keys are: {known}")
            continue
        try:
            values[section][name] = _coerce(value, schemas[section][name])
        except ValueError as exc:
            problems.append(f"{where}: {key}: {exc}")
    built = {}
    for s, cls in SECTIONS.items():
        try:
            built[s] = cls(**values[s])
        except (TypeError, ValueError) as exc:
            problems.append(f"{s}: {exc}")
    if problems:
        raise ConfigError(problems)
    return RunConfig(built["model"], built["env"], built["train"])


def load_config(path: str | Path | None, overrides: Iterable[str] = ()) -> RunConfig:
    pairs = []
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError([f"{p}: no such file"])
        pairs += parse_pairs(p.read_text(), str(p))
    for i, item in enumerate(overrides):
        if "=" not in item:
            raise ConfigError([f"override {item!r}: expected key=value"])
        k, v = item.split("=", 1)
        pairs.append((k.strip(), v.strip(), f"--set[{i}]"))
    return build_config(pairs)


def replace_section(cfg: RunConfig, section: str, **changes) -> RunConfig:
    return dataclasses.replace(cfg, **{section: dataclasses.replace(getattr(cfg, section), **changes)})
