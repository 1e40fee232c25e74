"""Flat key=value run configuration with [section] headers.

Strict parser: unknown sections or keys are rejected with their line number,
so a config snapshot always round-trips exactly. Sections map onto the stage
dataclasses (data, arch, train, fit, eval).
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import get_type_hints

from .consolidate import FitConfig
from .dataset import GenerationConfig
from .errors import InvalidInput
from .network import ArchConfig
from .training import TrainConfig


@dataclass
class EvalConfig:
    samples: int = 10_000
    seed: int = 0


SECTION_TYPES = {
    "data": GenerationConfig,
    "arch": ArchConfig,
    "train": TrainConfig,
    "fit": FitConfig,
    "eval": EvalConfig,
}


@dataclass
class RunConfig:
    data: GenerationConfig
    arch: ArchConfig
    train: TrainConfig
    fit: FitConfig
    eval: EvalConfig

    @staticmethod
    def defaults() -> "RunConfig":
        return RunConfig(GenerationConfig(), ArchConfig(), TrainConfig(),
                         FitConfig(), EvalConfig())

    def section(self, name: str):
        if name not in SECTION_TYPES:
            raise InvalidInput(f"unknown config section {name!r}")
        return getattr(self, name)


def _parse_value(raw: str, target_type, key: str, line_no: int):
    raw = raw.strip()
    try:
        if target_type is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
        if target_type is str:
            return raw
        if target_type is tuple or str(target_type).startswith("tuple"):
            if not raw:
                return ()
            return tuple(int(tok) for tok in raw.split(","))
    except ValueError as exc:
        raise InvalidInput(f"line {line_no}: bad value for {key!r}: {raw!r}") from exc
    raise InvalidInput(f"line {line_no}: unsupported type for key {key!r}")


def parse_config(text: str) -> RunConfig:
    run = RunConfig.defaults()
    section = None
    section_obj = None
    hints = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
            if section not in SECTION_TYPES:
                raise InvalidInput(f"line {line_no}: unknown section [{section}]")
            section_obj = run.section(section)
            hints = get_type_hints(SECTION_TYPES[section])
            continue
        if "=" not in stripped:
            raise InvalidInput(f"line {line_no}: expected key = value, got {stripped!r}")
        if section is None:
            raise InvalidInput(f"line {line_no}: key outside any [section]")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        field_names = {f.name for f in dataclasses.fields(section_obj)}
        if key not in field_names:
            raise InvalidInput(f"line {line_no}: unknown key {key!r} in [{section}]")
        value = _parse_value(raw, hints[key], key, line_no)
        setattr(section_obj, key, value)
    # re-run dataclass validation with the final values
    for name, cls in SECTION_TYPES.items():
        obj = run.section(name)
        run_kwargs = {f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)}
        setattr(run, name, cls(**run_kwargs))
    return run


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def _format_value(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def dump_config(run: RunConfig) -> str:
    """Diff-friendly snapshot; parse_config(dump_config(r)) round-trips."""
    lines = []
    for name in SECTION_TYPES:
        obj = run.section(name)
        lines.append(f"[{name}]")
        for field in dataclasses.fields(obj):
            lines.append(f"{field.name} = {_format_value(getattr(obj, field.name))}")
        lines.append("")
    return "\n".join(lines)
