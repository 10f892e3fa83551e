"""Config file handling: one flat JSON file with per-module sections.

Precedence: command-line flags override config-file fields, which override
dataclass defaults.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

from lgdist.errors import ConfigError


def dataclass_from_dict(cls, values: dict, **overrides):
    """Build a config dataclass, rejecting unknown keys; overrides win."""
    merged = dict(values)
    for key, val in overrides.items():
        if val is not None:
            merged[key] = val
    field_names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(merged) - field_names)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} fields: {', '.join(unknown)}")
    try:
        return cls(**merged)
    except TypeError as exc:
        raise ConfigError(f"invalid {cls.__name__}: {exc}") from exc


def load_config_file(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {p} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must contain a JSON object")
    return data


def section(config: dict, name: str) -> dict:
    sec = config.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    return sec
