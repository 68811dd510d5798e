"""Flat ``key = value`` configuration files.

Blank lines and ``#`` comments are ignored. Unknown keys are errors so a
typo never silently falls back to a default.
"""
from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Any, Mapping

from .exceptions import InvalidConfig


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfig(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise InvalidConfig(f"{source}:{lineno}: empty key")
        if key in out:
            raise InvalidConfig(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def read_config(path) -> dict[str, str]:
    return parse_config_text(Path(path).read_text(), str(path))


def coerce(value: str, like: Any, key: str = "?"):
    """Convert ``value`` to the type of the default ``like``."""
    try:
        if isinstance(like, bool):
            low = value.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if isinstance(like, int):
            f = float(value)
            if f != int(f):
                raise ValueError(value)
            return int(f)
        if isinstance(like, float):
            return float(value)
    except ValueError:
        raise InvalidConfig(f"{key}: cannot read {value!r} as {type(like).__name__}") from None
    return value


def apply_overrides(defaults: Mapping[str, Any], raw: Mapping[str, str], what: str) -> dict[str, Any]:
    unknown = sorted(set(raw) - set(defaults))
    if unknown:
        raise InvalidConfig(f"unknown {what} key(s): {', '.join(unknown)}")
    values = dict(defaults)
    for k, v in raw.items():
        values[k] = coerce(v, defaults[k], k)
    return values


def dataclass_defaults(cls) -> dict[str, Any]:
    return {f.name: f.default for f in dataclasses.fields(cls)}


def format_config(values: Mapping[str, Any]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in values.items())
