"""Plain-text key-value configuration files.

Every config in the package (vehicle parameters, controller weights,
scenario files) uses the same format::

    # comment
    mass_kg = 4.0
    name = tight_turns
    sweep = 4.8, 7.2

Keys are bare identifiers, values are parsed as int, float, bool, a
comma-separated list of those, or left as strings.
"""

from __future__ import annotations

import dataclasses
import math
import typing
from pathlib import Path
from typing import Any, Mapping


class ConfigError(ValueError):
    """Raised for malformed config files or values that fail validation."""


def _parse_scalar(text: str) -> Any:
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def parse_value(text: str) -> Any:
    text = text.strip()
    if "," in text:
        return [_parse_scalar(t.strip()) for t in text.split(",") if t.strip()]
    return _parse_scalar(text)


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ", ".join(format_value(v) for v in value)
    return str(value)


def loads(text: str) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key.isidentifier():
            raise ConfigError(f"line {lineno}: invalid key {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = parse_value(value)
    return out


def dumps(mapping: Mapping[str, Any]) -> str:
    return "".join(f"{k} = {format_value(v)}\n" for k, v in mapping.items())


def load(path: str | Path) -> dict[str, Any]:
    return loads(Path(path).read_text())


def dump(mapping: Mapping[str, Any], path: str | Path) -> None:
    Path(path).write_text(dumps(mapping))


def _coerce(value: Any, annotation: Any, key: str) -> Any:
    origin = typing.get_origin(annotation)
    if annotation is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if annotation is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if annotation is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if annotation is str:
        return str(value) if not isinstance(value, list) else format_value(value)
    if origin is tuple:
        if value == "":  # an empty tuple is written as an empty value
            return ()
        items = value if isinstance(value, list) else [value]
        args = typing.get_args(annotation)
        inner = args[0] if args else float
        return tuple(_coerce(v, inner, key) for v in items)
    return value


def from_mapping(cls: type, mapping: Mapping[str, Any]):
    """Build dataclass ``cls`` from a parsed mapping, coercing by field type.

    Unknown keys are rejected; missing keys fall back to field defaults.
    """
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = set(mapping) - names
    if unknown:
        raise ConfigError(f"{cls.__name__}: unknown keys {sorted(unknown)}")
    kwargs = {k: _coerce(v, hints[k], k) for k, v in mapping.items()}
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{cls.__name__}: {exc}") from exc


def to_mapping(obj: Any) -> dict[str, Any]:
    out = {}
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        if isinstance(value, float) and not math.isfinite(value):
            raise ConfigError(f"{f.name}: non-finite value cannot be serialized")
        out[f.name] = list(value) if isinstance(value, tuple) else value
    return out


def load_dataclass(cls: type, path: str | Path):
    return from_mapping(cls, load(path))


def dump_dataclass(obj: Any, path: str | Path) -> None:
    dump(to_mapping(obj), path)
