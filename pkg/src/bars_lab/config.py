"""Flat key-value config files with typed sections.

Format::

    # comment
    [section]
    key = value

Each section has a fixed schema of typed keys. Values are parsed by type,
defaults fill missing optional keys, and :func:`dump` writes the normalised
form that parses back to the same values.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

E_SYNTAX = "E_SYNTAX"
E_MISSING = "E_MISSING"
E_UNKNOWN = "E_UNKNOWN"
E_TYPE = "E_TYPE"
E_VALUE = "E_VALUE"

REQUIRED = object()


class ConfigError(ValueError):
    def __init__(self, code: str, message: str, key: str | None = None, line: int | None = None,
                 path: str | None = None):
        where = f"{path or '<config>'}" + (f":{line}" if line else "")
        super().__init__(f"{where}: [{code}] {message}")
        self.code = code
        self.key = key
        self.line = line
        self.path = path


def _parse_float(text: str) -> float:
    v = float(text)
    if not math.isfinite(v):
        raise ValueError("non-finite")
    return v


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(text)


def _parse_u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise ValueError("out of u64 range")
    return v


def _split(text: str) -> list[str]:
    return [p.strip() for p in text.split(",") if p.strip()]


PARSERS = {
    "int": lambda t: int(t, 10),
    "u64": _parse_u64,
    "float": _parse_float,
    "str": lambda t: t,
    "path": lambda t: t,
    "bool": _parse_bool,
    "floats": lambda t: [_parse_float(p) for p in _split(t)],
    "ints": lambda t: [int(p, 10) for p in _split(t)],
    "strs": _split,
}


def format_value(kind: str, value) -> str:
    if kind in ("floats", "ints", "strs"):
        return ", ".join(format_value(kind[:-1], v) for v in value)
    if kind == "float":
        return repr(float(value))
    if kind == "bool":
        return "true" if value else "false"
    return str(value)


@dataclass(frozen=True)
class Key:
    kind: str
    default: object = REQUIRED
    choices: tuple | None = None

    @property
    def required(self) -> bool:
        return self.default is REQUIRED


Schema = dict[str, dict[str, Key]]


@dataclass
class ParsedConfig:
    """Section -> key -> typed value, plus the line each explicit key came from."""

    values: dict[str, dict[str, object]]
    lines: dict[tuple[str, str], int] = field(default_factory=dict)
    path: str | None = None

    def __getitem__(self, section: str) -> dict[str, object]:
        return self.values[section]


_SECTION = re.compile(r"^\[([A-Za-z0-9_.-]+)\]$")
_ENTRY = re.compile(r"^([A-Za-z0-9_.-]+)\s*=\s*(.*)$")


def read_entries(text: str, path: str | None = None):
    """Yield (section, key, raw value, line number) with syntax checks only."""
    section = None
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith(("#", ";")):
            continue
        m = _SECTION.match(line)
        if m:
            section = m.group(1)
            continue
        m = _ENTRY.match(line)
        if not m:
            raise ConfigError(E_SYNTAX, f"expected 'key = value' or '[section]', got {raw!r}", None, lineno, path)
        if section is None:
            raise ConfigError(E_SYNTAX, f"key {m.group(1)!r} appears before any section", m.group(1), lineno, path)
        key = m.group(1)
        if (section, key) in seen:
            raise ConfigError(E_SYNTAX, f"duplicate key {section}.{key}", key, lineno, path)
        seen.add((section, key))
        yield section, key, m.group(2).strip(), lineno


def parse_text(text: str, schema_for, path: str | None = None) -> ParsedConfig:
    """Parse against a schema.

    ``schema_for`` is a Schema or a callable taking the partially parsed
    values (for sections whose keys depend on earlier choices) and
    returning a Schema.
    """
    entries = list(read_entries(text, path))
    raw: dict[str, dict[str, tuple[str, int]]] = {}
    for section, key, value, lineno in entries:
        raw.setdefault(section, {})[key] = (value, lineno)
    schema = schema_for if isinstance(schema_for, dict) else None
    if schema is None:
        schema = schema_for({s: {k: v for k, (v, _) in kv.items()} for s, kv in raw.items()})
    values: dict[str, dict[str, object]] = {}
    lines: dict[tuple[str, str], int] = {}
    for section, kv in raw.items():
        if section not in schema:
            first = min(ln for _, ln in kv.values())
            raise ConfigError(E_UNKNOWN, f"unknown section [{section}]", section, first, path)
        for key, (value, lineno) in kv.items():
            if key not in schema[section]:
                raise ConfigError(E_UNKNOWN, f"unknown key {key!r} in [{section}]", key, lineno, path)
            spec = schema[section][key]
            try:
                parsed = PARSERS[spec.kind](value)
            except (ValueError, TypeError):
                raise ConfigError(E_TYPE, f"key {key!r} expects {spec.kind}, got {value!r}", key, lineno, path) from None
            if spec.choices is not None and parsed not in spec.choices:
                raise ConfigError(E_VALUE, f"key {key!r} must be one of {', '.join(map(str, spec.choices))}, got {value!r}",
                                  key, lineno, path)
            values.setdefault(section, {})[key] = parsed
            lines[(section, key)] = lineno
    for section, keys in schema.items():
        got = values.setdefault(section, {})
        for key, spec in keys.items():
            if key in got:
                continue
            if spec.required:
                raise ConfigError(E_MISSING, f"missing required key {key!r} in [{section}]", key, None, path)
            got[key] = list(spec.default) if isinstance(spec.default, (list, tuple)) else spec.default
    return ParsedConfig(values, lines, path)


def dump(config: ParsedConfig, schema: Schema) -> str:
    """Normalised text: schema section order, sorted keys, canonical value spelling."""
    out = []
    for section, keys in schema.items():
        out.append(f"[{section}]")
        for key in sorted(keys):
            value = config.values.get(section, {}).get(key)
            if value is None:
                continue
            out.append(f"{key} = {format_value(keys[key].kind, value)}")
        out.append("")
    return "\n".join(out)


def parse_file(path, schema_for) -> ParsedConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise FileNotFoundError(f"cannot read config {p}: {exc.strerror}") from exc
    return parse_text(text, schema_for, str(p))
