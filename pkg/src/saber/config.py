"""Flat ``key = value`` run configuration files."""

from __future__ import annotations

from pathlib import Path


class ConfigError(ValueError):
    pass


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = value.strip()
    return values


def read_config(path: str | Path) -> dict[str, str]:
    path = Path(path)
    return parse_config_text(path.read_text(), str(path))


def format_config(values: dict) -> str:
    """Inverse of :func:`parse_config_text` for scalar values, keys sorted."""
    lines = []
    for k in sorted(values):
        v = values[k]
        if isinstance(v, (list, tuple)):
            v = ",".join(str(x) for x in v)
        lines.append(f"{k} = {'' if v is None else v}")
    return "\n".join(lines) + "\n"
