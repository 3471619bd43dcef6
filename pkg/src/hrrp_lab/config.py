"""Flat ``key = value`` config files.

One assignment per line, ``#`` starts a comment, blank lines are ignored.
Values are coerced to the type of the matching dataclass field. Tuple fields
take comma-separated values; a ``|``-separated value on a field marked as a
grid axis expands into one run per alternative.
"""

from __future__ import annotations

import dataclasses
import typing
from pathlib import Path


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)
        self.line = line


def parse_kv(text: str, path: str | None = None) -> dict[str, tuple[str, int]]:
    """Return ``{key: (raw_value, line_number)}``."""
    out: dict[str, tuple[str, int]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno, path)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key or not key.replace("_", "").replace("-", "").isalnum():
            raise ConfigError(f"invalid key {key!r}", lineno, path)
        if key in out:
            raise ConfigError(f"duplicate key {key!r}", lineno, path)
        out[key.replace("-", "_")] = (value, lineno)
    return out


def _coerce(raw: str, tp):
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if raw.lower() in ("", "none", "null"):
            return None
        return _coerce(raw, args[0])
    if origin in (tuple, list):
        (inner, *_rest) = typing.get_args(tp)
        vals = [_coerce(v.strip(), inner) for v in raw.split(",") if v.strip()]
        return tuple(vals) if origin is tuple else vals
    if tp is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if tp is int:
        return int(raw)
    if tp is float:
        return float(raw)
    return raw


def load_dataclass(cls, text: str, path: str | None = None, grid_fields: tuple[str, ...] = ()):
    """Build one instance of ``cls`` per point of the grid spanned by ``grid_fields``."""
    entries = parse_kv(text, path)
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    base: dict = {}
    axes: list[tuple[str, list]] = []
    for key, (raw, lineno) in entries.items():
        if key not in names:
            raise ConfigError(f"unknown key {key!r}", lineno, path)
        try:
            if key in grid_fields and "|" in raw:
                axes.append((key, [_coerce(v.strip(), hints[key]) for v in raw.split("|")]))
            else:
                base[key] = _coerce(raw, hints[key])
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", lineno, path) from None
    runs = [base]
    for key, values in axes:
        runs = [{**r, key: v} for r in runs for v in values]
    try:
        return [cls(**r) for r in runs]
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), None, path) from None


def load_file(cls, path, grid_fields: tuple[str, ...] = ()):
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", None, str(p)) from None
    return load_dataclass(cls, text, str(p), grid_fields)


def dump(obj) -> str:
    """Serialize a flat dataclass back to ``key = value`` text (stable order)."""
    lines = []
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if isinstance(v, (tuple, list)):
            v = ", ".join(str(x) for x in v)
        elif v is None:
            v = "none"
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
