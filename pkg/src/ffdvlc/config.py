"""Flat ``key = value`` configuration for nested dataclasses.

Keys are dotted paths into the dataclass tree (``scene.led_grid.count_x``),
tuples are written comma-separated and ``#`` starts a comment. Values are
parsed according to the annotated type of the field they land in.
"""

import hashlib
import typing
from dataclasses import fields, is_dataclass, replace
from pathlib import Path

from ovld import Dataclass, ovld, recurse

from .utils import MISSING, ConfigError, FfdvlcError

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


@ovld
def parse_value(t: type[bool], text: str, key: str):
    lowered = text.strip().lower()
    if lowered in _TRUE:
        return True
    elif lowered in _FALSE:
        return False
    raise ConfigError(f"{key}: expected a boolean, got {text!r}")


@ovld
def parse_value(t: type[int], text: str, key: str):
    try:
        return int(text.strip())
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {text!r}")


@ovld
def parse_value(t: type[float], text: str, key: str):
    try:
        return float(text.strip())
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {text!r}")


@ovld
def parse_value(t: type[str], text: str, key: str):
    return text.strip()


@ovld
def parse_value(t: type[tuple], text: str, key: str):
    items = [item.strip() for item in text.split(",") if item.strip()]
    args = typing.get_args(t)
    if len(args) == 2 and args[1] is Ellipsis:
        itemtypes = [args[0]] * len(items)
    elif len(args) != len(items):
        raise ConfigError(
            f"{key}: expected {len(args)} comma-separated values,"
            f" got {len(items)}"
        )
    else:
        itemtypes = args
    return tuple(recurse(it, item, key) for it, item in zip(itemtypes, items))


@ovld
def render_value(value: bool):
    return "true" if value else "false"


@ovld
def render_value(value: int):
    return str(int(value))


@ovld
def render_value(value: float):
    return repr(float(value))


@ovld
def render_value(value: str):
    return value


@ovld
def render_value(value: tuple):
    return ", ".join(recurse(v) for v in value)


@ovld
def flatten(value: Dataclass, key: str):
    flat = {}
    for f in fields(value):
        subkey = f"{key}.{f.name}" if key else f.name
        flat.update(recurse(getattr(value, f.name), subkey))
    return flat


@ovld
def flatten(value: object, key: str):
    return {key: render_value(value)}


def apply_flat(value, data, key=""):
    """Return a copy of dataclass ``value`` with the entries of ``data``
    (dotted key -> text) parsed into the matching fields.
    """
    hints = typing.get_type_hints(type(value))
    changes = {}
    for f in fields(value):
        subkey = f"{key}.{f.name}" if key else f.name
        current = getattr(value, f.name)
        if is_dataclass(current):
            updated = apply_flat(current, data, subkey)
            if updated is not current:
                changes[f.name] = updated
        elif (text := data.get(subkey, MISSING)) is not MISSING:
            changes[f.name] = parse_value(hints[f.name], text, subkey)
    if not changes:
        return value
    try:
        return replace(value, **changes)
    except FfdvlcError as exc:
        where = key or type(value).__name__
        raise ConfigError(f"{where}: {exc}") from exc


def parse_config_text(text, source="<config>"):
    """Parse ``key = value`` lines into a dict of raw strings."""
    data = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in data:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        data[key] = value
    return data


def parse_override(assignment):
    """Split a ``key=value`` command-line override."""
    if "=" not in assignment:
        raise ConfigError(f"Override {assignment!r} is not of the form key=value")
    key, value = assignment.split("=", 1)
    return key.strip(), value.strip()


def load_config(default, path=None, overrides=()):
    """Apply a config file, then ``key=value`` overrides, to ``default``.

    Arguments:
        default: The dataclass instance holding default values.
        path: Optional path to a flat config file.
        overrides: Iterable of ``key=value`` strings applied after the file.
    """
    data = {}
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"Cannot read config file {path}: {exc}") from exc
        data.update(parse_config_text(text, source=str(path)))
    data.update(parse_override(o) for o in overrides)
    known = flatten(default, "")
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"Unknown configuration key(s): {', '.join(unknown)}")
    return apply_flat(default, data)


def dump_config(config):
    """Render a dataclass tree as flat ``key = value`` text."""
    return "".join(f"{k} = {v}\n" for k, v in flatten(config, "").items())


def config_hash(config):
    """First 16 hex digits of the SHA-256 of ``dump_config(config)``."""
    return hashlib.sha256(dump_config(config).encode()).hexdigest()[:16]


__all__ = [
    "parse_value",
    "render_value",
    "flatten",
    "apply_flat",
    "parse_config_text",
    "parse_override",
    "load_config",
    "dump_config",
    "config_hash",
]
