"""Key-value experiment configs (``key = value`` lines, ``#`` comments)."""

import configparser
from pathlib import Path

import numpy as np

from .graph import SpecError


class ConfigError(ValueError):
    pass


def parse_grid(text):
    """``a:b:step`` (inclusive) or a comma list; returns an ascending tuple."""
    text = str(text).strip()
    if ":" in text:
        try:
            a, b, s = (float(x) for x in text.split(":"))
        except ValueError as e:
            raise ConfigError(f"bad grid {text!r}: expected a:b:step") from e
        if s <= 0 or b < a:
            raise ConfigError(f"bad grid {text!r}")
        n = int(round((b - a) / s)) + 1
        vals = [round(a + k * s, 10) for k in range(n)]
    else:
        try:
            vals = [float(x) for x in text.split(",") if x.strip()]
        except ValueError as e:
            raise ConfigError(f"bad grid {text!r}") from e
    if not vals:
        raise ConfigError("empty grid")
    if vals != sorted(vals):
        raise ConfigError("grid must be ascending")
    return tuple(vals)


def parse_ints(text):
    try:
        return tuple(int(x) for x in str(text).split(",") if x.strip())
    except ValueError as e:
        raise ConfigError(f"bad integer list {text!r}") from e


def load(path):
    """Read a config file into a plain dict of strings (keys lower-cased, '-' -> '_')."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {path} not found")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        cp.read_string("[main]\n" + p.read_text())
    except configparser.Error as e:
        raise ConfigError(str(e)) from e
    return {k.replace("-", "_"): v for k, v in cp["main"].items()}


def merged(file_values, overrides):
    """Command-line overrides win over file values; ``None`` overrides are ignored."""
    out = dict(file_values)
    out.update({k: v for k, v in overrides.items() if v is not None})
    return out


def get(values, key, cast=str, default=None, required=False):
    if key not in values or values[key] is None:
        if required:
            raise ConfigError(f"missing required setting {key!r}")
        return default
    v = values[key]
    try:
        if cast is bool and isinstance(v, str):
            return v.strip().lower() in ("1", "true", "yes", "on")
        return cast(v)
    except (TypeError, ValueError, SpecError) as e:
        raise ConfigError(f"bad value for {key!r}: {v!r}") from e


def as_array(grid):
    return np.asarray(grid, dtype=float)
