"""TOML config loading with strict key and type checking."""

from __future__ import annotations

import dataclasses

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover - py310 path
    import tomli as tomllib


class ConfigError(ValueError):
    """Bad configuration: unknown key, wrong type, or unusable value."""


def load_toml(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def coerce_dataclass(cls, data: dict, where: str = "config"):
    """Build a dataclass from a plain dict, rejecting unknown keys.

    Ints are accepted where floats are declared; everything else must
    match the declared type exactly.
    """
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}; "
                          f"known keys are {sorted(fields)}")
    kwargs = {}
    for name, value in data.items():
        ftype = fields[name].type
        if ftype in ("int", int):
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError(f"{where}: {name} must be an integer, "
                                  f"got {value!r}")
        elif ftype in ("float", float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{where}: {name} must be a number, "
                                  f"got {value!r}")
            value = float(value)
        elif ftype in ("str", str):
            if not isinstance(value, str):
                raise ConfigError(f"{where}: {name} must be a string, "
                                  f"got {value!r}")
        elif ftype in ("bool", bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{where}: {name} must be a boolean, "
                                  f"got {value!r}")
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc
