"""Typed views of flat ``key = value`` configs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable

from .io import load_config, parse_config


class ConfigError(ValueError):
    """A config field is missing, unknown or malformed."""


def _bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {v!r}")


def _ints(v: str) -> tuple[int, ...]:
    return tuple(int(s) for s in v.replace(",", " ").split())


def _floats(v: str) -> tuple[float, ...]:
    return tuple(float(s) for s in v.replace(",", " ").split())


def _opt_int(v: str) -> int | None:
    return None if v.strip().lower() in ("none", "never", "") else int(v)


PARSERS: dict[str, Callable[[str], Any]] = {
    "int": int, "float": float, "str": str.strip, "bool": _bool,
    "ints": _ints, "floats": _floats, "opt_int": _opt_int,
}


@dataclass(frozen=True)
class Field:
    kind: str
    default: Any
    check: Callable[[Any], bool] | None = None
    hint: str = ""


def resolve(schema: dict[str, Field], raw: dict[str, str], where: str = "config") -> dict[str, Any]:
    """Typed values for every schema field, raw strings overriding defaults.

    Unknown keys and unparsable or out-of-range values raise :class:`ConfigError`
    naming the field.
    """
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {', '.join(unknown)}")
    out = {}
    for key, f in schema.items():
        if key not in raw:
            out[key] = f.default
            continue
        try:
            val = PARSERS[f.kind](raw[key])
        except ValueError as exc:
            raise ConfigError(f"{where}: field '{key}': {exc}") from None
        if f.check is not None and not f.check(val):
            raise ConfigError(f"{where}: field '{key}': invalid value {raw[key]!r} {f.hint}".rstrip())
        out[key] = val
    return out


def parse_overrides(pairs) -> dict[str, str]:
    """``["k=v", ...]`` from the command line as a dict."""
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def gather(path=None, text: str | None = None, overrides=None) -> dict[str, str]:
    """Raw key/value pairs from a file or text, with overrides applied last."""
    raw = {}
    if path is not None:
        raw.update(load_config(path))
    if text is not None:
        raw.update(parse_config(text))
    raw.update(overrides or {})
    return raw


def to_text(values: dict[str, Any]) -> str:
    """Config text that resolves back to ``values``."""
    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, tuple):
            return ",".join(fmt(x) for x in v)
        if v is None:
            return "none"
        if isinstance(v, float):
            return repr(v)
        return str(v)
    return "".join(f"{k} = {fmt(v)}\n" for k, v in values.items())


pos = lambda v: v > 0  # noqa: E731
nonneg = lambda v: v >= 0  # noqa: E731
all_pos = lambda v: len(v) > 0 and all(x > 0 for x in v)  # noqa: E731
