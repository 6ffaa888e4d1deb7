"""Flat key-value config files: ``key = tokens...`` lines, ``#`` comments.

Every consumer validates its key set strictly; unknown keys are rejected so
hyperparameter typos fail loudly instead of silently using defaults.
"""

from __future__ import annotations


class ConfigError(ValueError):
    """Malformed or unknown-key configuration input."""


def parse_kv_file(path) -> dict[str, list[str]]:
    """Parse ``key = value [value ...]`` lines into token lists."""
    out: dict[str, list[str]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line.rstrip()!r}")
            key, _, rhs = stripped.partition("=")
            key = key.strip()
            if not key:
                raise ConfigError(f"{path}:{lineno}: empty key")
            if key in out:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            out[key] = rhs.split()
    return out


def require_keys(entries: dict, known: set[str], path="<config>") -> None:
    unknown = set(entries) - known
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)} (known: {sorted(known)})")


def one_float(entries, key, default=None, path="<config>") -> float:
    if key not in entries:
        if default is None:
            raise ConfigError(f"{path}: missing key {key!r}")
        return default
    toks = entries[key]
    if len(toks) != 1:
        raise ConfigError(f"{path}: {key!r} expects one value, got {toks}")
    try:
        return float(toks[0])
    except ValueError as exc:
        raise ConfigError(f"{path}: {key!r} is not a number: {toks[0]!r}") from exc


def one_int(entries, key, default=None, path="<config>") -> int:
    val = one_float(entries, key, default=float(default) if default is not None else None, path=path)
    if val != int(val):
        raise ConfigError(f"{path}: {key!r} must be an integer, got {val}")
    return int(val)


def one_bool(entries, key, default=None, path="<config>") -> bool:
    if key not in entries:
        if default is None:
            raise ConfigError(f"{path}: missing key {key!r}")
        return default
    toks = entries[key]
    if len(toks) != 1 or toks[0].lower() not in ("true", "false"):
        raise ConfigError(f"{path}: {key!r} must be true or false, got {toks}")
    return toks[0].lower() == "true"


def float_pair(entries, key, default=None, path="<config>") -> tuple[float, float]:
    if key not in entries:
        if default is None:
            raise ConfigError(f"{path}: missing key {key!r}")
        return default
    toks = entries[key]
    if len(toks) != 2:
        raise ConfigError(f"{path}: {key!r} expects 'lo hi', got {toks}")
    try:
        lo, hi = float(toks[0]), float(toks[1])
    except ValueError as exc:
        raise ConfigError(f"{path}: {key!r} has non-numeric bounds: {toks}") from exc
    return lo, hi


def float_list(entries, key, default=None, path="<config>") -> tuple[float, ...]:
    if key not in entries:
        if default is None:
            raise ConfigError(f"{path}: missing key {key!r}")
        return default
    try:
        return tuple(float(t) for t in entries[key])
    except ValueError as exc:
        raise ConfigError(f"{path}: {key!r} has non-numeric entries: {entries[key]}") from exc
