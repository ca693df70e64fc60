"""Flat ``key = value`` experiment configuration.

Values are resolved in this order, later sources winning:

1. the config file (``#`` starts a comment, blank lines are ignored),
2. environment variables ``STRENGTHKIT_<KEY>`` (key upper-cased, ``-`` as ``_``),
3. ``--set key=value`` command-line overrides.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Iterable, Mapping, Optional

ENV_PREFIX = "STRENGTHKIT_"


class ConfigError(ValueError):
    pass


def _norm(key: str) -> str:
    return key.strip().lower().replace("-", "_")


def parse_pairs(lines: Iterable[str], origin: str = "<config>") -> dict[str, str]:
    out = {}
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{n}: expected 'key = value', got {raw.strip()!r}")
        k, v = line.split("=", 1)
        if not k.strip():
            raise ConfigError(f"{origin}:{n}: empty key")
        out[_norm(k)] = v.strip()
    return out


class Config:
    def __init__(self, values: Optional[Mapping[str, str]] = None, source: str = "<config>"):
        self.values = {_norm(k): str(v) for k, v in (values or {}).items()}
        self.source = source
        self.used: dict[str, str] = {}

    @classmethod
    def load(cls, path=None, overrides: Iterable[str] = (), environ: Optional[Mapping[str, str]] = None) -> "Config":
        values: dict[str, str] = {}
        source = "<defaults>"
        if path is not None:
            p = Path(path)
            if not p.is_file():
                raise ConfigError(f"config file {p} not found")
            values.update(parse_pairs(p.read_text().splitlines(), str(p)))
            source = str(p)
        env = os.environ if environ is None else environ
        for k, v in env.items():
            if k.startswith(ENV_PREFIX) and len(k) > len(ENV_PREFIX):
                values[_norm(k[len(ENV_PREFIX):])] = v
        values.update(parse_pairs(overrides, "--set"))
        return cls(values, source)

    def has(self, key: str) -> bool:
        return _norm(key) in self.values

    def _raw(self, key: str, default):
        k = _norm(key)
        if k in self.values:
            self.used[k] = self.values[k]
            return self.values[k]
        if default is _MISSING:
            raise ConfigError(f"missing config key '{k}' (set it in {self.source}, "
                              f"via {ENV_PREFIX}{k.upper()}, or with --set {k}=...)")
        self.used[k] = default if isinstance(default, str) else repr(default)
        return default

    def _typed(self, key, default, conv, kind):
        raw = self._raw(key, default)
        if not isinstance(raw, str):
            return raw
        try:
            return conv(raw)
        except ValueError as exc:
            raise ConfigError(f"config key '{_norm(key)}': expected {kind}, got {raw!r}") from exc

    def str(self, key: str, default=None):
        return self._raw(key, _MISSING if default is None else default)

    def int(self, key: str, default=None) -> int:
        return self._typed(key, _MISSING if default is None else default, int, "an integer")

    def float(self, key: str, default=None) -> float:
        return self._typed(key, _MISSING if default is None else default, float, "a number")

    def bool(self, key: str, default=None) -> bool:
        def conv(s):
            low = s.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(s)
        return self._typed(key, _MISSING if default is None else default, conv, "a boolean")

    def ints(self, key: str, default=None) -> list[int]:
        return self._typed(key, _MISSING if default is None else default,
                           lambda s: [int(x) for x in s.replace(" ", "").split(",") if x], "comma-separated integers")

    def floats(self, key: str, default=None) -> list[float]:
        return self._typed(key, _MISSING if default is None else default,
                           lambda s: [float(x) for x in s.replace(" ", "").split(",") if x], "comma-separated numbers")

    def mapping(self, key: str, default=None) -> dict[str, int]:
        """``a=1,b=2`` style values, keeping their order."""
        def conv(s):
            out = {}
            for part in s.replace(" ", "").split(","):
                if part:
                    name, _, num = part.partition(":")
                    if not num:
                        raise ValueError(part)
                    out[name] = int(num)
            return out
        return self._typed(key, _MISSING if default is None else default, conv, "name:count pairs")

    def snapshot(self) -> dict[str, str]:
        """Every key read so far with its resolved value (defaults included), for report headers."""
        return dict(sorted(self.used.items()))


_MISSING = object()
