"""Flat ``key=value`` configuration files.

Lines hold ``key = value`` pairs; ``#`` starts a comment. Keys without a
prefix apply to both modems, ``psk.`` and ``fsk.`` keys to one modem only,
and ``channel.`` keys to the simulated channel. Later lines win. Example::

    # short slots for the PSK link
    sps = 4
    psk.slot_len = 512
    fsk.slot_len = 4096
    channel.noise_voltage = 0.05
"""

from __future__ import annotations

import dataclasses
import hashlib
import typing
from dataclasses import dataclass, field

import numpy as np

from .dsp import ChannelParams
from .errors import ConfigError
from .phy.config import BurstConfig

MODEMS = ("psk", "fsk")
_CHANNEL_KEYS = {"noise_voltage", "cfo", "cfo_spread", "phase0", "integer_delay"}


@dataclass
class LinkConfig:
    """Raw settings from a config file, resolved per modem on demand."""

    common: dict[str, str] = field(default_factory=dict)
    modem: dict[str, dict[str, str]] = field(default_factory=lambda: {m: {} for m in MODEMS})
    channel: dict[str, str] = field(default_factory=dict)

    def burst_config(self, modem: str, **overrides) -> BurstConfig:
        raw = {**self.common, **self.modem[modem]}
        kw = {k: _convert(k, v) for k, v in raw.items()}
        kw.update(overrides)
        try:
            return BurstConfig(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def channel_values(self) -> dict[str, float]:
        out = {}
        for k, v in self.channel.items():
            try:
                out[k] = int(v) if k == "integer_delay" else float(v)
            except ValueError as exc:
                raise ConfigError(f"channel.{k}: cannot parse {v!r}") from exc
        return out


def _field_types() -> dict[str, typing.Any]:
    return typing.get_type_hints(BurstConfig)


def _convert(key: str, text: str):
    hint = _field_types()[key]
    try:
        if key == "preamble_bits":
            return _parse_bits(text)
        if hint is bool:
            low = text.lower()
            if low not in ("1", "0", "true", "false", "yes", "no"):
                raise ValueError(text)
            return low in ("1", "true", "yes")
        if hint is int or hint == (int | None):
            if hint != int and text.lower() in ("", "none"):
                return None
            return int(text, 0)
        if hint is float:
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {text!r}") from exc


def _parse_bits(text: str) -> np.ndarray:
    """``0x``-prefixed hex (MSB first) or a string of 0/1 characters."""
    t = text.replace("_", "").strip()
    if t.lower().startswith("0x"):
        digits = t[2:]
        return np.unpackbits(np.frombuffer(bytes.fromhex(digits.zfill(len(digits) + len(digits) % 2)), np.uint8))
    if not t or set(t) - {"0", "1"}:
        raise ValueError(text)
    return np.array([int(c) for c in t], dtype=np.uint8)


def parse_config(text: str, source: str = "<config>") -> LinkConfig:
    cfg = LinkConfig()
    known = set(BurstConfig.field_names())
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        section, _, name = key.rpartition(".")
        if section == "channel":
            if name not in _CHANNEL_KEYS:
                raise ConfigError(f"{source}:{lineno}: unknown channel key {name!r}")
            cfg.channel[name] = value
            continue
        if section not in ("", *MODEMS) or name not in known:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        _convert(name, value)  # fail early on bad values
        (cfg.modem[section] if section else cfg.common)[name] = value
    return cfg


def load_config(path) -> LinkConfig:
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path))


def config_hash(config: BurstConfig, channel: ChannelParams | None = None, **extra) -> str:
    """Short stable digest of every setting that shapes a run."""
    parts = []
    for f in dataclasses.fields(config):
        v = getattr(config, f.name)
        if isinstance(v, np.ndarray):
            v = "".join(map(str, v.tolist()))
        parts.append(f"{f.name}={v!r}")
    if channel is not None:
        parts += [f"channel.{f.name}={getattr(channel, f.name)!r}" for f in dataclasses.fields(channel)]
    parts += [f"{k}={extra[k]!r}" for k in sorted(extra)]
    return hashlib.sha256("\n".join(parts).encode()).hexdigest()[:16]


__all__ = ["LinkConfig", "MODEMS", "config_hash", "load_config", "parse_config"]
