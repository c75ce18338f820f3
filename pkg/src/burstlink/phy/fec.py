"""Block FEC codecs.

Codecs map k-bit blocks to n-bit blocks. Decoders take LLRs with the
convention positive LLR <=> bit 0. ``none`` and ``repetition-<r>`` ship;
``ldpc`` is a declared id that has to be supplied through
:func:`register_codec` before use.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import LengthNotMultiple, UnknownCodec

DECLARED_CODECS = ("none", "repetition-<r>", "ldpc")


@dataclass(frozen=True)
class Codec:
    name: str
    k: int
    n: int
    encode_blocks: Callable[[np.ndarray], np.ndarray]  # (m, k) bits -> (m, n) bits
    decode_blocks: Callable[[np.ndarray], np.ndarray]  # (m, n) llr -> (m, k) bits

    @property
    def rate(self) -> float:
        return self.k / self.n


_registry: dict[str, Callable[[int], Codec]] = {}


def register_codec(name: str, factory: Callable[[int], Codec]) -> None:
    """Install a codec factory ``factory(k) -> Codec`` under ``name``."""
    _registry[name] = factory


def hard_slice(llr) -> np.ndarray:
    return (np.asarray(llr) < 0).astype(np.uint8)


def _none(k: int) -> Codec:
    return Codec("none", k, k, lambda b: b.copy(), hard_slice)


def _repetition(r: int, k: int) -> Codec:
    def enc(b):
        return np.repeat(b, r, axis=1)

    def dec(llr):
        m = llr.shape[0]
        return hard_slice(llr.reshape(m, k, r).sum(axis=2))

    return Codec(f"repetition-{r}", k, r * k, enc, dec)


def get_codec(name: str, k: int) -> Codec:
    if k < 1:
        raise ValueError("k must be >= 1")
    if name in _registry:
        return _registry[name](k)
    if name == "none":
        return _none(k)
    m = re.fullmatch(r"repetition-(\d+)", name)
    if m and int(m.group(1)) >= 1:
        return _repetition(int(m.group(1)), k)
    if name == "ldpc":
        raise UnknownCodec("ldpc is a declared codec id but no implementation is registered")
    raise UnknownCodec(f"unknown codec {name!r}")


def fec_encode(bits, codec: Codec) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.uint8).reshape(-1)
    if len(bits) % codec.k:
        raise LengthNotMultiple(f"{len(bits)} bits is not a multiple of k={codec.k}")
    return codec.encode_blocks(bits.reshape(-1, codec.k)).reshape(-1).astype(np.uint8)


def fec_decode(llr, codec: Codec) -> np.ndarray:
    llr = np.asarray(llr, dtype=np.float64).reshape(-1)
    if len(llr) % codec.n:
        raise LengthNotMultiple(f"{len(llr)} soft bits is not a multiple of n={codec.n}")
    return codec.decode_blocks(llr.reshape(-1, codec.n)).reshape(-1).astype(np.uint8)
