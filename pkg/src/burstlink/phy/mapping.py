"""Bit <-> symbol mapping for QPSK and 2-FSK."""

from __future__ import annotations

import numpy as np

from ..errors import OddBitCount

_A = 1 / np.sqrt(2)


def qpsk_map(bits) -> np.ndarray:
    """Gray QPSK, unit energy: b0 picks the sign of I, b1 the sign of Q
    (0 -> +, 1 -> -)."""
    bits = np.asarray(bits, dtype=np.uint8).reshape(-1)
    if len(bits) % 2:
        raise OddBitCount(f"QPSK needs an even bit count, got {len(bits)}")
    pairs = bits.reshape(-1, 2).astype(np.float64)
    return _A * ((1 - 2 * pairs[:, 0]) + 1j * (1 - 2 * pairs[:, 1]))


def qpsk_soft_demap(symbols, noise_var: float) -> np.ndarray:
    """Exact per-bit LLRs for Gray QPSK in complex AWGN of variance
    ``noise_var`` per sample; positive means bit 0."""
    if not noise_var > 0:
        raise ValueError("noise_var must be > 0")
    y = np.asarray(symbols, dtype=np.complex128).reshape(-1)
    scale = 2 * np.sqrt(2) / noise_var
    out = np.empty(2 * len(y))
    out[0::2] = scale * y.real
    out[1::2] = scale * y.imag
    return out


def qpsk_hard_demap(symbols) -> np.ndarray:
    y = np.asarray(symbols, dtype=np.complex128).reshape(-1)
    out = np.empty(2 * len(y), dtype=np.uint8)
    out[0::2] = y.real < 0
    out[1::2] = y.imag < 0
    return out


def fsk_map(bits, sps: int = 1) -> np.ndarray:
    """Bit 1 -> +1, bit 0 -> -1, each held for ``sps`` samples."""
    bits = np.asarray(bits, dtype=np.uint8).reshape(-1)
    return np.repeat(2.0 * bits - 1.0, sps)
