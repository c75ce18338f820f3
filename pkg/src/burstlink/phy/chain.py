"""Whole-burst helpers that string the bit-level stages together.

The flowgraphs in :mod:`burstlink.modems` run these same stages as separate
message blocks; the functions here are the reference composition used by
tests and by the genie-sync measurement path.
"""

from __future__ import annotations

import numpy as np

from ..dsp import upsample, vco
from .config import BurstConfig
from .fec import fec_decode, fec_encode
from .framing import deframe, derandomize, frame, pad_to_block, prepend_preamble, randomize
from .mapping import fsk_map, qpsk_map


def coded_frame(payload, config: BurstConfig, whiten: bool = True) -> np.ndarray:
    """frame -> pad -> randomize -> FEC encode."""
    bits = pad_to_block(frame(payload), config.fec_k)
    if whiten:
        bits = randomize(bits)
    return fec_encode(bits, config.codec())


def psk_burst_bits(payload, config: BurstConfig) -> np.ndarray:
    """Preamble plus coded frame, with one zero appended if the total is odd."""
    bits = prepend_preamble(coded_frame(payload, config), config.preamble_bits)
    if len(bits) % 2:
        bits = np.concatenate([bits, np.zeros(1, dtype=np.uint8)])
    return bits


def psk_burst_symbols(payload, config: BurstConfig) -> np.ndarray:
    return qpsk_map(psk_burst_bits(payload, config))


def psk_waveform(symbols, config: BurstConfig) -> np.ndarray:
    """Pulse-shape symbols at ``config.sps`` with unit average sample power.

    The result is the full convolution, precursor to tail, so the first
    symbol peaks at sample ``config.filter_delay``.
    """
    symbols = np.asarray(symbols, dtype=np.complex128)
    sps = config.sps
    taps = config.rrc().coefficients * np.sqrt(sps)
    if len(symbols) == 0:
        return np.zeros(0, dtype=np.complex128)
    y = np.convolve(upsample(symbols, sps), taps)
    return y[: (len(symbols) - 1) * sps + len(taps)]


def fsk_burst_bits(payload, config: BurstConfig) -> np.ndarray:
    return prepend_preamble(coded_frame(payload, config, whiten=config.fsk_randomize), config.preamble_bits)


def fsk_waveform(bits, config: BurstConfig) -> np.ndarray:
    return vco(fsk_map(bits, config.sps), config.fsk_sensitivity)


def decode_soft_frame(llr, config: BurstConfig, whiten: bool = True) -> tuple[np.ndarray, dict]:
    """FEC decode -> derandomize -> deframe, on LLRs already stripped of the
    preamble and cut to whole coded blocks."""
    bits = fec_decode(llr, config.codec())
    if whiten:
        bits = derandomize(bits)
    return deframe(bits)
