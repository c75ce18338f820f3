"""Bit-level framing, padding and whitening.

Frame layout (bits, transmission order)::

    length (16, MSB first) | CRC-16/CCITT-FALSE of length (16, MSB first)
    | payload | CRC-32 of payload (32, LSB first)

CRC-32 is the reflected (zlib) variant run bit-serially over the payload in
transmission order, so for a byte-aligned payload sent LSB-first per byte it
equals ``zlib.crc32`` of those bytes.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from ..errors import HeaderCrcError, PayloadTooLong, TooShort

HEADER_BITS = 32
CRC32_BITS = 32
OVERHEAD_BITS = HEADER_BITS + CRC32_BITS
MAX_PAYLOAD_BITS = 0xFFFF

_CRC32_POLY_REFLECTED = 0xEDB88320
_CRC16_POLY = 0x1021


def _bits(x) -> np.ndarray:
    return np.asarray(x, dtype=np.uint8).reshape(-1) & 1


def int_to_bits(value: int, width: int, msb_first: bool = True) -> np.ndarray:
    b = np.array([(value >> i) & 1 for i in range(width)], dtype=np.uint8)
    return b[::-1].copy() if msb_first else b


def bits_to_int(bits, msb_first: bool = True) -> int:
    bits = _bits(bits)
    if not msb_first:
        bits = bits[::-1]
    v = 0
    for b in bits:
        v = (v << 1) | int(b)
    return v


@lru_cache(maxsize=1)
def _crc32_table() -> tuple[int, ...]:
    table = []
    for byte in range(256):
        c = byte
        for _ in range(8):
            c = (c >> 1) ^ _CRC32_POLY_REFLECTED if c & 1 else c >> 1
        table.append(c)
    return tuple(table)


def crc32_bits(bits) -> int:
    """Reflected CRC-32 (init and xorout 0xFFFFFFFF) over a bit sequence."""
    bits = _bits(bits)
    crc = 0xFFFFFFFF
    whole = len(bits) // 8 * 8
    if whole:
        table = _crc32_table()
        packed = np.packbits(bits[:whole], bitorder="little").tolist()
        for byte in packed:
            crc = (crc >> 8) ^ table[(crc ^ byte) & 0xFF]
    for b in bits[whole:].tolist():
        lsb = (crc ^ b) & 1
        crc >>= 1
        if lsb:
            crc ^= _CRC32_POLY_REFLECTED
    return crc ^ 0xFFFFFFFF


def crc16_ccitt_bits(bits) -> int:
    """CRC-16/CCITT-FALSE (poly 0x1021, init 0xFFFF) over a bit sequence, MSB first."""
    crc = 0xFFFF
    for b in _bits(bits).tolist():
        top = ((crc >> 15) & 1) ^ b
        crc = (crc << 1) & 0xFFFF
        if top:
            crc ^= _CRC16_POLY
    return crc


def frame(payload) -> np.ndarray:
    payload = _bits(payload)
    if len(payload) > MAX_PAYLOAD_BITS:
        raise PayloadTooLong(f"{len(payload)} payload bits exceed {MAX_PAYLOAD_BITS}")
    length = int_to_bits(len(payload), 16)
    hcrc = int_to_bits(crc16_ccitt_bits(length), 16)
    pcrc = int_to_bits(crc32_bits(payload), 32, msb_first=False)
    return np.concatenate([length, hcrc, payload, pcrc])


def parse_header(bits) -> int:
    """Validate the 32-bit header and return the payload length it carries."""
    bits = _bits(bits)
    if len(bits) < HEADER_BITS:
        raise TooShort(f"need {HEADER_BITS} header bits, got {len(bits)}")
    length = bits[:16]
    if crc16_ccitt_bits(length) != bits_to_int(bits[16:32]):
        raise HeaderCrcError("header checksum mismatch")
    return bits_to_int(length)


def deframe(bits) -> tuple[np.ndarray, dict]:
    """Inverse of :func:`frame`. Bits past the frame end (FEC padding,
    demodulated noise) are ignored. Raises :class:`HeaderCrcError` when the
    header fails; a payload CRC failure is reported as ``crc_ok=False``."""
    bits = _bits(bits)
    if len(bits) < OVERHEAD_BITS:
        raise TooShort(f"need at least {OVERHEAD_BITS} bits, got {len(bits)}")
    n = parse_header(bits)
    if len(bits) < OVERHEAD_BITS + n:
        raise TooShort(f"header announces {n} payload bits but only {len(bits) - OVERHEAD_BITS} follow")
    payload = bits[HEADER_BITS:HEADER_BITS + n].copy()
    crc = bits_to_int(bits[HEADER_BITS + n:OVERHEAD_BITS + n], msb_first=False)
    return payload, {"crc_ok": crc == crc32_bits(payload), "payload_len": n}


def pad_to_block(bits, k: int) -> np.ndarray:
    if k < 1:
        raise ValueError("block size must be >= 1")
    bits = _bits(bits)
    extra = -len(bits) % k
    return np.concatenate([bits, np.zeros(extra, dtype=np.uint8)]) if extra else bits.copy()


# -- whitening -------------------------------------------------------------

LFSR_SEED = 0x7FFF
LFSR_PERIOD = (1 << 15) - 1


@lru_cache(maxsize=1)
def _pn_period() -> np.ndarray:
    # Fibonacci x^15 + x^14 + 1; output is the register MSB
    s = LFSR_SEED
    out = np.empty(LFSR_PERIOD, dtype=np.uint8)
    for i in range(LFSR_PERIOD):
        out[i] = (s >> 14) & 1
        fb = ((s >> 14) ^ (s >> 13)) & 1
        s = ((s << 1) | fb) & 0x7FFF
    out.flags.writeable = False
    return out


def pn_sequence(n: int) -> np.ndarray:
    period = _pn_period()
    reps = -(-n // LFSR_PERIOD)
    return np.tile(period, max(reps, 1))[:n].copy()


def randomize(bits) -> np.ndarray:
    """XOR with the PN sequence restarted at the first bit; self-inverse."""
    bits = _bits(bits)
    return bits ^ pn_sequence(len(bits))


derandomize = randomize


def default_preamble(nbits: int = 64) -> np.ndarray:
    return pn_sequence(nbits)


def prepend_preamble(bits, preamble_bits) -> np.ndarray:
    return np.concatenate([_bits(preamble_bits), _bits(bits)])
