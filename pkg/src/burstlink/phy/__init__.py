"""Message-domain burst processing shared by the PSK and FSK modems."""

from .chain import (
    coded_frame,
    decode_soft_frame,
    fsk_burst_bits,
    fsk_waveform,
    psk_burst_bits,
    psk_burst_symbols,
    psk_waveform,
)
from .config import BurstConfig
from .fec import Codec, fec_decode, fec_encode, get_codec, hard_slice, register_codec
from .framing import (
    HEADER_BITS,
    OVERHEAD_BITS,
    crc16_ccitt_bits,
    crc32_bits,
    default_preamble,
    deframe,
    derandomize,
    frame,
    pad_to_block,
    parse_header,
    pn_sequence,
    prepend_preamble,
    randomize,
)
from .mapping import fsk_map, qpsk_hard_demap, qpsk_map, qpsk_soft_demap
from .scheduler import BurstScheduler, PduStrobe, burst_schedule, slot_time
from .sync import (
    SyncEstimate,
    estimate_cfo,
    frame_align,
    fsk_timing_and_slice,
    length_detect,
    synchronize,
)

__all__ = [
    "BurstConfig", "BurstScheduler", "Codec", "HEADER_BITS", "OVERHEAD_BITS", "PduStrobe",
    "SyncEstimate", "burst_schedule", "coded_frame", "crc16_ccitt_bits", "crc32_bits",
    "decode_soft_frame", "default_preamble", "deframe", "derandomize", "estimate_cfo",
    "fec_decode", "fec_encode", "frame", "frame_align", "fsk_burst_bits", "fsk_map",
    "fsk_timing_and_slice", "fsk_waveform", "get_codec", "hard_slice", "length_detect",
    "pad_to_block", "parse_header", "pn_sequence", "prepend_preamble", "psk_burst_bits",
    "psk_burst_symbols", "psk_waveform", "qpsk_hard_demap", "qpsk_map", "qpsk_soft_demap",
    "randomize", "register_codec", "slot_time", "synchronize",
]
