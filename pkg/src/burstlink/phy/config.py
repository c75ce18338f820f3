from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from ..dsp import FirTaps, design_rrc
from ..errors import ConfigError, UnknownCodec
from .fec import Codec, get_codec
from .framing import OVERHEAD_BITS, default_preamble
from .mapping import qpsk_map


@dataclass
class BurstConfig:
    """Parameters shared by transmitter and receiver.

    Time quantities for the PSK scheduler (``slot_len``, ``min_lead``) are in
    symbol-rate items, since bursts are scheduled before pulse shaping. The
    FSK modem schedules at the sample rate, so there they are samples.
    """

    preamble_bits: np.ndarray = field(default_factory=lambda: default_preamble(64))
    fec: str = "none"
    fec_k: int = 271
    fec_n: int | None = None
    sps: int = 2
    rrc_beta: float = 0.35
    rrc_span: int = 11
    slot_len: int = 512
    min_lead: int = 0
    now_period: int = 4096
    history_depth: int = 1 << 20

    # PSK detection / synchronization
    detect_threshold: float = 9.0
    detect_window: int = 512
    detect_segments: int = 4
    sync_corr_floor: float = 0.6
    eq_taps: int = 1
    max_payload_bits: int = 512
    max_burst_samples: int | None = None
    extract_guard: int = 16
    length_window: int = 32
    length_alpha: float = 0.25

    # FSK
    fsk_sensitivity: float = math.pi / 4
    fsk_var_window: int = 64
    fsk_var_threshold: float = 2.0
    fsk_squelch: float = 1e-6
    fsk_corr_floor: float = 0.5
    fsk_randomize: bool = False

    # test traffic
    payload_bits: int = 128
    symbol_rate: float = 2048.0
    strobe_period_ms: float = 1000.0

    def __post_init__(self):
        self.preamble_bits = np.asarray(self.preamble_bits, dtype=np.uint8).reshape(-1) & 1
        try:
            codec = get_codec(self.fec, self.fec_k)
        except (UnknownCodec, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        if self.fec_n is None:
            self.fec_n = codec.n
        elif self.fec_n != codec.n:
            raise ConfigError(f"fec_n={self.fec_n} does not match {self.fec} with k={self.fec_k} (n={codec.n})")
        if not self.fec_n >= self.fec_k >= 1:
            raise ConfigError("need n >= k >= 1")
        if len(self.preamble_bits) == 0 or len(self.preamble_bits) % 2:
            raise ConfigError("preamble length must be even and nonzero")
        if self.sps < 1 or self.slot_len < 1:
            raise ConfigError("sps and slot_len must be >= 1")
        if (self.sps * self.rrc_span) % 2:
            raise ConfigError("sps * rrc_span must be even (odd tap count)")
        if not 0 < self.rrc_beta <= 1:
            raise ConfigError("rrc_beta must be in (0, 1]")
        if not 0 <= self.payload_bits <= self.max_payload_bits:
            raise ConfigError("payload_bits must be within [0, max_payload_bits]")
        if self.detect_segments < 1 or self.detect_segments > self.preamble_len // 2:
            raise ConfigError("detect_segments must be in 1..preamble symbols")
        if self.detect_window < 1:
            raise ConfigError("detect_window must be >= 1")
        if self.eq_taps < 1 or self.eq_taps > 8:
            raise ConfigError("eq_taps must be in 1..8")
        if self.max_burst_samples is not None:
            floor = (len(self.preamble_bits) + self.max_payload_bits + OVERHEAD_BITS) * self.sps
            if self.max_burst_samples < floor:
                raise ConfigError(f"max_burst_samples must be >= {floor}")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def codec(self) -> Codec:
        return get_codec(self.fec, self.fec_k)

    @property
    def preamble_len(self) -> int:
        return len(self.preamble_bits)

    @property
    def preamble_symbols(self) -> np.ndarray:
        return qpsk_map(self.preamble_bits)

    def rrc(self) -> FirTaps:
        return design_rrc(self.sps, self.rrc_beta, self.rrc_span)

    @property
    def filter_delay(self) -> int:
        return self.sps * self.rrc_span // 2

    def coded_bits(self, payload_len: int) -> int:
        blocks = -(-(payload_len + OVERHEAD_BITS) // self.fec_k)
        return blocks * self.fec_n

    def psk_burst_bits(self, payload_len: int) -> int:
        bits = self.preamble_len + self.coded_bits(payload_len)
        return bits + bits % 2

    def psk_burst_samples(self, payload_len: int) -> int:
        """Raw sample span of a shaped PSK burst, precursor to tail."""
        nsym = self.psk_burst_bits(payload_len) // 2
        return (nsym - 1) * self.sps + 2 * self.filter_delay + 1

    def fsk_burst_samples(self, payload_len: int) -> int:
        return (self.preamble_len + self.coded_bits(payload_len)) * self.sps

    def psk_max_burst(self) -> int:
        if self.max_burst_samples is not None:
            return self.max_burst_samples
        return self.psk_burst_samples(self.max_payload_bits) + 2 * self.extract_guard

    def fsk_max_burst(self) -> int:
        if self.max_burst_samples is not None:
            return self.max_burst_samples
        return self.fsk_burst_samples(self.max_payload_bits) + 2 * self.extract_guard

    @property
    def strobe_period(self) -> int:
        return max(1, int(round(self.strobe_period_ms * 1e-3 * self.symbol_rate)))

    def replace(self, **changes) -> "BurstConfig":
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        if "fec" in changes or "fec_k" in changes:
            kw["fec_n"] = None
        kw.update(changes)
        return BurstConfig(**kw)
