"""End-to-end link runs: TX -> channel -> RX in one flowgraph, with burst
accounting by the sequence number carried in each test payload."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .dsp import ChannelParams, Throttle, cfo_hopper_block, channel_block
from .errors import ConfigError
from .modems import (
    ModemGraph,
    build_fsk_rx,
    build_fsk_tx,
    build_psk_genie_rx,
    build_psk_rx,
    build_psk_tx,
    fsk_detection_params,
    psk_detection_params,
)
from .phy.config import BurstConfig
from .phy.framing import bits_to_int
from .phy.scheduler import SEQ_BITS
from .runtime import PDU, Flowgraph, MessageSink, RunStats

def noise_voltage_for_ebn0(ebn0_db: float, sps: int, bits_per_symbol: int = 2) -> float:
    """Per-component noise standard deviation for a target Eb/N0.

    The transmit pulse is scaled so each symbol carries unit energy spread
    over ``sps`` samples, so Es/N0 = 1 / (2 sigma^2 / sps) and
    Eb = Es / log2(M). Binary FSK has unit sample power, so the same
    relation holds with one bit per symbol.
    """
    ebn0 = 10.0 ** (ebn0_db / 10.0)
    return math.sqrt(sps / (2.0 * ebn0 * bits_per_symbol))


@dataclass
class RunReport:
    modem: str
    bursts_tx: int
    bursts_detected: int
    bursts_crc_ok: int
    false_triggers: int
    bit_errors: int
    bits_compared: int
    per: float
    ber: float
    elapsed: float
    seed: int
    config_hash: str = ""

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class BurstRecord:
    seq: int
    tx_time: int
    detected: bool = False
    received: bool = False
    crc_ok: bool = False
    bit_errors: int = 0
    bits: int = 0


@dataclass
class LinkSetup:
    modem: str
    config: BurstConfig
    channel: ChannelParams = field(default_factory=ChannelParams)
    bursts: int = 100
    seed: int = 0
    cfo_spread: float = 0.0
    genie_sync: bool = False
    diagnostics: bool = False
    rate_limit: float | None = None

    def __post_init__(self):
        if self.modem not in ("psk", "fsk"):
            raise ConfigError(f"unknown modem {self.modem!r}")
        if self.bursts < 1:
            raise ConfigError("bursts must be >= 1")
        if self.genie_sync and self.modem != "psk":
            raise ConfigError("genie sync is only available for the PSK modem")
        if self.genie_sync and (self.channel.cfo or self.cfo_spread or self.channel.phase0):
            raise ConfigError("genie sync assumes a channel without carrier offset")
        if self.config.payload_bits < SEQ_BITS:
            raise ConfigError(f"payload_bits must be >= {SEQ_BITS} to carry the sequence number")


@dataclass
class LinkResult:
    report: RunReport
    bursts: list[BurstRecord]
    rx_pdus: list[PDU]
    diagnostics: dict[str, list[PDU]]
    stats: RunStats


def bits_per_symbol(modem: str) -> int:
    return 2 if modem == "psk" else 1


def _tx_unit(setup: LinkSetup) -> int:
    """Samples per transmitter scheduling item."""
    return setup.config.sps if setup.modem == "psk" else 1


def source_length(setup: LinkSetup) -> int:
    """Source length, in scheduling items, that fits every burst plus the
    receiver's extraction window after the last one."""
    cfg = setup.config
    unit = _tx_unit(setup)
    if setup.modem == "psk":
        burst = -(-cfg.psk_burst_samples(cfg.payload_bits) // unit)
        event = psk_detection_params(cfg)["event_length"]
    else:
        burst = cfg.fsk_burst_samples(cfg.payload_bits)
        event = fsk_detection_params(cfg)["event_length"]
    spacing = max(cfg.strobe_period, -(-burst // cfg.slot_len) * cfg.slot_len)
    tail = 2 * (cfg.now_period + cfg.slot_len + cfg.min_lead) + burst + -(-event // unit) + 64
    return (setup.bursts - 1) * spacing + tail


def build_link(setup: LinkSetup) -> tuple[Flowgraph, ModemGraph, ModemGraph, dict]:
    """Wire TX, channel and RX; returns the graph, both modems and the
    collecting sinks keyed by name."""
    cfg = setup.config
    g = Flowgraph(seed=setup.seed)
    total = source_length(setup)
    if setup.modem == "psk":
        tx = build_psk_tx(cfg, g, total=total, strobe=setup.bursts, keep_reference=setup.genie_sync)
    else:
        tx = build_fsk_tx(cfg, g, total=total, strobe=setup.bursts)
    chan = replace(setup.channel, seed=setup.seed)
    if setup.genie_sync:
        rx = build_psk_genie_rx(cfg, tx, noise_var=2 * chan.noise_voltage ** 2 / cfg.sps,
                                delay=chan.integer_delay)
    elif setup.modem == "psk":
        rx = build_psk_rx(cfg, g, diagnostics=setup.diagnostics)
    else:
        rx = build_fsk_rx(cfg, g, diagnostics=setup.diagnostics)

    head, port = tx.taps["iq_out"]
    if setup.rate_limit:
        thr = Throttle("complex", setup.rate_limit, name="throttle")
        g.add(thr)
        g.connect_stream(head, port, thr, 0)
        head, port = thr, 0
    if setup.cfo_spread:
        hop = cfo_hopper_block(setup.cfo_spread, cfg.slot_len * _tx_unit(setup), setup.seed + 1,
                               name="cfo_hopper")
        g.add(hop)
        g.connect_stream(head, port, hop, 0)
        head, port = hop, 0
    ch = channel_block(chan, "channel")
    g.add(ch)
    g.connect_stream(head, port, ch, 0)
    g.connect_stream(ch, 0, *rx.taps["iq_in"])

    sinks = {"pdu_out": MessageSink(name="collect.pdu_out"), "tx_events": MessageSink(name="collect.tx_events")}
    g.connect_message(*tx.taps["events"], sinks["tx_events"], "in")
    g.connect_message(*rx.taps["pdu_out"], sinks["pdu_out"], "in")
    for stage in rx.diagnostics:
        sinks[stage] = MessageSink(name=f"collect.{stage}")
        g.connect_message(*rx.taps["diag." + stage], sinks[stage], "in")
    return g, tx, rx, sinks


def _burst_span(setup: LinkSetup, length: int) -> int:
    cfg = setup.config
    if setup.modem == "psk":
        return (length - 1) * cfg.sps + 2 * cfg.filter_delay + 1
    return length


def _match_events(setup: LinkSetup, tx_events, rx_events) -> tuple[set[int], int]:
    """Attribute each extraction window to the burst its trigger fired on.

    The trigger instant is the window start plus the detector lookback; it
    may precede the burst by up to one lookback. Returns the claimed
    sequence numbers and the number of windows that claimed nothing new
    (noise triggers and repeat triggers on one burst).
    """
    unit, delay = _tx_unit(setup), setup.channel.integer_delay
    if setup.genie_sync:
        lookback = 0
    elif setup.modem == "psk":
        lookback = psk_detection_params(setup.config)["lookback"]
    else:
        lookback = fsk_detection_params(setup.config)["lookback"]
    spans = sorted((ev.time * unit + delay, ev.time * unit + delay + _burst_span(setup, ev.length),
                    int(ev.meta["seq"])) for ev in tx_events)
    ends = np.array([e for _, e, _ in spans], dtype=np.int64)
    hit: set[int] = set()
    false = 0
    for t, _, _ in rx_events:
        tau = t + lookback
        j = int(np.searchsorted(ends, tau, side="right"))
        if j < len(spans) and spans[j][0] <= tau + lookback and spans[j][2] not in hit:
            hit.add(spans[j][2])
        else:
            false += 1
    return hit, false


def _account(sent: list[PDU], received: list[PDU]) -> list[BurstRecord]:
    records = {int(p.meta["seq"]): BurstRecord(int(p.meta["seq"]), int(p.meta["tx_time"])) for p in sent}
    ref = {int(p.meta["seq"]): p.payload for p in sent}
    for p in received:
        if len(p.payload) < SEQ_BITS:
            continue
        seq = bits_to_int(p.payload[:SEQ_BITS])
        rec = records.get(seq)
        if rec is None or rec.received or len(p.payload) != len(ref[seq]):
            continue
        rec.received = True
        rec.crc_ok = bool(p.meta.get("crc_ok", False))
        rec.bits = len(ref[seq])
        rec.bit_errors = int(np.count_nonzero(p.payload != ref[seq]))
    return [records[k] for k in sorted(records)]


def run_link(setup: LinkSetup, config_hash: str = "") -> LinkResult:
    g, tx, rx, sinks = build_link(setup)
    t0 = time.perf_counter()
    stats = g.run()
    elapsed = time.perf_counter() - t0

    sent = tx.blocks["pdu_strobe"].sent
    received = sinks["pdu_out"].messages
    records = _account(sent, received)
    rx_events = rx.blocks["es_sink"].log
    hit, false = _match_events(setup, sinks["tx_events"].messages, rx_events)
    for r in records:
        r.detected = r.seq in hit
    ok = sum(r.received and r.crc_ok and r.bit_errors == 0 for r in records)
    if setup.genie_sync:
        ber_block = rx.blocks["ber"]
        bits, errors = ber_block.bits, ber_block.errors
    else:
        bits = sum(r.bits for r in records if r.received)
        errors = sum(r.bit_errors for r in records if r.received)
    report = RunReport(
        modem=setup.modem,
        bursts_tx=len(sent),
        bursts_detected=len(rx_events),
        bursts_crc_ok=sum(bool(p.meta.get("crc_ok")) for p in received),
        false_triggers=false,
        bit_errors=errors,
        bits_compared=bits,
        per=1.0 - ok / len(sent) if sent else float("nan"),
        ber=errors / bits if bits else float("nan"),
        elapsed=elapsed,
        seed=setup.seed,
        config_hash=config_hash,
    )
    diag = {k: v.messages for k, v in sinks.items() if k in rx.diagnostics}
    return LinkResult(report, records, received, diag, stats)


def ber_sweep(setup: LinkSetup, ebn0_db, bits_per_point: int = 100_000,
              config_hash: str = "") -> list[tuple[float, RunReport]]:
    """Run one link per Eb/N0 point with enough bursts for ``bits_per_point``
    payload bits."""
    if bits_per_point < 100_000:
        raise ConfigError("bits_per_point must be >= 1e5")
    cfg = setup.config
    bursts = -(-int(bits_per_point) // cfg.payload_bits)
    out = []
    for e in ebn0_db:
        chan = replace(setup.channel, noise_voltage=noise_voltage_for_ebn0(e, cfg.sps, bits_per_symbol(setup.modem)))
        res = run_link(replace(setup, channel=chan, bursts=bursts, diagnostics=False), config_hash)
        out.append((float(e), res.report))
    return out


__all__ = [
    "BurstRecord", "bits_per_symbol", "LinkResult", "LinkSetup", "RunReport", "ber_sweep", "build_link",
    "noise_voltage_for_ebn0", "run_link", "source_length",
]
