"""Reference PSK and FSK burst modems plus the header-then-payload demo.

Each builder returns a :class:`ModemGraph` whose ``taps`` name the points
where traffic enters and leaves: message taps are ``(block, port_name)``
pairs, stream taps ``(block, port_index)``. Builders accept an existing
:class:`Flowgraph` so a transmitter, a channel and a receiver can share one
graph; block names are prefixed to keep them apart.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .dsp import (
    ChannelParams,
    FirBlock,
    GatedVco,
    InterpFirBlock,
    SquelchedMetric,
    channel_block,
    correlator_normalize_block,
    design_rrc,
    power_envelope_block,
    quadrature_demod_block,
    segmented_correlator_block,
    windowed_variance_block,
)
from .errors import NoPeak, TooShort
from .eventstream import EsSink, EsSource, TriggerBlock, TriggerMessage
from .phy.config import BurstConfig
from .phy.fec import fec_decode, fec_encode
from .phy.framing import (
    HEADER_BITS,
    deframe,
    derandomize,
    frame,
    pad_to_block,
    parse_header,
    prepend_preamble,
    randomize,
)
from .phy.mapping import fsk_map, qpsk_map, qpsk_soft_demap
from .phy.scheduler import BurstScheduler, PduStrobe
from .phy.sync import frame_align, matched_same, fsk_timing_and_slice, length_detect, synchronize
from .runtime import PDU, Block, Flowgraph, FunctionBlock, MessageMap

STAGE = "stage"


@dataclass
class ModemGraph:
    graph: Flowgraph
    config: BurstConfig
    taps: dict[str, tuple[Block, Any]]
    blocks: dict[str, Block] = field(default_factory=dict)
    log: list = field(default_factory=list)

    @property
    def diagnostics(self) -> list[str]:
        return sorted(k[len("diag."):] for k in self.taps if k.startswith("diag."))

    def tap(self, name: str) -> tuple[Block, Any]:
        return self.taps[name]

    def run(self, **kw):
        return self.graph.run(**kw)


# -- small helpers ---------------------------------------------------------------

def _identity_stream(kind: str, name: str) -> FunctionBlock:
    return FunctionBlock(lambda x: x, kind, kind, name)


def _identity_msg(name: str) -> MessageMap:
    return MessageMap(lambda m: m, name)


def _chain(g: Flowgraph, *blocks: Block) -> None:
    for a, b in zip(blocks, blocks[1:]):
        g.connect_message(a, "out", b, "in")


def _stage(prefix: str, name: str, fn: Callable[[PDU], PDU | None]) -> MessageMap:
    return MessageMap(fn, prefix + name)


class DiagTap(MessageMap):
    """Observer that republishes a reduced view of a stage's output with a
    stage label. Taps never feed back into the data path."""

    def __init__(self, stage: str, kind: str, view: Callable[[PDU], Any], name=None):
        self.stage = stage
        self.kind = kind

        def fn(pdu: PDU) -> PDU:
            meta = {k: v for k, v in pdu.meta.items() if not isinstance(v, np.ndarray)}
            meta[STAGE] = stage
            return PDU(meta, np.asarray(view(pdu)), kind)

        super().__init__(fn, name or f"diag.{stage}")


def _add_diag(g: Flowgraph, modem_taps: dict, src: Block, port: str, stage: str, kind: str,
              view: Callable[[PDU], Any], prefix: str) -> None:
    tap = DiagTap(stage, kind, view, prefix + "diag." + stage)
    g.connect_message(src, port, tap, "in")
    modem_taps["diag." + stage] = (tap, "out")


def _psk_lookback(cfg: BurstConfig) -> int:
    """Samples from the earliest possible trigger back to the burst start."""
    corr_span = (cfg.preamble_len // 2 - 1) * cfg.sps + 1
    return 2 * cfg.filter_delay + corr_span - 1 + cfg.extract_guard


def psk_detection_params(cfg: BurstConfig) -> dict:
    lookback = _psk_lookback(cfg)
    holdoff = max(1, cfg.psk_burst_samples(0) - lookback)
    return {
        "lookback": lookback,
        "holdoff": holdoff,
        "event_length": lookback + cfg.psk_max_burst(),
        "search_len": lookback + cfg.filter_delay + cfg.extract_guard,
    }


def fsk_detection_params(cfg: BurstConfig) -> dict:
    lookback = cfg.fsk_var_window + cfg.extract_guard
    return {
        "lookback": lookback,
        "holdoff": lookback,
        "event_length": lookback + cfg.fsk_max_burst(),
        "search_len": lookback + cfg.extract_guard,
    }


# -- PSK transmitter -------------------------------------------------------------

def psk_tx_stages(cfg: BurstConfig, keep_reference: bool = False) -> list[tuple[str, Callable]]:
    codec = cfg.codec()

    def framer(p: PDU):
        return p.replace(payload=frame(p.payload), kind="bit", payload_len=len(p.payload))

    def padder(p: PDU):
        out = pad_to_block(p.payload, cfg.fec_k)
        return p.replace(payload=out, ref_bits=out) if keep_reference else p.replace(payload=out)

    def encoder(p: PDU):
        return p.replace(payload=fec_encode(p.payload, codec))

    def preamble(p: PDU):
        bits = prepend_preamble(p.payload, cfg.preamble_bits)
        if len(bits) % 2:
            bits = np.concatenate([bits, np.zeros(1, dtype=np.uint8)])
        return p.replace(payload=bits)

    def mapper(p: PDU):
        return p.replace(payload=qpsk_map(p.payload), kind="complex")

    return [
        ("frame", framer),
        ("pad", padder),
        ("randomize", lambda p: p.replace(payload=randomize(p.payload))),
        ("fec_encode", encoder),
        ("preamble", preamble),
        ("qpsk_map", mapper),
    ]


def build_psk_tx(config: BurstConfig, graph: Flowgraph | None = None, *, total: int | None = None,
                 strobe: int | None = None, keep_reference: bool = False, prefix: str = "tx.") -> ModemGraph:
    """pdu_in -> framing chain -> slotted scheduler <-> es_source -> RRC
    interpolator -> iq_out.

    ``total`` bounds the source in symbol-rate items; ``strobe`` attaches a
    periodic random-PDU generator that emits that many PDUs.
    """
    g = graph or Flowgraph()
    cfg = config
    pdu_in = _identity_msg(prefix + "pdu_in")
    stages = [_stage(prefix, n, f) for n, f in psk_tx_stages(cfg, keep_reference)]
    sched = BurstScheduler(cfg.slot_len, cfg.min_lead + cfg.now_period, prefix + "burst_schedule")
    src = EsSource("complex", cfg.min_lead, cfg.now_period, total=total, name=prefix + "es_source")
    interp = InterpFirBlock(cfg.rrc().scaled(math.sqrt(cfg.sps)), cfg.sps, name=prefix + "rrc_interp")
    iq_out = _identity_stream("complex", prefix + "iq_out")
    g.add(pdu_in, *stages, sched, src, interp, iq_out)
    _chain(g, pdu_in, *stages)
    g.connect_message(stages[-1], "out", sched, "bursts")
    g.connect_message(src, "now", sched, "now")
    g.connect_message(sched, "events", src, "events")
    g.connect(src, interp)
    g.connect(interp, iq_out)
    blocks = {b.name[len(prefix):]: b for b in [pdu_in, *stages, sched, src, interp, iq_out]}
    taps = {"pdu_in": (pdu_in, "in"), "iq_out": (iq_out, 0), "events": (sched, "events")}
    m = ModemGraph(g, cfg, taps, blocks)
    if strobe:
        attach_strobe(m, strobe, prefix)
    return m


def attach_strobe(m: ModemGraph, count: int | None, prefix: str = "tx.") -> PduStrobe:
    cfg = m.config
    strobe = PduStrobe(cfg.strobe_period, cfg.payload_bits, count, lookahead=cfg.now_period,
                       name=prefix + "pdu_strobe")
    src = m.blocks["es_source"]
    pdu_in = m.taps["pdu_in"][0]
    m.graph.add(strobe)
    m.graph.connect_message(src, "now", strobe, "now")
    m.graph.connect_message(strobe, "pdus", pdu_in, "in")
    m.blocks["pdu_strobe"] = strobe
    return strobe


# -- PSK receiver ------------------------------------------------------------

def preamble_waveform(cfg: BurstConfig) -> np.ndarray:
    """Preamble symbols zero-stuffed to the sample rate."""
    ref = np.zeros((cfg.preamble_len // 2 - 1) * cfg.sps + 1, dtype=np.complex128)
    ref[:: cfg.sps] = cfg.preamble_symbols
    return ref


def psk_rx_stages(cfg: BurstConfig, search_len: int | None = None) -> list[tuple[str, Callable]]:
    codec = cfg.codec()

    def trim(p: PDU):
        x, meta = length_detect(p.payload, cfg)
        return p.replace(payload=x, **meta)

    def sync(p: PDU):
        z, est = synchronize(p.payload, cfg, search_len=search_len)
        return p.replace(payload=z, **est.as_meta())

    def demap(p: PDU):
        return p.replace(payload=qpsk_soft_demap(p.payload, p.meta["noise_var"]), kind="soft")

    def deframer(p: PDU):
        payload, meta = deframe(p.payload)
        return p.replace(payload=payload, **meta)

    return [
        ("length_detect", trim),
        ("synchronize", sync),
        ("soft_demap", demap),
        ("frame_align", lambda p: p.replace(payload=frame_align(p.payload, cfg))),
        ("fec_decode", lambda p: p.replace(payload=fec_decode(p.payload, codec), kind="bit")),
        ("derandomize", lambda p: p.replace(payload=derandomize(p.payload))),
        ("deframe", deframer),
    ]


def _psk_detector(g: Flowgraph, cfg: BurstConfig, iq_in: Block, prefix: str, event_length: int):
    det = psk_detection_params(cfg)
    mf = FirBlock(cfg.rrc(), name=prefix + "rrc_matched")
    corr = segmented_correlator_block(preamble_waveform(cfg), cfg.detect_segments,
                                      name=prefix + "preamble_correlator")
    norm = correlator_normalize_block(cfg.detect_window, name=prefix + "correlator_normalize")
    trig = TriggerBlock(cfg.detect_threshold, det["holdoff"], event_length, True,
                        -det["lookback"], name=prefix + "trigger_rising_edge", warmup=cfg.detect_window)
    sink = EsSink("complex", cfg.history_depth, name=prefix + "es_sink")
    g.add(mf, corr, norm, trig, sink)
    g.connect(iq_in, mf)
    g.connect(mf, corr)
    g.connect(corr, norm)
    g.connect(norm, trig)
    g.connect(iq_in, sink)
    g.connect_message(trig, "trigger", sink, "trigger")
    return [mf, corr, norm, trig, sink]


def _sync_view(p: PDU):
    return np.array([p.meta["cfo"], p.meta["timing"], abs(p.meta["eq_tap"]), np.angle(p.meta["eq_tap"]),
                     p.meta["corr_peak"], p.meta["noise_var"], p.meta["preamble_index"]])


def build_psk_rx(config: BurstConfig, graph: Flowgraph | None = None, *, diagnostics: bool = False,
                 prefix: str = "rx.") -> ModemGraph:
    """iq_in -> matched filter -> preamble correlator -> normalize -> rising
    trigger -> es_sink -> length_detect -> synchronize -> demap ->
    frame_align -> fec_decode -> derandomize -> deframe -> pdu_out."""
    g = graph or Flowgraph()
    cfg = config
    det = psk_detection_params(cfg)
    iq_in = _identity_stream("complex", prefix + "iq_in")
    g.add(iq_in)
    front = _psk_detector(g, cfg, iq_in, prefix, det["event_length"])
    sink = front[-1]
    stages = [_stage(prefix, n, f) for n, f in psk_rx_stages(cfg, det["search_len"])]
    pdu_out = _identity_msg(prefix + "pdu_out")
    g.add(*stages, pdu_out)
    g.connect_message(sink, "events", stages[0], "in")
    _chain(g, *stages, pdu_out)
    blocks = {b.name[len(prefix):]: b for b in [iq_in, *front, *stages, pdu_out]}
    taps = {"iq_in": (iq_in, 0), "pdu_out": (pdu_out, "out")}
    if diagnostics:
        trig = front[3]
        by = {b.name[len(prefix):]: b for b in stages}
        _add_diag_trigger(g, taps, trig, prefix)
        _add_diag(g, taps, sink, "events", "extraction", "complex", lambda p: p.payload, prefix)
        _add_diag(g, taps, by["synchronize"], "out", "sync", "float", _sync_view, prefix)
        _add_diag(g, taps, by["soft_demap"], "out", "demap", "soft", lambda p: p.payload, prefix)
    return ModemGraph(g, cfg, taps, blocks)


def _add_diag_trigger(g: Flowgraph, taps: dict, trig: Block, prefix: str) -> None:
    def view(t: TriggerMessage) -> PDU:
        meta = dict(t.meta, event_time=t.time, event_length=t.length)
        meta[STAGE] = "detect"
        return PDU(meta, np.array([t.meta.get("metric", np.nan)]), "float")

    tap = MessageMap(view, prefix + "diag.detect")
    g.connect_message(trig, "trigger", tap, "in")
    taps["diag.detect"] = (tap, "out")


# -- genie-synchronized PSK receiver ---------------------------------------

class BerCounter(MessageMap):
    """Compares decoded frame bits against ``ref_bits`` carried in meta."""

    def __init__(self, name=None):
        super().__init__(self._check, name or "ber_counter")
        self.bits = 0
        self.errors = 0

    def _check(self, p: PDU) -> PDU:
        ref = np.asarray(p.meta["ref_bits"])
        got = np.asarray(p.payload)[: len(ref)]
        n = min(len(ref), len(got))
        e = int(np.count_nonzero(ref[:n] != got[:n])) + (len(ref) - n)
        self.bits += len(ref)
        self.errors += e
        self.count("bits", len(ref))
        self.count("bit_errors", e)
        return p

    @property
    def ber(self) -> float:
        return self.errors / self.bits if self.bits else float("nan")


def build_psk_genie_rx(config: BurstConfig, tx: ModemGraph, *, noise_var: float | None = None,
                       delay: int = 0, prefix: str = "genie.") -> ModemGraph:
    """Receiver that takes burst timing from the transmitter's scheduler
    instead of detecting it. Symbols are read straight off the matched
    filter at the known instants, so only the demapper and decoder are
    exercised. The transmitter must have been built with
    ``keep_reference=True``. ``delay`` is any integer channel delay."""
    g = tx.graph
    cfg = config
    sps, d = cfg.sps, cfg.filter_delay
    codec = cfg.codec()
    iq_in = _identity_stream("complex", prefix + "iq_in")
    mf = FirBlock(cfg.rrc(), name=prefix + "rrc_matched")
    sink = EsSink("complex", cfg.history_depth, name=prefix + "es_sink")

    def trigger(ev) -> TriggerMessage:
        return TriggerMessage(ev.time * sps + 2 * d + delay, (ev.length - 1) * sps + 1, dict(ev.meta))

    genie = MessageMap(trigger, prefix + "genie_trigger")

    def gsync(p: PDU) -> PDU:
        r = np.asarray(p.payload)[::sps] / math.sqrt(sps)
        nv = noise_var
        if nv is None:
            pre = cfg.preamble_symbols
            nv = max(float(np.mean(np.abs(r[: len(pre)] - pre) ** 2)), 1e-9)
        return p.replace(payload=r, noise_var=nv)

    stages = [
        _stage(prefix, "genie_sync", gsync),
        _stage(prefix, "soft_demap", lambda p: p.replace(payload=qpsk_soft_demap(p.payload, p.meta["noise_var"]), kind="soft")),
        _stage(prefix, "frame_align", lambda p: p.replace(payload=frame_align(p.payload, cfg))),
        _stage(prefix, "fec_decode", lambda p: p.replace(payload=fec_decode(p.payload, codec), kind="bit")),
        _stage(prefix, "derandomize", lambda p: p.replace(payload=derandomize(p.payload))),
    ]
    ber = BerCounter(prefix + "ber")

    def deframer(p: PDU):
        payload, meta = deframe(p.payload)
        return p.replace(payload=payload, **meta)

    dfr = _stage(prefix, "deframe", deframer)
    pdu_out = _identity_msg(prefix + "pdu_out")
    g.add(iq_in, mf, sink, genie, *stages, ber, dfr, pdu_out)
    g.connect(iq_in, mf)
    g.connect(mf, sink)
    g.connect_message(tx.taps["events"][0], "events", genie, "in")
    g.connect_message(genie, "out", sink, "trigger")
    g.connect_message(sink, "events", stages[0], "in")
    _chain(g, *stages, ber, dfr, pdu_out)
    blocks = {b.name[len(prefix):]: b for b in [iq_in, mf, sink, genie, *stages, ber, dfr, pdu_out]}
    return ModemGraph(g, cfg, {"iq_in": (iq_in, 0), "pdu_out": (pdu_out, "out")}, blocks)


# -- FSK -------------------------------------------------------------------

def build_fsk_tx(config: BurstConfig, graph: Flowgraph | None = None, *, total: int | None = None,
                 strobe: int | None = None, prefix: str = "tx.") -> ModemGraph:
    """pdu_in -> frame -> pad -> (randomize) -> fec_encode -> preamble ->
    fsk_map -> scheduler <-> es_source -> gated VCO -> iq_out.

    Scheduling runs at the sample rate, so ``total``, ``slot_len`` and
    ``min_lead`` are in samples here."""
    g = graph or Flowgraph()
    cfg = config
    codec = cfg.codec()
    steps: list[tuple[str, Callable]] = [
        ("frame", lambda p: p.replace(payload=frame(p.payload), kind="bit", payload_len=len(p.payload))),
        ("pad", lambda p: p.replace(payload=pad_to_block(p.payload, cfg.fec_k))),
    ]
    if cfg.fsk_randomize:
        steps.append(("randomize", lambda p: p.replace(payload=randomize(p.payload))))
    steps += [
        ("fec_encode", lambda p: p.replace(payload=fec_encode(p.payload, codec))),
        ("preamble", lambda p: p.replace(payload=prepend_preamble(p.payload, cfg.preamble_bits))),
        ("fsk_map", lambda p: p.replace(payload=fsk_map(p.payload, cfg.sps), kind="float")),
    ]
    pdu_in = _identity_msg(prefix + "pdu_in")
    stages = [_stage(prefix, n, f) for n, f in steps]
    sched = BurstScheduler(cfg.slot_len, cfg.min_lead + cfg.now_period, prefix + "burst_schedule")
    src = EsSource("float", cfg.min_lead, cfg.now_period, total=total, name=prefix + "es_source")
    vco = GatedVco(cfg.fsk_sensitivity, name=prefix + "vco")
    iq_out = _identity_stream("complex", prefix + "iq_out")
    g.add(pdu_in, *stages, sched, src, vco, iq_out)
    _chain(g, pdu_in, *stages)
    g.connect_message(stages[-1], "out", sched, "bursts")
    g.connect_message(src, "now", sched, "now")
    g.connect_message(sched, "events", src, "events")
    g.connect(src, vco)
    g.connect(vco, iq_out)
    blocks = {b.name[len(prefix):]: b for b in [pdu_in, *stages, sched, src, vco, iq_out]}
    m = ModemGraph(g, cfg, {"pdu_in": (pdu_in, "in"), "iq_out": (iq_out, 0), "events": (sched, "events")}, blocks)
    if strobe:
        attach_strobe(m, strobe, prefix)
    return m


# Metric substituted where the input is silent, so that a burst rising out
# of digital silence still produces a falling edge.
SQUELCH_FILL = 1e6


def build_fsk_rx(config: BurstConfig, graph: Flowgraph | None = None, *, diagnostics: bool = False,
                 prefix: str = "rx.") -> ModemGraph:
    """iq_in -> quadrature demod -> windowed variance (squelched) ->
    trigger_below -> es_sink over the demod stream -> timing and slicing ->
    frame_align -> fec_decode -> (derandomize) -> deframe -> pdu_out."""
    g = graph or Flowgraph()
    cfg = config
    codec = cfg.codec()
    det = fsk_detection_params(cfg)
    iq_in = _identity_stream("complex", prefix + "iq_in")
    demod = quadrature_demod_block(1.0 / cfg.fsk_sensitivity, name=prefix + "quadrature_demod")
    var = windowed_variance_block(cfg.fsk_var_window, name=prefix + "windowed_variance")
    power = power_envelope_block(cfg.fsk_var_window, name=prefix + "power_envelope")
    squelch = SquelchedMetric(cfg.fsk_squelch, SQUELCH_FILL, name=prefix + "squelch")
    trig = TriggerBlock(cfg.fsk_var_threshold, det["holdoff"], det["event_length"], False,
                        -det["lookback"], name=prefix + "trigger_below", warmup=cfg.fsk_var_window)
    sink = EsSink("float", cfg.history_depth, name=prefix + "es_sink")
    g.add(iq_in, demod, var, power, squelch, trig, sink)
    g.connect(iq_in, demod)
    g.connect(demod, var)
    g.connect(iq_in, power)
    g.connect_stream(var, 0, squelch, 0)
    g.connect_stream(power, 0, squelch, 1)
    g.connect(squelch, trig)
    g.connect(demod, sink)
    g.connect_message(trig, "trigger", sink, "trigger")

    def slicer(p: PDU):
        bits, meta = fsk_timing_and_slice(p.payload, cfg, search_len=det["search_len"])
        llr = meta.pop("llr")
        return p.replace(payload=llr, kind="soft", **meta)

    def deframer(p: PDU):
        payload, meta = deframe(p.payload)
        return p.replace(payload=payload, **meta)

    steps: list[tuple[str, Callable]] = [
        ("timing_and_slice", slicer),
        ("frame_align", lambda p: p.replace(payload=frame_align(p.payload, cfg))),
        ("fec_decode", lambda p: p.replace(payload=fec_decode(p.payload, codec), kind="bit")),
    ]
    if cfg.fsk_randomize:
        steps.append(("derandomize", lambda p: p.replace(payload=derandomize(p.payload))))
    steps.append(("deframe", deframer))
    stages = [_stage(prefix, n, f) for n, f in steps]
    pdu_out = _identity_msg(prefix + "pdu_out")
    g.add(*stages, pdu_out)
    g.connect_message(sink, "events", stages[0], "in")
    _chain(g, *stages, pdu_out)
    blocks = {b.name[len(prefix):]: b for b in [iq_in, demod, var, power, squelch, trig, sink, *stages, pdu_out]}
    taps = {"iq_in": (iq_in, 0), "pdu_out": (pdu_out, "out")}
    if diagnostics:
        _add_diag_trigger(g, taps, trig, prefix)
        _add_diag(g, taps, sink, "events", "extraction", "float", lambda p: p.payload, prefix)
        _add_diag(g, taps, stages[0], "out", "sync", "float",
                  lambda p: np.array([p.meta["start"], p.meta["score"]]), prefix)
        _add_diag(g, taps, stages[0], "out", "demap", "soft", lambda p: p.payload, prefix)
    return ModemGraph(g, cfg, taps, blocks)


# -- channel / loopback ------------------------------------------------------

def connect_link(tx: ModemGraph, rx: ModemGraph, params: ChannelParams | None = None,
                 name: str = "channel") -> Block | None:
    """Wire ``tx`` iq_out to ``rx`` iq_in, optionally through a channel."""
    g = tx.graph
    if rx.graph is not g:
        raise ValueError("transmitter and receiver must share a flowgraph")
    out_b, out_p = tx.taps["iq_out"]
    in_b, in_p = rx.taps["iq_in"]
    if params is None:
        g.connect_stream(out_b, out_p, in_b, in_p)
        return None
    ch = channel_block(params, name)
    g.add(ch)
    g.connect_stream(out_b, out_p, ch, 0)
    g.connect_stream(ch, 0, in_b, in_p)
    return ch


# -- header-then-payload demo ---------------------------------------------------

def _acm_layout(cfg: BurstConfig) -> dict:
    hb = -(-HEADER_BITS // cfg.fec_k)
    header_bits = cfg.preamble_len + hb * cfg.fec_n
    return {"header_blocks": hb, "header_symbols": -(-header_bits // 2)}


def acm_payload_span(cfg: BurstConfig, payload_symbols: int) -> int:
    """Samples needed to matched-filter ``payload_symbols`` symbols."""
    return (max(payload_symbols, 1) - 1) * cfg.sps + 2 * cfg.filter_delay + 1


class AcmHeaderDecoder(Block):
    """Decodes the header of a header-only extraction and, when the header
    checks out, asks the sink for the rest of the burst."""

    def __init__(self, cfg: BurstConfig, search_len: int, log: list, name=None):
        super().__init__(name or "acm_header")
        self.cfg = cfg
        self.search_len = search_len
        self.layout = _acm_layout(cfg)
        self.log = log
        self.register_message_input("in", self._on_header)
        self.register_message_output("trigger")

    def _on_header(self, p: PDU):
        cfg = self.cfg
        t1 = int(p.meta["event_time"])
        try:
            z, est = synchronize(p.payload, cfg, search_len=self.search_len)
        except (NoPeak, TooShort):
            self.count("no_peak")
            return
        h = self.layout["header_symbols"]
        if len(z) < h:
            self.count("too_short")
            return
        llr = qpsk_soft_demap(z[:h], est.noise_var)[cfg.preamble_len:]
        hb_bits = self.layout["header_blocks"] * cfg.fec_n
        bits = derandomize(fec_decode(llr[:hb_bits], cfg.codec()))
        try:
            length = parse_header(bits)
        except Exception:  # noqa: BLE001 - header failure ends this burst
            self.count("header_crc_fail")
            self.log.append(("header_fail", t1))
            return
        if length > cfg.max_payload_bits:
            self.count("oversize_header")
            return
        total_symbols = -(-(cfg.preamble_len + cfg.coded_bits(length)) // 2)
        n_payload = total_symbols - h
        t2 = t1 + est.preamble_index + h * cfg.sps
        meta = {
            "acm_stage": "payload",
            "header_time": t1,
            "payload_len": length,
            "payload_symbols": n_payload,
            "header_llr": llr,
            **est.as_meta(),
        }
        self.count("payload_requested")
        self.log.append(("header", t1))
        self.publish("trigger", TriggerMessage(t2, acm_payload_span(cfg, n_payload), meta))


class AcmPayloadDemod(Block):
    """Demodulates a payload extraction with the parameters measured on its
    header. With ``hold`` set, payloads are parked until the graph stops,
    which shows header processing is not blocked behind them."""

    def __init__(self, cfg: BurstConfig, log: list, hold: bool = False, name=None):
        super().__init__(name or "acm_payload")
        self.cfg = cfg
        self.log = log
        self.hold = hold
        self._held: list[PDU] = []
        self.register_message_input("in", self._on_payload)
        self.register_message_output("out")

    def _on_payload(self, p: PDU):
        if self.hold:
            self._held.append(p)
        else:
            self._process(p)

    def stop(self):
        held, self._held = self._held, []
        for p in held:
            self._process(p)

    def _process(self, p: PDU):
        cfg, m = self.cfg, p.meta
        x = np.asarray(p.payload)
        n_rel = m["event_time"] - m["header_time"] + np.arange(len(x))
        xr = x * np.exp(-2j * np.pi * m["cfo"] * n_rel)
        h = design_rrc(cfg.sps, cfg.rrc_beta, cfg.rrc_span, offset=-m["timing"]).coefficients
        y = matched_same(xr, h)
        n = max(int(m["payload_symbols"]), 0)
        z = y[cfg.filter_delay :: cfg.sps][:n] / (np.sqrt(cfg.sps) * m["eq_tap"])
        llr = np.concatenate([m["header_llr"], qpsk_soft_demap(z, m["noise_var"])])
        need = cfg.coded_bits(int(m["payload_len"]))
        if len(llr) < need:
            self.count("too_short")
            return
        meta = {k: v for k, v in m.items() if k != "header_llr"}
        self.log.append(("payload", m["header_time"]))
        self.publish("out", PDU(meta, llr[:need], "soft"))


def build_acm_demo(config: BurstConfig, graph: Flowgraph | None = None, *, hold: bool = False,
                   prefix: str = "acm.") -> ModemGraph:
    """PSK receiver whose first extraction covers only preamble and header.

    The decoded header length drives a second trigger back into the same
    es_sink for the payload span, forming a message cycle. ``acm_log`` in
    the returned ``log`` records processing order."""
    g = graph or Flowgraph()
    cfg = config
    codec = cfg.codec()
    det = psk_detection_params(cfg)
    layout = _acm_layout(cfg)
    header_len = det["lookback"] + (layout["header_symbols"] - 1) * cfg.sps + 2 * cfg.filter_delay + 1 + cfg.extract_guard
    iq_in = _identity_stream("complex", prefix + "iq_in")
    g.add(iq_in)
    front = _psk_detector(g, cfg, iq_in, prefix, header_len)
    sink = front[-1]
    log: list = []
    is_payload = lambda p: p.meta.get("acm_stage") == "payload"  # noqa: E731
    to_header = MessageMap(lambda p: None if is_payload(p) else p, prefix + "route_header")
    to_payload = MessageMap(lambda p: p if is_payload(p) else None, prefix + "route_payload")
    header = AcmHeaderDecoder(cfg, det["search_len"], log, prefix + "header_decode")
    payload = AcmPayloadDemod(cfg, log, hold, prefix + "payload_demod")

    def deframer(p: PDU):
        out, meta = deframe(p.payload)
        return p.replace(payload=out, **meta)

    decode = [
        _stage(prefix, "fec_decode", lambda p: p.replace(payload=fec_decode(p.payload, codec), kind="bit")),
        _stage(prefix, "derandomize", lambda p: p.replace(payload=derandomize(p.payload))),
        _stage(prefix, "deframe", deframer),
    ]
    pdu_out = _identity_msg(prefix + "pdu_out")
    g.add(to_header, to_payload, header, payload, *decode, pdu_out)
    g.connect_message(sink, "events", to_header, "in")
    g.connect_message(sink, "events", to_payload, "in")
    g.connect_message(to_header, "out", header, "in")
    g.connect_message(header, "trigger", sink, "trigger")
    g.connect_message(to_payload, "out", payload, "in")
    g.connect_message(payload, "out", decode[0], "in")
    _chain(g, *decode, pdu_out)
    blocks = {b.name[len(prefix):]: b for b in [iq_in, *front, to_header, to_payload, header, payload, *decode, pdu_out]}
    return ModemGraph(g, cfg, {"iq_in": (iq_in, 0), "pdu_out": (pdu_out, "out")}, blocks, log)


__all__ = [
    "BerCounter", "DiagTap", "ModemGraph", "STAGE", "acm_payload_span", "attach_strobe",
    "build_acm_demo", "build_fsk_rx", "build_fsk_tx", "build_psk_genie_rx", "build_psk_rx",
    "build_psk_tx", "connect_link", "fsk_detection_params", "psk_detection_params",
    "psk_rx_stages", "psk_tx_stages",
]
