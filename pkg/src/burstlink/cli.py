"""``burstlink`` command line: loopback runs, BER sweeps, IQ files and UDP PDUs.

Exit codes: 0 success, 2 configuration error, 3 runtime error, 4 a
``--assert-*`` threshold was missed.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import socket
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .configfile import LinkConfig, config_hash, load_config
from .dsp import ChannelParams, Throttle, channel_block
from .errors import BurstlinkError, ConfigError
from .io import IqFileSink, IqFileSource, encode_pdu, receive_pdus
from .modems import build_fsk_rx, build_fsk_tx, build_psk_rx, build_psk_tx
from .phy.framing import bits_to_int, int_to_bits
from .phy.scheduler import SEQ_BITS
from .runtime import PDU, Flowgraph, MessageSink, MessageSource
from .sim import LinkResult, LinkSetup, ber_sweep, bits_per_symbol, noise_voltage_for_ebn0, run_link

log = logging.getLogger("burstlink")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_ASSERT = 0, 2, 3, 4
LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


class AssertionFailed(Exception):
    pass


# -- CSV -------------------------------------------------------------------------

def _num(v) -> str:
    """Full-precision, platform-stable text for a number."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path: Path, header: list[str], rows, chash: str, seed: int) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(f"# config_hash={chash} seed={seed}\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([c if isinstance(c, str) else _num(c) for c in row])


def _stage_rows(stage: str, pdus: list[PDU]):
    for p in pdus:
        t = p.meta.get("event_time", -1)
        x = np.asarray(p.payload)
        for i, v in enumerate(x):
            yield stage, t, i, float(np.real(v)), float(np.imag(v))


def write_link_outputs(out: Path, res: LinkResult, chash: str, seed: int) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for stage in sorted(res.diagnostics):
        path = out / f"{stage}.csv"
        write_csv(path, ["stage", "event_time", "index", "value", "value_imag"],
                  _stage_rows(stage, res.diagnostics[stage]), chash, seed)
        written.append(path)
    path = out / "bursts.csv"
    write_csv(path, ["seq", "tx_time", "detected", "received", "crc_ok", "bit_errors", "bits"],
              ((b.seq, b.tx_time, b.detected, b.received, b.crc_ok, b.bit_errors, b.bits) for b in res.bursts),
              chash, seed)
    written.append(path)
    return written


# -- argument handling -------------------------------------------------------------

def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.replace(",", " ").split()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a list of numbers: {text!r}") from exc


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _common(p: argparse.ArgumentParser, channel: bool = True) -> None:
    p.add_argument("--config", type=Path, help="key=value configuration file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--modem", choices=("psk", "fsk"), default="psk")
    p.add_argument("--rate-limit", type=float, default=None, metavar="SPS",
                   help="pace the sample stream (samples/s) or datagrams (PDUs/s)")
    if channel:
        p.add_argument("--channel.cfo", dest="channel_cfo", type=float, default=None, metavar="F")
        p.add_argument("--channel.noise-voltage", dest="channel_noise_voltage", type=float, default=None,
                       metavar="S")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="burstlink", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("loopback", help="TX -> channel -> RX with burst accounting")
    _common(p)
    p.add_argument("--bursts", type=int, default=100)
    p.add_argument("--ebn0", type=_float_list, default=None, metavar="DB",
                   help="set the noise voltage from a single Eb/N0 value")
    p.add_argument("--genie-sync", action="store_true")
    p.add_argument("--out", type=Path, default=None, metavar="DIR")
    p.add_argument("--assert-ber", type=float, default=None, metavar="X")

    p = sub.add_parser("ber-sweep", help="BER/PER against Eb/N0")
    _common(p)
    p.add_argument("--ebn0", type=_float_list, default=[0.0, 3.0, 6.0], metavar="LIST")
    p.add_argument("--bits", type=float, default=1e5, help="payload bits per point (>= 1e5)")
    p.add_argument("--genie-sync", action="store_true")
    p.add_argument("--out", type=Path, default=None, metavar="DIR")
    p.add_argument("--assert-ber", type=float, default=None, metavar="X")

    p = sub.add_parser("iq", help="record or play raw float32 IQ files")
    iq = p.add_subparsers(dest="action", required=True, parser_class=_Parser)
    r = iq.add_parser("record", help="modulate test bursts into a file")
    _common(r)
    r.add_argument("path", type=Path)
    r.add_argument("--bursts", type=int, default=10)
    r.add_argument("--format", choices=("cf32",), default="cf32")
    r = iq.add_parser("play", help="demodulate a file")
    _common(r, channel=False)
    r.add_argument("path", type=Path)
    r.add_argument("--format", choices=("cf32",), default="cf32")

    p = sub.add_parser("udp", help="PDU datagrams")
    udp = p.add_subparsers(dest="action", required=True, parser_class=_Parser)
    s = udp.add_parser("pdu-send", help="send test PDUs, or PDUs decoded from --iq")
    _common(s, channel=False)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, required=True)
    s.add_argument("--bursts", type=int, default=10)
    s.add_argument("--iq", type=Path, default=None, help="decode this IQ file and send its PDUs")
    s = udp.add_parser("pdu-recv", help="receive PDUs, optionally modulating them to --iq-out")
    _common(s, channel=False)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, required=True)
    s.add_argument("--count", type=int, default=None)
    s.add_argument("--timeout", type=float, default=2.0)
    s.add_argument("--iq-out", type=Path, default=None)
    return ap


def _link_config(args) -> LinkConfig:
    return load_config(args.config) if args.config else LinkConfig()


def _channel(args, lc: LinkConfig) -> tuple[ChannelParams, float]:
    vals = lc.channel_values()
    spread = vals.pop("cfo_spread", 0.0)
    if getattr(args, "channel_cfo", None) is not None:
        vals["cfo"] = args.channel_cfo
    if getattr(args, "channel_noise_voltage", None) is not None:
        vals["noise_voltage"] = args.channel_noise_voltage
    try:
        return ChannelParams(**vals, seed=args.seed), spread
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _emit(obj) -> None:
    clean = {k: None if isinstance(v, float) and v != v else v for k, v in obj.items()}
    print(json.dumps(clean, sort_keys=True))


# -- commands ----------------------------------------------------------------------

def cmd_loopback(args) -> int:
    lc = _link_config(args)
    cfg = lc.burst_config(args.modem)
    chan, spread = _channel(args, lc)
    if args.ebn0 is not None:
        if len(args.ebn0) != 1:
            raise ConfigError("loopback takes a single --ebn0 value")
        chan = replace(chan, noise_voltage=noise_voltage_for_ebn0(args.ebn0[0], cfg.sps, bits_per_symbol(args.modem)))
    setup = LinkSetup(args.modem, cfg, chan, args.bursts, args.seed, spread, args.genie_sync,
                      diagnostics=args.out is not None and not args.genie_sync, rate_limit=args.rate_limit)
    chash = config_hash(cfg, chan, modem=args.modem, bursts=args.bursts, cfo_spread=spread,
                        genie=args.genie_sync)
    res = run_link(setup, chash)
    if args.out is not None:
        for p in write_link_outputs(args.out, res, chash, args.seed):
            log.info("wrote %s", p)
    _emit(res.report.as_dict())
    if args.assert_ber is not None and not res.report.ber <= args.assert_ber:
        raise AssertionFailed(f"ber {res.report.ber} exceeds {args.assert_ber}")
    return EXIT_OK


def cmd_ber_sweep(args) -> int:
    lc = _link_config(args)
    cfg = lc.burst_config(args.modem)
    chan, spread = _channel(args, lc)
    setup = LinkSetup(args.modem, cfg, chan, 1, args.seed, spread, args.genie_sync)
    chash = config_hash(cfg, chan, modem=args.modem, bits=int(args.bits), ebn0=tuple(args.ebn0),
                        cfo_spread=spread, genie=args.genie_sync)
    points = ber_sweep(setup, args.ebn0, int(args.bits), chash)
    for e, r in points:
        _emit({"ebn0_db": e, **r.as_dict()})
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        write_csv(args.out / "ber_sweep.csv", ["ebn0_db", "ber", "per", "bursts", "bits"],
                  ((e, r.ber, r.per, r.bursts_tx, r.bits_compared) for e, r in points), chash, args.seed)
    if args.assert_ber is not None:
        bad = [(e, r.ber) for e, r in points if not r.ber <= args.assert_ber]
        if bad:
            raise AssertionFailed(f"points above ber {args.assert_ber}: {bad}")
    return EXIT_OK


def _test_pdus(n: int, payload_bits: int, seed: int) -> list[PDU]:
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        body = rng.integers(0, 2, payload_bits - SEQ_BITS, dtype=np.uint8)
        out.append(PDU({"seq": k}, np.concatenate([int_to_bits(k, SEQ_BITS), body]), "bit"))
    return out


def _modulate_to_file(args, cfg, pdus: list[PDU], path: Path, chan: ChannelParams | None) -> dict:
    """Run the transmitter over ``pdus`` and write its output to ``path``."""
    g = Flowgraph(seed=args.seed)
    if args.modem == "psk":
        burst = -(-cfg.psk_burst_samples(cfg.payload_bits) // cfg.sps)
        build = build_psk_tx
    else:
        burst = cfg.fsk_burst_samples(cfg.payload_bits)
        build = build_fsk_tx
    longest = max((len(p.payload) for p in pdus), default=0)
    if longest > cfg.max_payload_bits:
        raise ConfigError(f"PDU of {longest} bits exceeds max_payload_bits={cfg.max_payload_bits}")
    span = -(-max(burst, 1) // cfg.slot_len) * cfg.slot_len
    total = len(pdus) * span + 2 * (cfg.now_period + cfg.slot_len + cfg.min_lead)
    tx = build(cfg, g, total=total)
    src = MessageSource(pdus, name="pdu_source")
    g.add(src)
    g.connect_message(src, "out", *tx.taps["pdu_in"])
    head, port = tx.taps["iq_out"]
    if chan is not None:
        ch = channel_block(chan, "channel")
        g.add(ch)
        g.connect_stream(head, port, ch, 0)
        head, port = ch, 0
    sink = IqFileSink(path, name="iq_file_sink")
    g.add(sink)
    g.connect_stream(head, port, sink, 0)
    stats = g.run()
    return {"path": str(path), "pdus": len(pdus), "samples": stats.counters["iq_file_sink"].get("samples", 0)}


def _demodulate_file(args, cfg, path: Path, extra_sink=None) -> tuple[list[PDU], dict]:
    g = Flowgraph(seed=args.seed)
    src = IqFileSource(path, name="iq_file_source")
    rx = (build_psk_rx if args.modem == "psk" else build_fsk_rx)(cfg, g)
    g.add(src)
    head, port = src, 0
    if args.rate_limit:
        thr = Throttle("complex", args.rate_limit, name="throttle")
        g.add(thr)
        g.connect_stream(head, port, thr, 0)
        head, port = thr, 0
    g.connect_stream(head, port, *rx.taps["iq_in"])
    sink = MessageSink(name="collect.pdu_out")
    g.connect_message(*rx.taps["pdu_out"], sink, "in")
    if extra_sink is not None:
        g.add(extra_sink)
        g.connect_message(*rx.taps["pdu_out"], extra_sink, "in")
    g.run()
    summary = {
        "samples": len(src.items),
        "bursts_detected": len(rx.blocks["es_sink"].log),
        "bursts_crc_ok": sum(bool(p.meta.get("crc_ok")) for p in sink.messages),
        "pdus": len(sink.messages),
    }
    return sink.messages, summary


def cmd_iq(args) -> int:
    lc = _link_config(args)
    cfg = lc.burst_config(args.modem)
    if args.action == "record":
        chan, _ = _channel(args, lc)
        pdus = _test_pdus(args.bursts, cfg.payload_bits, args.seed)
        _emit(_modulate_to_file(args, cfg, pdus, args.path, chan))
        return EXIT_OK
    pdus, summary = _demodulate_file(args, cfg, args.path)
    summary["seq_ok"] = [bits_to_int(p.payload[:SEQ_BITS])
                         for p in pdus if p.meta.get("crc_ok") and len(p.payload) >= SEQ_BITS]
    _emit(summary)
    return EXIT_OK


def cmd_udp(args) -> int:
    lc = _link_config(args)
    cfg = lc.burst_config(args.modem)
    if args.action == "pdu-send":
        if args.iq is not None:
            pdus, _ = _demodulate_file(args, cfg, args.iq)
            pdus = [p for p in pdus if p.meta.get("crc_ok")]
        else:
            pdus = _test_pdus(args.bursts, cfg.payload_bits, args.seed)
        sent = 0
        with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as sock:
            for k, p in enumerate(pdus):
                if args.rate_limit and k:
                    time.sleep(1.0 / args.rate_limit)
                sock.sendto(encode_pdu(p), (args.host, args.port))
                sent += 1
        _emit({"sent": sent})
        return EXIT_OK
    counters: dict = {}
    with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as sock:
        sock.bind((args.host, args.port))
        pdus = receive_pdus(sock, args.count, args.timeout, counters)
    summary = {"received": len(pdus), "malformed_datagram": counters.get("malformed_datagram", 0),
               "lengths": [len(p) for p in pdus]}
    if args.iq_out is not None:
        bits = [p for p in pdus if p.kind == "bit"]
        summary["iq"] = _modulate_to_file(args, cfg, bits, args.iq_out, None)
    _emit(summary)
    return EXIT_OK


COMMANDS = {"loopback": cmd_loopback, "ber-sweep": cmd_ber_sweep, "iq": cmd_iq, "udp": cmd_udp}


def _setup_logging() -> None:
    level = LOG_LEVELS.get(os.environ.get("BURSTLINK_LOG", "warn").lower(), logging.WARNING)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"burstlink: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AssertionFailed as exc:
        print(f"burstlink: assertion failed: {exc}", file=sys.stderr)
        return EXIT_ASSERT
    except (BurstlinkError, OSError, ValueError) as exc:
        print(f"burstlink: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
