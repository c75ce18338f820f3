import json
import socket
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from burstlink.errors import MalformedDatagram, MalformedFile, OversizePdu
from burstlink.io import (
    MAGIC,
    IqFileSink,
    IqFileSource,
    UdpPduSink,
    decode_pdu,
    encode_pdu,
    read_iq,
    receive_pdus,
    write_iq,
)
from burstlink.runtime import PDU, Flowgraph, MessageSource, VectorSink, VectorSource


# -- IQ files ----------------------------------------------------------------

def test_iq_file_layout(tmp_path):
    p = tmp_path / "x.cf32"
    write_iq(p, [1 + 2j, -3.5 + 0.25j])
    assert p.read_bytes() == struct.pack("<4f", 1, 2, -3.5, 0.25)


@settings(max_examples=100)
@given(data=st.lists(st.tuples(st.floats(width=32, allow_nan=False), st.floats(width=32, allow_nan=False)),
                     max_size=500))
def test_iq_round_trip_bit_exact(tmp_path_factory, data):
    p = tmp_path_factory.mktemp("iq") / "x.cf32"
    x = np.array([complex(a, b) for a, b in data], dtype=np.complex64)
    write_iq(p, x)
    y = read_iq(p)
    assert y.dtype == np.complex64 and y.tobytes() == x.tobytes()


def test_iq_odd_word_count(tmp_path):
    p = tmp_path / "odd.cf32"
    p.write_bytes(struct.pack("<3f", 1, 2, 3))
    with pytest.raises(MalformedFile):
        read_iq(p)


def test_iq_partial_word(tmp_path):
    p = tmp_path / "bad.cf32"
    p.write_bytes(b"\x00" * 10)
    with pytest.raises(MalformedFile):
        read_iq(p)


def test_iq_empty_file_clean(tmp_path):
    p = tmp_path / "empty.cf32"
    p.write_bytes(b"")
    g = Flowgraph()
    sink = VectorSink("complex")
    g.connect(IqFileSource(p), sink)
    g.run()
    assert len(sink.data) == 0


def test_iq_blocks_round_trip(tmp_path):
    p = tmp_path / "g.cf32"
    x = (np.arange(10000) * (1 + 0.5j)).astype(np.complex64)
    g = Flowgraph()
    g.connect(VectorSource(x.astype(complex), "complex"), IqFileSink(p))
    g.run()
    g = Flowgraph()
    sink = VectorSink("complex")
    g.connect(IqFileSource(p, chunk=777), sink)
    g.run()
    assert sink.data.astype(np.complex64).tobytes() == x.tobytes()


# -- datagrams ------------------------------------------------------------------

pdu_meta = st.dictionaries(st.text(max_size=6).filter(lambda k: k != "__nbits"),
                           st.one_of(st.integers(-10**6, 10**6), st.text(max_size=10), st.booleans()),
                           max_size=4)


@settings(max_examples=200)
@given(meta=pdu_meta, n=st.integers(0, 1400 * 8), seed=st.integers(0, 2**32 - 1))
def test_bit_pdu_round_trip(meta, n, seed):
    p = PDU(meta, np.random.default_rng(seed).integers(0, 2, n, dtype=np.uint8), "bit")
    assert decode_pdu(encode_pdu(p)) == p


@settings(max_examples=100)
@given(meta=pdu_meta, data=st.binary(max_size=1400))
def test_byte_pdu_round_trip(meta, data):
    p = PDU(meta, np.frombuffer(data, np.uint8), "byte")
    assert decode_pdu(encode_pdu(p)) == p


def test_soft_and_complex_round_trip():
    s = PDU({"a": 1}, np.array([1.5, -2.25, 0.0], np.float32), "soft")
    got = decode_pdu(encode_pdu(s))
    assert got.kind == "soft" and np.array_equal(got.payload, s.payload)
    c = PDU({}, np.array([1 + 2j, -0.5j], np.complex64), "complex")
    got = decode_pdu(encode_pdu(c))
    assert got.kind == "complex" and np.array_equal(got.payload, c.payload)


def test_float_kind_travels_as_soft():
    got = decode_pdu(encode_pdu(PDU({}, np.array([0.5, 1.0]), "float")))
    assert got.kind == "soft"


def test_header_layout():
    d = encode_pdu(PDU({"k": 1}, np.array([1, 0, 1], np.uint8), "bit"))
    magic, ver, kind, res, n = struct.unpack(">IBBHI", d[:12])
    assert (magic, ver, kind, res, n) == (0x45535055, 1, 1, 0, 1)
    assert d[:4] == b"ESPU"
    assert json.loads(d[13:]) == {"__nbits": 3, "k": 1}


def test_oversize_rejected():
    with pytest.raises(OversizePdu):
        encode_pdu(PDU({}, np.zeros(65001, np.uint8), "byte"))


@pytest.mark.parametrize("mutate", [
    lambda d: d[:8],  # shorter than header
    lambda d: b"XXXX" + d[4:],  # bad magic
    lambda d: d[:4] + b"\x02" + d[5:],  # bad version
    lambda d: d[:8] + struct.pack(">I", 999) + d[12:],  # declared length > actual
    lambda d: d[:5] + b"\x09" + d[6:],  # unknown kind
    lambda d: d + b"{not json",
])
def test_malformed_datagrams(mutate):
    d = encode_pdu(PDU({"k": 1}, np.arange(16, dtype=np.uint8), "byte"))
    with pytest.raises(MalformedDatagram):
        decode_pdu(mutate(d))


def test_bit_count_must_match_length():
    d = bytearray(encode_pdu(PDU({}, np.ones(9, np.uint8), "bit")))
    d = bytes(d[:12]) + bytes(d[12:14]) + json.dumps({"__nbits": 40}).encode()
    with pytest.raises(MalformedDatagram):
        decode_pdu(d)


def test_udp_loopback_and_malformed_counter():
    rx = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    rx.bind(("127.0.0.1", 0))
    port = rx.getsockname()[1]
    pdus = [PDU({"seq": i}, np.random.default_rng(i).integers(0, 2, 8 * 1400, dtype=np.uint8), "bit")
            for i in range(5)]
    g = Flowgraph()
    src, sink = MessageSource(pdus), UdpPduSink("127.0.0.1", port)
    g.connect_message(src, "out", sink, "in")
    stats = g.run()
    with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as s:
        s.sendto(b"\x00" * 20, ("127.0.0.1", port))
    counters = {}
    got = receive_pdus(rx, None, 0.5, counters)
    rx.close()
    assert got == pdus
    assert counters["malformed_datagram"] == 1
    assert stats.counters[sink.name]["sent"] == 5
    assert MAGIC == 0x45535055
