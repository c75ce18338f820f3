"""IQ sample files and the PDU-over-UDP datagram format."""

from __future__ import annotations

import json
import logging
import os
import socket
import struct

import numpy as np

from .errors import MalformedDatagram, MalformedFile, OversizePdu
from .runtime import PDU, Block, VectorSource

log = logging.getLogger(__name__)


# -- IQ files ----------------------------------------------------------------

IQ_DTYPE = np.dtype("<f4")


def write_iq(path, samples) -> int:
    """Write complex samples as interleaved little-endian float32 pairs.

    Returns the number of samples written.
    """
    x = np.asarray(samples, dtype=np.complex128).reshape(-1)
    words = np.empty(2 * len(x), dtype=IQ_DTYPE)
    words[0::2] = x.real
    words[1::2] = x.imag
    with open(path, "wb") as f:
        f.write(words.tobytes())
    return len(x)


def read_iq(path) -> np.ndarray:
    """Read an interleaved float32 IQ file as complex64."""
    size = os.path.getsize(path)
    if size % IQ_DTYPE.itemsize:
        raise MalformedFile(f"{path}: size {size} is not a whole number of 32-bit words")
    if (size // IQ_DTYPE.itemsize) % 2:
        raise MalformedFile(f"{path}: odd number of 32-bit words (truncated final sample pair)")
    # interleaved LE float32 pairs are exactly the LE complex64 layout
    return np.fromfile(path, dtype="<c8").astype(np.complex64)


class IqFileSource(VectorSource):
    """Streams the contents of an IQ file, then finishes."""

    def __init__(self, path, chunk: int = 8192, name=None):
        super().__init__(read_iq(path), "complex", chunk=chunk, name=name or "iq_file_source")


class IqFileSink(Block):
    """Collects a complex stream and writes it to ``path`` when the graph stops."""

    def __init__(self, path, name=None):
        super().__init__(name or "iq_file_sink")
        self.path = path
        self._parts: list[np.ndarray] = []
        self.add_input("complex")

    def work(self, io):
        x = io.inputs[0]
        if len(x):
            self._parts.append(np.array(x))
            io.consume(0, len(x))

    def stop(self):
        data = np.concatenate(self._parts) if self._parts else np.zeros(0, np.complex128)
        self.count("samples", write_iq(self.path, data))


# -- UDP datagrams -----------------------------------------------------------

MAGIC = 0x45535055
VERSION = 1
MAX_PAYLOAD_BYTES = 65000
_HEADER = struct.Struct(">IBBHI")

# element-kind codes on the wire
KIND_BYTE, KIND_BITS, KIND_LLR, KIND_COMPLEX = 0, 1, 2, 3
_WIRE_KIND = {"byte": KIND_BYTE, "bit": KIND_BITS, "soft": KIND_LLR, "float": KIND_LLR,
              "complex": KIND_COMPLEX}
# reserved meta key carrying the bit count of a bit-packed payload
NBITS_KEY = "__nbits"


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, complex):
        return [v.real, v.imag]
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    return v


def encode_pdu(pdu: PDU) -> bytes:
    """Serialize a PDU to one datagram.

    Soft and float payloads travel as float32, complex as complex64, so
    those kinds round-trip exactly only when their values are already
    representable at single precision.
    """
    kind = _WIRE_KIND[pdu.kind]
    meta = _jsonable(pdu.meta)
    if kind == KIND_BITS:
        body = np.packbits(pdu.payload & 1).tobytes()
        meta[NBITS_KEY] = len(pdu.payload)
    elif kind == KIND_BYTE:
        body = pdu.payload.tobytes()
    elif kind == KIND_LLR:
        body = pdu.payload.astype(">f4").tobytes()
    else:
        body = pdu.payload.astype(">c8").tobytes()
    if len(body) > MAX_PAYLOAD_BYTES:
        raise OversizePdu(f"payload of {len(body)} bytes exceeds {MAX_PAYLOAD_BYTES}")
    tail = json.dumps(meta, separators=(",", ":"), sort_keys=True).encode("utf-8")
    return _HEADER.pack(MAGIC, VERSION, kind, 0, len(body)) + body + tail


def decode_pdu(data: bytes) -> PDU:
    if len(data) < _HEADER.size:
        raise MalformedDatagram("datagram shorter than header")
    magic, version, kind, _reserved, n = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise MalformedDatagram(f"bad magic 0x{magic:08x}")
    if version != VERSION:
        raise MalformedDatagram(f"unsupported version {version}")
    end = _HEADER.size + n
    if end > len(data):
        raise MalformedDatagram(f"declared length {n} exceeds datagram")
    body = data[_HEADER.size:end]
    try:
        meta = json.loads(data[end:].decode("utf-8")) if end < len(data) else {}
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedDatagram(f"metadata is not JSON: {exc}") from exc
    if not isinstance(meta, dict):
        raise MalformedDatagram("metadata is not a JSON object")
    if kind == KIND_BITS:
        nbits = meta.pop(NBITS_KEY, 8 * n)
        if not isinstance(nbits, int) or nbits < 0 or -(-nbits // 8) != n:
            raise MalformedDatagram(f"bit count {nbits} inconsistent with {n} bytes")
        return PDU(meta, np.unpackbits(np.frombuffer(body, np.uint8))[:nbits], "bit")
    if kind == KIND_BYTE:
        return PDU(meta, np.frombuffer(body, np.uint8), "byte")
    if kind == KIND_LLR:
        if n % 4:
            raise MalformedDatagram("float32 payload length not a multiple of 4")
        return PDU(meta, np.frombuffer(body, ">f4"), "soft")
    if kind == KIND_COMPLEX:
        if n % 8:
            raise MalformedDatagram("complex64 payload length not a multiple of 8")
        return PDU(meta, np.frombuffer(body, ">c8"), "complex")
    raise MalformedDatagram(f"unknown element kind {kind}")


class UdpPduSink(Block):
    """Sends every PDU arriving on ``in`` as one datagram to ``addr``."""

    def __init__(self, host: str, port: int, name=None):
        super().__init__(name or "udp_pdu_sink")
        self.addr = (host, int(port))
        self._sock: socket.socket | None = None
        self.register_message_input("in", self._send)

    def _send(self, pdu: PDU):
        try:
            data = encode_pdu(pdu)
        except OversizePdu:
            self.count("oversize_pdu")
            return
        if self._sock is None:
            self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.sendto(data, self.addr)
        self.count("sent")

    def stop(self):
        if self._sock is not None:
            self._sock.close()
            self._sock = None


def receive_pdus(sock: socket.socket, count: int | None = None, timeout: float = 1.0,
                 counters: dict | None = None) -> list[PDU]:
    """Read datagrams until ``count`` PDUs arrived or ``timeout`` seconds pass
    without traffic. Malformed datagrams are dropped and tallied in
    ``counters['malformed_datagram']``."""
    counters = {} if counters is None else counters
    out: list[PDU] = []
    sock.settimeout(timeout)
    while count is None or len(out) < count:
        try:
            data, _ = sock.recvfrom(1 << 17)
        except socket.timeout:
            break
        try:
            out.append(decode_pdu(data))
        except MalformedDatagram as exc:
            counters["malformed_datagram"] = counters.get("malformed_datagram", 0) + 1
            log.info("dropped datagram: %s", exc)
    return out


__all__ = [
    "IQ_DTYPE", "IqFileSink", "IqFileSource", "MAGIC", "MAX_PAYLOAD_BYTES", "UdpPduSink",
    "decode_pdu", "encode_pdu", "read_iq", "receive_pdus", "write_iq",
]
