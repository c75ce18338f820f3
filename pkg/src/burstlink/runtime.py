"""Deterministic flowgraph runtime.

Stream blocks exchange numpy item arrays through bounded circular buffers;
message ports follow a publish/subscribe model with one FIFO inbox per block.
Scheduling is a single-threaded round robin over the blocks in the order they
were added, so a graph plus its seeds fully determines every output.
"""

from __future__ import annotations

import logging
import time
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .errors import (
    AlreadyConnected,
    BlockWorkError,
    EmptyPayload,
    KindMismatch,
    UnknownPort,
    ValidationError,
)

log = logging.getLogger(__name__)

DEFAULT_BUFFER_CAPACITY = 65536
MESSAGE_HIGH_WATER = 4096

# stream item kinds
STREAM_DTYPES = {
    "complex": np.complex128,
    "float": np.float64,
    "bit": np.uint8,
    "byte": np.uint8,
}

# PDU payload element kinds; "float" holds real-valued sample events
PDU_DTYPES = {
    "bit": np.uint8,
    "soft": np.float64,
    "complex": np.complex128,
    "byte": np.uint8,
    "float": np.float64,
}


@dataclass(frozen=True)
class StreamTag:
    offset: int
    key: str
    value: Any

    def shifted(self, delta: int) -> "StreamTag":
        return StreamTag(self.offset + delta, self.key, self.value)


def _values_equal(a, b) -> bool:
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        return np.array_equal(np.asarray(a), np.asarray(b))
    if isinstance(a, (list, tuple)) and isinstance(b, (list, tuple)):
        return len(a) == len(b) and all(_values_equal(x, y) for x, y in zip(a, b))
    return a == b


def meta_equal(a: dict, b: dict) -> bool:
    return a.keys() == b.keys() and all(_values_equal(a[k], b[k]) for k in a)


class PDU:
    """Metadata dictionary plus a homogeneous payload vector."""

    __slots__ = ("meta", "payload", "kind")

    def __init__(self, meta: dict | None, payload, kind: str):
        if kind not in PDU_DTYPES:
            raise ValueError(f"unknown PDU element kind {kind!r}")
        self.meta = dict(meta or {})
        self.payload = np.ascontiguousarray(payload, dtype=PDU_DTYPES[kind]).reshape(-1)
        self.kind = kind

    def replace(self, payload=None, kind: str | None = None, **meta) -> "PDU":
        new_meta = dict(self.meta)
        new_meta.update(meta)
        return PDU(
            new_meta,
            self.payload if payload is None else payload,
            self.kind if kind is None else kind,
        )

    def __len__(self) -> int:
        return len(self.payload)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PDU):
            return NotImplemented
        return (
            self.kind == other.kind
            and np.array_equal(self.payload, other.payload)
            and meta_equal(self.meta, other.meta)
        )

    def __repr__(self) -> str:
        return f"PDU(kind={self.kind!r}, len={len(self.payload)}, meta={self.meta!r})"


# -- buffers ---------------------------------------------------------------

class CircularBuffer:
    """Fixed-capacity ring holding one output port's items, with one read
    cursor per downstream connection."""

    def __init__(self, kind: str, capacity: int = DEFAULT_BUFFER_CAPACITY):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.kind = kind
        self.capacity = int(capacity)
        self._data = np.zeros(self.capacity, dtype=STREAM_DTYPES[kind])
        self.written = 0
        self._readers: list[int] = []
        self._tags: list[StreamTag] = []
        self.high_water = 0

    def add_reader(self) -> int:
        self._readers.append(self.written)
        return len(self._readers) - 1

    def grow(self, capacity: int) -> None:
        if capacity <= self.capacity:
            return
        if self.written:
            raise RuntimeError("cannot resize a buffer after data has been written")
        self.capacity = int(capacity)
        self._data = np.zeros(self.capacity, dtype=self._data.dtype)

    def _fill(self) -> int:
        if not self._readers:
            return 0
        return self.written - min(self._readers)

    @property
    def space(self) -> int:
        return self.capacity - self._fill()

    def write(self, items: np.ndarray, tags: Iterable[StreamTag] = ()) -> None:
        n = len(items)
        if n > self.space:
            raise RuntimeError("buffer overflow")
        for t in tags:
            self._tags.append(t)
        if self._readers and n:
            start = self.written % self.capacity
            first = min(n, self.capacity - start)
            self._data[start:start + first] = items[:first]
            if first < n:
                self._data[: n - first] = items[first:]
        self.written += n
        self.high_water = max(self.high_water, self._fill())

    def available(self, reader: int) -> int:
        return self.written - self._readers[reader]

    def read_offset(self, reader: int) -> int:
        return self._readers[reader]

    def peek(self, reader: int, n: int) -> np.ndarray:
        pos = self._readers[reader]
        start = pos % self.capacity
        if start + n <= self.capacity:
            return self._data[start:start + n].copy()
        first = self.capacity - start
        return np.concatenate([self._data[start:], self._data[: n - first]])

    def tags_in(self, reader: int, n: int) -> list[StreamTag]:
        lo = self._readers[reader]
        hi = lo + n
        return [t for t in self._tags if lo <= t.offset < hi]

    def consume(self, reader: int, n: int) -> None:
        if n > self.available(reader):
            raise RuntimeError("consumed more items than available")
        self._readers[reader] += n
        floor = min(self._readers)
        if self._tags and self._tags[0].offset < floor:
            self._tags = [t for t in self._tags if t.offset >= floor]


class WorkIO:
    """View of a block's stream ports handed to ``Block.work``."""

    def __init__(self, inputs, offsets, tags, space, out_offsets, source_budget):
        self.inputs: list[np.ndarray] = inputs
        self.offsets: list[int] = offsets
        self.tags: list[list[StreamTag]] = tags
        self.space: int = space
        self.out_offsets: list[int] = out_offsets
        self.consumed = [0] * len(inputs)
        self.produced: list[list] = [[] for _ in out_offsets]
        self.finished = False
        self._budget = source_budget

    def consume(self, port: int, n: int) -> None:
        self.consumed[port] += int(n)

    def consume_each(self, n: int) -> None:
        for i in range(len(self.consumed)):
            self.consumed[i] += int(n)

    def produce(self, port: int, items, tags: Iterable[StreamTag] = ()) -> None:
        self.produced[port].append((items, list(tags)))

    def finish(self) -> None:
        """Signal that a source is exhausted."""
        self.finished = True


class Block:
    """Base class for everything placed in a :class:`Flowgraph`.

    Subclasses declare stream ports with ``add_input``/``add_output`` and
    message ports with ``register_message_input``/``register_message_output``.
    Stream work goes in :meth:`work`.
    """

    is_source = False

    def __init__(self, name: str | None = None):
        self.name = name or type(self).__name__
        self.in_kinds: list[str] = []
        self.out_kinds: list[str] = []
        self._handlers: dict[str, Callable[[Any], None]] = {}
        self._out_ports: list[str] = []
        self._graph: Flowgraph | None = None
        self._inbox: deque = deque()
        self.counters: Counter = Counter()
        self.unbound_messages: list[tuple[str, Any]] = []

    # port declaration
    def add_input(self, kind: str) -> int:
        if kind not in STREAM_DTYPES:
            raise ValueError(f"unknown stream kind {kind!r}")
        self.in_kinds.append(kind)
        return len(self.in_kinds) - 1

    def add_output(self, kind: str) -> int:
        if kind not in STREAM_DTYPES:
            raise ValueError(f"unknown stream kind {kind!r}")
        self.out_kinds.append(kind)
        return len(self.out_kinds) - 1

    def register_message_input(self, port: str, handler: Callable[[Any], None]) -> None:
        self._handlers[port] = handler

    def register_message_output(self, port: str) -> None:
        if port not in self._out_ports:
            self._out_ports.append(port)

    @property
    def message_inputs(self) -> list[str]:
        return list(self._handlers)

    @property
    def message_outputs(self) -> list[str]:
        return list(self._out_ports)

    def publish(self, port: str, msg: Any) -> None:
        if port not in self._out_ports:
            raise UnknownPort(f"{self.name} has no message output {port!r}")
        if self._graph is None:
            self.unbound_messages.append((port, msg))
        else:
            self._graph._publish(self, port, msg)

    def post(self, port: str, msg: Any) -> None:
        """Enqueue ``msg`` on one of this block's own message inputs."""
        if port not in self._handlers:
            raise UnknownPort(f"{self.name} has no message input {port!r}")
        self._inbox.append((port, msg))

    def count(self, key: str, n: int = 1) -> None:
        self.counters[key] += n

    @property
    def rng(self) -> np.random.Generator:
        if self._graph is None:
            raise RuntimeError("block is not part of a flowgraph")
        return self._graph.rng_for(self)

    # hooks
    def start(self) -> None:
        pass

    def stop(self) -> None:
        pass

    def work(self, io: WorkIO) -> None:
        pass

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.name}>"


class SyncBlock(Block):
    """1:1 stream block. Override :meth:`process`; tags on input 0 pass
    through at their original offsets."""

    def __init__(self, in_kinds: Sequence[str], out_kind: str, name=None):
        super().__init__(name)
        for k in in_kinds:
            self.add_input(k)
        self.add_output(out_kind)

    def process(self, *xs: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def work(self, io: WorkIO) -> None:
        n = min(min(len(x) for x in io.inputs), io.space)
        if n <= 0:
            return
        y = self.process(*(x[:n] for x in io.inputs))
        tags = [t for t in io.tags[0] if t.offset < io.offsets[0] + n]
        io.produce(0, y, tags)
        io.consume_each(n)


class FunctionBlock(SyncBlock):
    """Wraps a stateful kernel ``fn(chunk) -> chunk`` as a 1:1 block."""

    def __init__(self, fn: Callable, in_kind: str, out_kind: str, name=None):
        super().__init__([in_kind], out_kind, name or getattr(fn, "__name__", None))
        self.fn = fn

    def process(self, x):
        return self.fn(x)


class Source(Block):
    is_source = True

    def __init__(self, kind: str, name=None):
        super().__init__(name)
        self.add_output(kind)


class VectorSource(Source):
    def __init__(self, items, kind: str, tags: Iterable[StreamTag] = (), chunk: int = 8192, name=None):
        super().__init__(kind, name)
        self.items = np.asarray(items, dtype=STREAM_DTYPES[kind])
        self.tags = sorted(tags, key=lambda t: t.offset)
        self.chunk = chunk
        self._pos = 0

    def start(self):
        self._pos = 0

    def work(self, io):
        n = min(io.space, self.chunk, len(self.items) - self._pos)
        if n > 0:
            lo, hi = self._pos, self._pos + n
            io.produce(0, self.items[lo:hi], [t for t in self.tags if lo <= t.offset < hi])
            self._pos = hi
        if self._pos >= len(self.items):
            io.finish()


class NullSource(Source):
    """Zeros; unbounded unless ``total`` is given."""

    def __init__(self, kind: str, total: int | None = None, chunk: int = 8192, name=None):
        super().__init__(kind, name)
        self.total = total
        self.chunk = chunk
        self._pos = 0

    def work(self, io):
        n = min(io.space, self.chunk)
        if self.total is not None:
            n = min(n, self.total - self._pos)
        if n > 0:
            io.produce(0, np.zeros(n, dtype=STREAM_DTYPES[self.out_kinds[0]]))
            self._pos += n
        if self.total is not None and self._pos >= self.total:
            io.finish()


class VectorSink(Block):
    def __init__(self, kind: str, name=None):
        super().__init__(name)
        self.add_input(kind)
        self._chunks: list[np.ndarray] = []
        self.tags: list[StreamTag] = []

    def work(self, io):
        x = io.inputs[0]
        self._chunks.append(x)
        self.tags.extend(io.tags[0])
        io.consume(0, len(x))

    @property
    def data(self) -> np.ndarray:
        if not self._chunks:
            return np.zeros(0, dtype=STREAM_DTYPES[self.in_kinds[0]])
        return np.concatenate(self._chunks)


class NullSink(Block):
    def __init__(self, kind: str, name=None):
        super().__init__(name)
        self.add_input(kind)

    def work(self, io):
        io.consume(0, len(io.inputs[0]))


class MessageSink(Block):
    """Collects every message received on its ``in`` port."""

    def __init__(self, name=None):
        super().__init__(name)
        self.messages: list[Any] = []
        self.register_message_input("in", self.messages.append)


class MessageSource(Block):
    """Publishes a fixed list of messages on ``out`` when the graph starts."""

    def __init__(self, messages: Iterable[Any], name=None):
        super().__init__(name)
        self.messages = list(messages)
        self.register_message_output("out")

    def start(self):
        for m in self.messages:
            self.publish("out", m)


class MessageMap(Block):
    """Applies ``fn`` to each message from ``in`` and publishes the result on
    ``out``. Exceptions from ``fn`` drop that message and are counted; a
    ``None`` result drops silently."""

    def __init__(self, fn: Callable[[Any], Any], name=None):
        super().__init__(name or getattr(fn, "__name__", None))
        self.fn = fn
        self.register_message_input("in", self._handle)
        self.register_message_output("out")

    def _handle(self, msg):
        try:
            out = self.fn(msg)
        except Exception as exc:  # noqa: BLE001 - per-message failure is policy
            self.count("fn_errors")
            self.count(f"error.{type(exc).__name__}")
            log.debug("%s dropped message: %s", self.name, exc)
            return
        if out is not None:
            self.publish("out", out)


def message_map(fn: Callable[[PDU], PDU], name: str | None = None) -> MessageMap:
    return MessageMap(fn, name)


# -- tagged streams --------------------------------------------------------

PACKET_LEN = "packet_len"


def pdu_to_tagged_stream(pdu: PDU, offset: int = 0) -> tuple[np.ndarray, list[StreamTag]]:
    if len(pdu.payload) == 0:
        raise EmptyPayload("PDU payload is empty")
    tags = [StreamTag(offset, PACKET_LEN, len(pdu.payload))]
    tags += [StreamTag(offset, k, v) for k, v in pdu.meta.items()]
    return pdu.payload.copy(), tags


class TaggedStreamParser:
    """Incremental inverse of :func:`pdu_to_tagged_stream`.

    Items ahead of the first ``packet_len`` tag are discarded and counted as
    ``missing_length_tag`` (once per untagged run).
    """

    def __init__(self, kind: str):
        self.kind = kind
        self.errors: Counter = Counter()
        self._cur: tuple[int, dict, list] | None = None  # (remaining, meta, chunks)
        self._in_garbage = False

    def feed(self, items: np.ndarray, offset: int, tags: Iterable[StreamTag]) -> list[PDU]:
        out: list[PDU] = []
        by_offset: dict[int, list[StreamTag]] = {}
        for t in tags:
            by_offset.setdefault(t.offset, []).append(t)
        starts = sorted(o for o, ts in by_offset.items() if any(t.key == PACKET_LEN for t in ts))
        pos, end = offset, offset + len(items)
        si = 0
        while pos < end:
            while si < len(starts) and starts[si] < pos:
                si += 1
            if self._cur is None:
                if si == len(starts):
                    if not self._in_garbage:
                        self.errors["missing_length_tag"] += 1
                        self._in_garbage = True
                    break
                if starts[si] > pos and not self._in_garbage:
                    self.errors["missing_length_tag"] += 1
                pos = starts[si]
                self._in_garbage = False
                meta = {}
                length = 0
                for t in by_offset[pos]:
                    if t.key == PACKET_LEN:
                        length = int(t.value)
                    else:
                        meta[t.key] = t.value
                if length <= 0:
                    self.errors["bad_length_tag"] += 1
                    pos += 1
                    continue
                self._cur = (length, meta, [])
                si += 1
            remaining, meta, chunks = self._cur
            nxt = starts[si] if si < len(starts) else end
            take = min(remaining, nxt - pos)
            chunks.append(items[pos - offset: pos - offset + take])
            pos += take
            remaining -= take
            if remaining == 0:
                out.append(PDU(meta, np.concatenate(chunks), self.kind))
                self._cur = None
            elif pos == nxt and nxt < end:
                # a new packet starts before this one completed
                self.errors["truncated_packet"] += 1
                self._cur = None
            else:
                self._cur = (remaining, meta, chunks)
        return out

    def finish(self) -> None:
        if self._cur is not None:
            self.errors["truncated_final_packet"] += 1
            self._cur = None


def tagged_stream_to_pdu(
    items, tags: Iterable[StreamTag], kind: str, offset: int = 0
) -> tuple[list[PDU], Counter]:
    """Split a tagged stream into PDUs; returns ``(pdus, error_counts)``."""
    parser = TaggedStreamParser(kind)
    pdus = parser.feed(np.asarray(items, dtype=PDU_DTYPES[kind]), offset, tags)
    parser.finish()
    return pdus, parser.errors


class PduToTaggedStream(Block):
    def __init__(self, kind: str, name=None):
        super().__init__(name)
        self.add_output(kind)
        self.register_message_input("pdus", self._enqueue)
        self._pending: deque[tuple[np.ndarray, list[StreamTag]]] = deque()
        self._out_pos = 0

    def _enqueue(self, pdu: PDU):
        try:
            items, tags = pdu_to_tagged_stream(pdu)
        except EmptyPayload:
            self.count("empty_payload")
            return
        self._pending.append((items, tags))

    def work(self, io):
        space = io.space
        while self._pending and space > 0:
            items, tags = self._pending[0]
            n = min(space, len(items))
            base = io.out_offsets[0] + (io.space - space)
            io.produce(0, items[:n], [t.shifted(base) for t in tags])
            if n == len(items):
                self._pending.popleft()
            else:
                self._pending[0] = (items[n:], [])
            space -= n


class TaggedStreamToPdu(Block):
    def __init__(self, kind: str, name=None):
        super().__init__(name)
        self.add_input(kind)
        self.register_message_output("pdus")
        self._parser = TaggedStreamParser(kind if kind in PDU_DTYPES else "byte")

    def work(self, io):
        x = io.inputs[0]
        for pdu in self._parser.feed(x, io.offsets[0], io.tags[0]):
            self.publish("pdus", pdu)
        io.consume(0, len(x))

    def stop(self):
        self._parser.finish()
        self.counters.update(self._parser.errors)


# -- flowgraph -------------------------------------------------------------

@dataclass(frozen=True)
class StreamEdge:
    src: Block
    src_port: int
    dst: Block
    dst_port: int
    buffer: CircularBuffer
    reader: int


@dataclass(frozen=True)
class MessageEdge:
    src: Block
    src_port: str
    dst: Block
    dst_port: str


@dataclass
class RunStats:
    items_consumed: dict[str, int] = field(default_factory=dict)
    items_produced: dict[str, int] = field(default_factory=dict)
    messages_handled: dict[str, int] = field(default_factory=dict)
    counters: dict[str, dict[str, int]] = field(default_factory=dict)
    passes: int = 0
    elapsed: float = field(default=0.0, compare=False)

    def error_count(self, block: str, key: str | None = None) -> int:
        c = self.counters.get(block, {})
        if key is None:
            return sum(c.values())
        return c.get(key, 0)


class Flowgraph:
    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self.blocks: list[Block] = []
        self.stream_edges: list[StreamEdge] = []
        self.message_edges: list[MessageEdge] = []
        self._buffers: dict[tuple[int, int], CircularBuffer] = {}
        self._inputs: dict[tuple[int, int], StreamEdge] = {}
        self._subs: dict[tuple[int, str], list[tuple[Block, str]]] = {}
        self._rngs: dict[int, np.random.Generator] = {}
        self._warned: set[int] = set()

    def add(self, *blocks: Block) -> Block:
        for b in blocks:
            if b._graph is self:
                continue
            if b._graph is not None:
                raise ValueError(f"{b!r} already belongs to another flowgraph")
            names = {x.name for x in self.blocks}
            if b.name in names:
                i = 1
                while f"{b.name}_{i}" in names:
                    i += 1
                b.name = f"{b.name}_{i}"
            b._graph = self
            self.blocks.append(b)
        return blocks[-1]

    def rng_for(self, block: Block) -> np.random.Generator:
        key = id(block)
        if key not in self._rngs:
            idx = self.blocks.index(block)
            self._rngs[key] = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(idx,)))
        return self._rngs[key]

    def connect_stream(self, src: Block, src_port: int, dst: Block, dst_port: int,
                       capacity: int = DEFAULT_BUFFER_CAPACITY) -> StreamEdge:
        if not 0 <= src_port < len(src.out_kinds):
            raise UnknownPort(f"{src.name} has no stream output {src_port}")
        if not 0 <= dst_port < len(dst.in_kinds):
            raise UnknownPort(f"{dst.name} has no stream input {dst_port}")
        if src.out_kinds[src_port] != dst.in_kinds[dst_port]:
            raise KindMismatch(
                f"{src.name}[{src_port}] is {src.out_kinds[src_port]}, "
                f"{dst.name}[{dst_port}] expects {dst.in_kinds[dst_port]}"
            )
        self.add(src)
        self.add(dst)
        key_in = (id(dst), dst_port)
        if key_in in self._inputs:
            raise AlreadyConnected(f"{dst.name}[{dst_port}] is already connected")
        key_out = (id(src), src_port)
        buf = self._buffers.get(key_out)
        if buf is None:
            buf = self._buffers[key_out] = CircularBuffer(src.out_kinds[src_port], capacity)
        else:
            buf.grow(capacity)
        edge = StreamEdge(src, src_port, dst, dst_port, buf, buf.add_reader())
        self._inputs[key_in] = edge
        self.stream_edges.append(edge)
        return edge

    def connect(self, src: Block, dst: Block, **kw) -> StreamEdge:
        return self.connect_stream(src, 0, dst, 0, **kw)

    def connect_message(self, src: Block, src_port: str, dst: Block, dst_port: str) -> MessageEdge:
        if src_port not in src.message_outputs:
            raise UnknownPort(f"{src.name} has no message output {src_port!r}")
        if dst_port not in dst.message_inputs:
            raise UnknownPort(f"{dst.name} has no message input {dst_port!r}")
        self.add(src)
        self.add(dst)
        edge = MessageEdge(src, src_port, dst, dst_port)
        self._subs.setdefault((id(src), src_port), []).append((dst, dst_port))
        self.message_edges.append(edge)
        return edge

    def _publish(self, src: Block, port: str, msg: Any) -> None:
        for dst, dport in self._subs.get((id(src), port), ()):
            dst._inbox.append((dport, msg))
            if len(dst._inbox) > MESSAGE_HIGH_WATER and id(dst) not in self._warned:
                self._warned.add(id(dst))
                log.warning("message queue of %s exceeds %d entries", dst.name, MESSAGE_HIGH_WATER)

    def validate(self) -> None:
        for b in self.blocks:
            for p in range(len(b.in_kinds)):
                if (id(b), p) not in self._inputs:
                    raise ValidationError(f"stream input {b.name}[{p}] is not connected")
        # stream edges must form a DAG
        succ: dict[int, list[Block]] = {id(b): [] for b in self.blocks}
        for e in self.stream_edges:
            succ[id(e.src)].append(e.dst)
        state: dict[int, int] = {}

        def visit(b: Block) -> None:
            state[id(b)] = 1
            for nxt in succ[id(b)]:
                s = state.get(id(nxt), 0)
                if s == 1:
                    raise ValidationError(f"stream cycle through {nxt.name}")
                if s == 0:
                    visit(nxt)
            state[id(b)] = 2

        for b in self.blocks:
            if state.get(id(b), 0) == 0:
                visit(b)

    def run(self, *, max_items: int | None = None, wall_clock: float | None = None) -> RunStats:
        """Run to completion.

        Without arguments the graph runs until every source is exhausted and
        all buffers and queues have drained. ``max_items`` caps the number of
        items each source produces; ``wall_clock`` bounds the run in seconds.
        """
        self.validate()
        t0 = time.perf_counter()
        stats = RunStats()
        outs: dict[int, list[CircularBuffer | None]] = {
            id(b): [self._buffers.get((id(b), p)) for p in range(len(b.out_kinds))]
            for b in self.blocks
        }
        finished: set[int] = set()
        produced_total: dict[int, int] = {id(b): 0 for b in self.blocks}
        for b in self.blocks:
            stats.items_consumed[b.name] = 0
            stats.items_produced[b.name] = 0
            stats.messages_handled[b.name] = 0
        for b in self.blocks:
            self._guard(b, b.start)

        while True:
            progress = False
            for b in self.blocks:
                if self._deliver(b, stats):
                    progress = True
                if self._work(b, outs[id(b)], finished, produced_total, max_items, stats):
                    progress = True
            stats.passes += 1
            if not progress:
                break
            if wall_clock is not None and time.perf_counter() - t0 > wall_clock:
                break

        for b in self.blocks:
            self._guard(b, b.stop)
        while any(self._deliver(b, stats) for b in self.blocks):
            pass
        for b in self.blocks:
            stats.counters[b.name] = dict(sorted(b.counters.items()))
        stats.elapsed = time.perf_counter() - t0
        return stats

    def _guard(self, b: Block, fn, *args):
        try:
            return fn(*args)
        except BlockWorkError:
            raise
        except Exception as exc:
            raise BlockWorkError(b.name, exc) from exc

    def _deliver(self, b: Block, stats: RunStats) -> bool:
        n = len(b._inbox)
        for _ in range(n):
            port, msg = b._inbox.popleft()
            self._guard(b, b._handlers[port], msg)
            stats.messages_handled[b.name] += 1
        return n > 0

    def _work(self, b, out_bufs, finished, produced_total, max_items, stats) -> bool:
        if b.is_source and id(b) in finished:
            return False
        edges = [self._inputs[(id(b), p)] for p in range(len(b.in_kinds))]
        avail = [e.buffer.available(e.reader) for e in edges]
        if edges and not any(avail):
            return False
        space = min((buf.space for buf in out_bufs if buf is not None), default=DEFAULT_BUFFER_CAPACITY)
        if b.is_source and max_items is not None:
            space = min(space, max_items - produced_total[id(b)])
            if space <= 0:
                finished.add(id(b))
                return True
        if out_bufs and space <= 0:
            return False
        io = WorkIO(
            inputs=[e.buffer.peek(e.reader, a) for e, a in zip(edges, avail)],
            offsets=[e.buffer.read_offset(e.reader) for e in edges],
            tags=[e.buffer.tags_in(e.reader, a) for e, a in zip(edges, avail)],
            space=space,
            out_offsets=[buf.written if buf is not None else produced_total[id(b)] for buf in out_bufs],
            source_budget=None,
        )
        self._guard(b, b.work, io)
        moved = False
        for e, n in zip(edges, io.consumed):
            if n:
                e.buffer.consume(e.reader, n)
                stats.items_consumed[b.name] += n
                moved = True
        for p, chunks in enumerate(io.produced):
            total = 0
            for items, tags in chunks:
                items = np.asarray(items, dtype=STREAM_DTYPES[b.out_kinds[p]])
                total += len(items)
                if total > space:
                    raise BlockWorkError(b.name, RuntimeError("produced more items than space"))
                buf = out_bufs[p]
                if buf is not None:
                    buf.write(items, tags)
            if total:
                stats.items_produced[b.name] += total
                if p == 0:
                    produced_total[id(b)] += total
                moved = True
        if io.finished and b.is_source:
            finished.add(id(b))
            moved = True
        return moved
