"""Stream <-> message bridge.

Trigger blocks watch a real-valued detection metric and emit timed
:class:`TriggerMessage` commands; :class:`EsSink` answers them by cutting the
requested sample span out of its history into a PDU. In the other direction
:class:`EsSource` places event payloads into an otherwise all-zero output
stream at their absolute sample index and reports its position ("now")
back to whoever schedules the events.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .runtime import PDU, STREAM_DTYPES, Block, Source, StreamTag

log = logging.getLogger(__name__)

DEFAULT_HISTORY = 1 << 20
DEFAULT_NOW_PERIOD = 4096

_PDU_KIND = {"complex": "complex", "float": "float", "bit": "bit", "byte": "byte"}


@dataclass
class EventDescriptor:
    time: int
    length: int
    payload: np.ndarray | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.time = int(self.time)
        self.length = int(self.length)
        if self.length < 1:
            raise ValueError("event length must be >= 1")
        if self.payload is not None:
            self.payload = np.asarray(self.payload).reshape(-1)
            if len(self.payload) != self.length:
                raise ValueError("payload length does not match event length")

    @classmethod
    def from_payload(cls, time: int, payload, **meta) -> "EventDescriptor":
        payload = np.asarray(payload).reshape(-1)
        return cls(time, len(payload), payload, dict(meta))

    @property
    def end(self) -> int:
        return self.time + self.length


@dataclass
class TriggerMessage:
    time: int
    length: int
    meta: dict[str, Any] = field(default_factory=dict)


# -- triggers --------------------------------------------------------------

class EdgeTrigger:
    """Stateful threshold-crossing detector.

    ``rising=True`` fires where the metric goes from below ``threshold`` to
    at-or-above it (the sample before the stream start counts as -inf);
    ``rising=False`` fires where it drops below after having been at or
    above. After a trigger at index i, crossings before ``i + holdoff`` are
    ignored. NaN samples count as below threshold.

    ``time_offset`` shifts the reported event time relative to the crossing
    index, so an extraction can start ahead of the point of detection.
    Shifted times are clamped at zero. Crossings before index ``warmup``
    are ignored, for metrics that are meaningless until an averaging window
    has filled.
    """

    def __init__(self, threshold: float, holdoff: int = 0, event_length: int = 1,
                 rising: bool = True, time_offset: int = 0, name: str = "trigger", warmup: int = 0):
        if not np.isfinite(threshold):
            raise ValueError("threshold must be finite")
        if holdoff < 0:
            raise ValueError("holdoff must be >= 0")
        if event_length < 1:
            raise ValueError("event_length must be >= 1")
        self.threshold = float(threshold)
        self.holdoff = int(holdoff)
        self.event_length = int(event_length)
        self.rising = rising
        self.time_offset = int(time_offset)
        self.name = name
        self.counters: Counter = Counter()
        self._prev_above = False
        self.warmup = int(warmup)
        self._next_allowed = 0
        self._last_time: int | None = None

    def feed(self, metric, offset: int) -> list[TriggerMessage]:
        metric = np.asarray(metric, dtype=np.float64)
        if len(metric) == 0:
            return []
        nan = np.isnan(metric)
        if nan.any():
            self.counters["nan_metric"] += int(nan.sum())
        above = np.zeros(len(metric), dtype=bool)
        np.greater_equal(metric, self.threshold, out=above, where=~nan)
        prev = np.empty_like(above)
        prev[0] = self._prev_above
        prev[1:] = above[:-1]
        self._prev_above = bool(above[-1])
        edges = np.flatnonzero(above & ~prev) if self.rising else np.flatnonzero(~above & prev)
        out = []
        for i in edges:
            idx = offset + int(i)
            if idx < self.warmup:
                self.counters["warmup_suppressed"] += 1
                continue
            if idx < self._next_allowed:
                self.counters["holdoff_suppressed"] += 1
                continue
            self._next_allowed = idx + self.holdoff
            t = max(0, idx + self.time_offset)
            if self._last_time is not None and t <= self._last_time:
                self.counters["clamped_duplicate"] += 1
                continue
            self._last_time = t
            out.append(TriggerMessage(t, self.event_length, {
                "trigger_index": idx,
                "metric": float(metric[i]),
                "trigger": self.name,
            }))
        return out


def trigger_rising_edge(metric, threshold: float, holdoff: int = 0, event_length: int = 1,
                        time_offset: int = 0) -> list[TriggerMessage]:
    return EdgeTrigger(threshold, holdoff, event_length, True, time_offset).feed(metric, 0)


def trigger_below(metric, threshold: float, holdoff: int = 0, event_length: int = 1,
                  time_offset: int = 0) -> list[TriggerMessage]:
    return EdgeTrigger(threshold, holdoff, event_length, False, time_offset).feed(metric, 0)


class TriggerBlock(Block):
    """Float metric in, :class:`TriggerMessage` out on ``trigger``."""

    def __init__(self, threshold, holdoff=0, event_length=1, rising=True, time_offset=0, name=None, warmup=0):
        super().__init__(name or ("trigger_rising_edge" if rising else "trigger_below"))
        self.add_input("float")
        self.register_message_output("trigger")
        self.edge = EdgeTrigger(threshold, holdoff, event_length, rising, time_offset, self.name, warmup)

    def work(self, io):
        x = io.inputs[0]
        for msg in self.edge.feed(x, io.offsets[0]):
            self.count("triggers")
            self.publish("trigger", msg)
        io.consume(0, len(x))

    def stop(self):
        self.counters.update(self.edge.counters)


def TriggerRisingEdge(threshold, holdoff=0, event_length=1, time_offset=0, name=None) -> TriggerBlock:
    return TriggerBlock(threshold, holdoff, event_length, True, time_offset, name)


def TriggerBelow(threshold, holdoff=0, event_length=1, time_offset=0, name=None) -> TriggerBlock:
    return TriggerBlock(threshold, holdoff, event_length, False, time_offset, name)


# -- sink ------------------------------------------------------------------

class EventExtractor:
    """History ring plus pending extraction requests.

    A request whose start has already left the history is dropped as
    ``late_trigger``. Requests still incomplete when the stream ends are
    dropped as ``truncated_event`` by :meth:`finish`.
    """

    def __init__(self, kind: str = "complex", depth: int = DEFAULT_HISTORY):
        self.kind = kind
        self.depth = int(depth)
        self._ring = np.zeros(self.depth, dtype=STREAM_DTYPES[kind])
        self.written = 0
        self._pending: list[TriggerMessage] = []
        self.counters: Counter = Counter()

    @property
    def history_start(self) -> int:
        return max(0, self.written - self.depth)

    def request(self, trig: TriggerMessage) -> list[PDU]:
        self.counters["triggers"] += 1
        length = int(trig.length)
        if length < 1 or length > self.depth:
            self.counters["bad_length"] += 1
            return []
        if trig.time < self.history_start or trig.time < 0:
            self.counters["late_trigger"] += 1
            return []
        self._pending.append(trig)
        return self._ready()

    def feed(self, items: np.ndarray) -> list[PDU]:
        n = len(items)
        if n >= self.depth:
            items = items[-self.depth:]
            self.written += n - self.depth
            n = self.depth
        start = self.written % self.depth
        first = min(n, self.depth - start)
        self._ring[start:start + first] = items[:first]
        if first < n:
            self._ring[: n - first] = items[first:]
        self.written += n
        return self._ready()

    def _read(self, t: int, n: int) -> np.ndarray:
        start = t % self.depth
        if start + n <= self.depth:
            return self._ring[start:start + n].copy()
        first = self.depth - start
        return np.concatenate([self._ring[start:], self._ring[: n - first]])

    def _ready(self) -> list[PDU]:
        out, still = [], []
        for trig in self._pending:
            if trig.time < self.history_start:
                # start was overwritten while waiting for the tail
                self.counters["late_trigger"] += 1
            elif trig.time + trig.length <= self.written:
                meta = dict(trig.meta)
                meta["event_time"] = int(trig.time)
                meta["event_length"] = int(trig.length)
                out.append(PDU(meta, self._read(trig.time, trig.length), _PDU_KIND[self.kind]))
                self.counters["events"] += 1
            else:
                still.append(trig)
        self._pending = still
        return out

    def finish(self) -> None:
        if self._pending:
            self.counters["truncated_event"] += len(self._pending)
            self._pending = []


class EsSink(Block):
    """Stream in; ``trigger`` message in; extracted PDUs out on ``events``."""

    def __init__(self, kind: str = "complex", depth: int = DEFAULT_HISTORY, name=None):
        super().__init__(name or "es_sink")
        self.add_input(kind)
        self.register_message_input("trigger", self._on_trigger)
        self.register_message_output("events")
        self.extractor = EventExtractor(kind, depth)
        self.log: list[tuple[int, int, dict]] = []

    def _emit(self, pdus):
        for p in pdus:
            self.log.append((p.meta["event_time"], p.meta["event_length"], p.meta))
            self.publish("events", p)

    def _on_trigger(self, trig: TriggerMessage):
        self._emit(self.extractor.request(trig))

    def work(self, io):
        x = io.inputs[0]
        self._emit(self.extractor.feed(x))
        io.consume(0, len(x))

    def stop(self):
        self.extractor.finish()
        self.counters.update(self.extractor.counters)


# -- source ----------------------------------------------------------------

class EventInserter:
    """Places event payloads into a zero stream at their absolute times.

    Events starting before ``now + min_lead`` are rejected as ``late_event``;
    events that overlap one already scheduled are rejected as ``overlap``
    unless ``additive`` is set, in which case the payloads sum.
    """

    def __init__(self, kind: str = "complex", min_lead: int = 0, additive: bool = False):
        self.kind = kind
        self.min_lead = int(min_lead)
        self.additive = additive
        self.pos = 0
        self._events: list[EventDescriptor] = []
        self.counters: Counter = Counter()

    def schedule(self, ev: EventDescriptor) -> bool:
        if ev.payload is None:
            self.counters["no_payload"] += 1
            return False
        if ev.time < self.pos + self.min_lead:
            self.counters["late_event"] += 1
            return False
        if not self.additive:
            for other in self._events:
                if ev.time < other.end and other.time < ev.end:
                    self.counters["overlap"] += 1
                    return False
        self._events.append(ev)
        self._events.sort(key=lambda e: e.time)
        self.counters["scheduled"] += 1
        return True

    def render(self, n: int) -> tuple[np.ndarray, list[StreamTag]]:
        lo, hi = self.pos, self.pos + n
        out = np.zeros(n, dtype=STREAM_DTYPES[self.kind])
        tags: list[StreamTag] = []
        keep = []
        for ev in self._events:
            if ev.time >= hi:
                keep.append(ev)
                continue
            a, b = max(lo, ev.time), min(hi, ev.end)
            if a < b:
                out[a - lo:b - lo] += ev.payload[a - ev.time:b - ev.time]
            if lo <= ev.time < hi:
                tags.append(StreamTag(ev.time, "burst_len", ev.length))
            if ev.end > hi:
                keep.append(ev)
        self._events = keep
        self.pos = hi
        return out, tags

    @property
    def pending(self) -> int:
        return len(self._events)


class EsSource(Source):
    """``events`` message in; sample stream out; position reports on ``now``.

    Each scheduled event also carries a ``burst_len`` stream tag on its first
    item so downstream gates know where bursts start.
    """

    def __init__(self, kind: str = "complex", min_lead: int = 0, now_period: int = DEFAULT_NOW_PERIOD,
                 chunk: int | None = None, additive: bool = False, total: int | None = None, name=None):
        super().__init__(kind, name or "es_source")
        self.register_message_input("events", self._on_event)
        self.register_message_output("now")
        self.inserter = EventInserter(kind, min_lead, additive)
        self.now_period = int(now_period)
        self.chunk = int(chunk or now_period)
        self.total = total
        self._last_now = None

    def _on_event(self, ev: EventDescriptor):
        self.inserter.schedule(ev)

    def _report(self):
        self._last_now = self.inserter.pos
        self.publish("now", self.inserter.pos)

    def start(self):
        self._report()

    def work(self, io):
        n = min(io.space, self.chunk)
        if self.total is not None:
            n = min(n, self.total - self.inserter.pos)
        if n > 0:
            items, tags = self.inserter.render(n)
            io.produce(0, items, tags)
            if self.inserter.pos - self._last_now >= self.now_period:
                self._report()
        if self.total is not None and self.inserter.pos >= self.total:
            io.finish()

    def stop(self):
        self.counters.update(self.inserter.counters)
        if self.inserter.pending:
            self.counters["unsent_event"] += self.inserter.pending
