"""Slotted burst scheduling and a periodic test-traffic generator."""

from __future__ import annotations

import logging

import numpy as np

from ..eventstream import EventDescriptor
from ..runtime import PDU, Block
from .framing import int_to_bits

log = logging.getLogger(__name__)

SEQ_BITS = 32


def slot_time(now: int, slot_len: int, min_lead: int = 0) -> int:
    """Earliest slot boundary at or after ``now + min_lead``."""
    if slot_len < 1:
        raise ValueError("slot_len must be >= 1")
    t = now + min_lead
    return -(-t // slot_len) * slot_len


def burst_schedule(pdu: PDU, now: int, slot_len: int, min_lead: int = 0,
                   not_before: int = 0) -> EventDescriptor:
    """Place a burst on the first free slot boundary.

    ``not_before`` lets a caller keep bursts from overlapping; a ``tx_time``
    entry in the PDU meta is honoured the same way.
    """
    earliest = max(now + min_lead, not_before, int(pdu.meta.get("tx_time", 0)))
    time = slot_time(earliest, slot_len)
    meta = dict(pdu.meta)
    meta["slot"] = time // slot_len
    return EventDescriptor(time, len(pdu.payload), np.asarray(pdu.payload), meta)


class BurstScheduler(Block):
    """``bursts`` and ``now`` in, ``events`` out.

    ``lead`` should cover how stale a ``now`` report can be by the time the
    event reaches the source, otherwise the source rejects it as late.
    """

    def __init__(self, slot_len: int, lead: int = 0, name=None):
        super().__init__(name or "burst_schedule")
        self.slot_len = int(slot_len)
        self.lead = int(lead)
        self.now = 0
        self.next_free = 0
        self.register_message_input("bursts", self._on_burst)
        self.register_message_input("now", self._on_now)
        self.register_message_output("events")

    def _on_now(self, now):
        self.now = max(self.now, int(now))

    def _on_burst(self, pdu: PDU):
        if len(pdu.payload) == 0:
            self.count("empty_burst")
            return
        ev = burst_schedule(pdu, self.now, self.slot_len, self.lead, self.next_free)
        if ev.length > self.slot_len:
            self.count("burst_longer_than_slot")
        self.next_free = ev.end
        self.count("scheduled")
        self.publish("events", ev)


class PduStrobe(Block):
    """Periodic random payloads, paced by the simulated clock.

    Listens to ``now`` reports and emits the k-th PDU once the clock plus
    ``lookahead`` reaches ``k * period``. Each payload starts with a 32-bit
    sequence number (MSB first) followed by random bits.
    """

    def __init__(self, period: int, payload_bits: int, count: int | None = None,
                 lookahead: int = 0, name=None):
        super().__init__(name or "pdu_strobe")
        if payload_bits < SEQ_BITS:
            raise ValueError(f"payload_bits must be >= {SEQ_BITS}")
        self.period = int(period)
        self.payload_bits = int(payload_bits)
        self.limit = count
        self.lookahead = int(lookahead)
        self.sent: list[PDU] = []
        self.register_message_input("now", self._on_now)
        self.register_message_output("pdus")

    def _on_now(self, now):
        while self.limit is None or len(self.sent) < self.limit:
            k = len(self.sent)
            if now + self.lookahead < k * self.period:
                break
            body = self.rng.integers(0, 2, self.payload_bits - SEQ_BITS, dtype=np.uint8)
            bits = np.concatenate([int_to_bits(k, SEQ_BITS), body])
            pdu = PDU({"seq": k, "tx_time": k * self.period}, bits, "bit")
            self.sent.append(pdu)
            self.publish("pdus", pdu)
