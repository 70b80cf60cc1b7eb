"""Record types that cross module boundaries: network events and demographics."""

from __future__ import annotations

from enum import Enum
from typing import NamedTuple


class EventKind(str, Enum):
    CALL_IN = "CALL_IN"
    CALL_OUT = "CALL_OUT"
    CALL_REJ = "CALL_REJ"
    SMS_IN = "SMS_IN"
    SMS_OUT = "SMS_OUT"
    DATA = "DATA"
    LAU = "LAU"
    PAGE = "PAGE"

    def __str__(self) -> str:
        return self.value


class NetworkEvent(NamedTuple):
    """One network record. ``sub`` holds a raw subscriber id before ingest and a pseudonym after."""

    ts: int
    sub: str
    kind: EventKind
    cell: str

    def sort_key(self):
        return (self.ts, self.sub, self.kind.value, self.cell)


class DemoRecord(NamedTuple):
    sub: str
    age: int
    gender: str
    postcode: str
    home_zone: str


def sort_events(events) -> list[NetworkEvent]:
    """Global event order: timestamp, then (sub, kind) lexicographically."""
    return sorted(events, key=NetworkEvent.sort_key)
