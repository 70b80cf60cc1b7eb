"""Origin-destination matrices per zone pair and time bucket."""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .errors import InvalidConfig, ParseError, ReferentialError

OD_HEADER = ["origin_zone", "dest_zone", "t_start", "t_end", "flow"]


@dataclass
class ZoneMap:
    """Total map from cell id to zone id."""

    zone_of: dict[str, str]
    names: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_location_areas(cls, net) -> "ZoneMap":
        return cls({c: net.la_of(c) for c in net.cells})

    @classmethod
    def for_network(cls, net, zones: Mapping[str, str] | None = None) -> "ZoneMap":
        zm = cls(dict(zones)) if zones else cls.from_location_areas(net)
        missing = set(net.cells) - set(zm.zone_of)
        if missing:
            raise ReferentialError("cells without a zone", missing)
        return zm

    def __getitem__(self, cell: str) -> str:
        try:
            return self.zone_of[cell]
        except KeyError:
            raise ReferentialError("cell has no zone", [cell]) from None

    @property
    def zones(self) -> list[str]:
        return sorted(set(self.zone_of.values()))


@dataclass
class ODMatrix:
    flows: Counter            # (origin, dest, t_start) -> count; zeros never stored
    bucket_s: int = 3600
    source: str = "raw"
    estimate: bool = False

    @property
    def total(self) -> int:
        return sum(self.flows.values())

    def __eq__(self, other) -> bool:
        return (isinstance(other, ODMatrix) and self.bucket_s == other.bucket_s
                and +self.flows == +other.flows)

    def __add__(self, other: "ODMatrix") -> "ODMatrix":
        if self.bucket_s != other.bucket_s:
            raise InvalidConfig("cannot add matrices with different bucketing")
        return ODMatrix(self.flows + other.flows, self.bucket_s, self.source, self.estimate or other.estimate)

    def pair_totals(self) -> Counter:
        out: Counter = Counter()
        for (o, d, _), v in self.flows.items():
            out[(o, d)] += v
        return out


def _bucket(ts: int, bucket_s: int) -> int:
    return ts - ts % bucket_s


def build_od(paths: Iterable, zones: ZoneMap, bucket_s: int = 3600) -> ODMatrix:
    """Raw mode: one trip per path from its origin to its destination anchor, bucketed by departure."""
    if bucket_s <= 0:
        raise InvalidConfig("bucketing must be positive")
    flows: Counter = Counter()
    for p in paths:
        flows[(zones[p.origin_cell], zones[p.dest_cell], _bucket(p.depart_ts, bucket_s))] += 1
    return ODMatrix(flows, bucket_s)


def build_od_anonymized(paths: Iterable, published: Iterable, zones: ZoneMap, L: int,
                        time_bucketing: str, bucket_s: int = 3600) -> ODMatrix:
    """Estimate flows from the anonymized dataset.

    A trip counts only when both its first and its last window survived
    suppression, so the result never exceeds the raw matrix. This runs on
    the operator side, where paths are still available; the result carries
    no path-level information beyond the counts.
    """
    from .anonymizer.kanon import path_windows

    if bucket_s <= 0:
        raise InvalidConfig("bucketing must be positive")
    keys = {(tuple(w.window), w.bucket) for w in published}
    flows: Counter = Counter()
    for p in paths:
        ws = list(path_windows(p.timed_cells(), L, time_bucketing))
        if ws and ws[0] in keys and ws[-1] in keys:
            flows[(zones[p.origin_cell], zones[p.dest_cell], _bucket(p.depart_ts, bucket_s))] += 1
    return ODMatrix(flows, bucket_s, source="anonymized", estimate=True)


def od_from_trips(trips: Iterable, bucket_s: int = 3600) -> ODMatrix:
    """Reference matrix from simulator ground-truth trips."""
    flows: Counter = Counter()
    for t in trips:
        flows[(t.origin_zone, t.dest_zone, _bucket(t.depart_ts, bucket_s))] += 1
    return ODMatrix(flows, bucket_s, source="truth")


def export_od(m: ODMatrix, path) -> None:
    rows = sorted((o, d, t, t + m.bucket_s, v) for (o, d, t), v in m.flows.items() if v)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OD_HEADER)
        w.writerows(rows)


def read_od(path, source: str = "raw", estimate: bool = False, bucket_s: int | None = None) -> ODMatrix:
    """Inverse of :func:`export_od`. ``bucket_s`` is inferred from the rows unless given."""
    flows: Counter = Counter()
    bucket = bucket_s
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != OD_HEADER:
            raise ParseError(path, 1, "bad O-D header")
        for row in reader:
            if len(row) != 5:
                raise ParseError(path, reader.line_num, "expected 5 fields")
            o, d, t0, t1, v = row
            t0, t1, v = int(t0), int(t1), int(v)
            if bucket is not None and t1 - t0 != bucket:
                raise ParseError(path, reader.line_num, f"bucket width {t1 - t0}, expected {bucket}")
            bucket = t1 - t0
            flows[(o, d, t0)] += v
    return ODMatrix(flows, bucket or 3600, source, estimate)


def export_heatmap(m: ODMatrix, path) -> None:
    """Long-format zone-pair totals across all time buckets, for plotting."""
    rows = sorted(m.pair_totals().items())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["origin_zone", "dest_zone", "flow"])
        w.writerows((o, d, v) for (o, d), v in rows if v)
