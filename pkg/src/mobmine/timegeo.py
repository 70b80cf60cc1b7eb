"""Time-geographic constructs from sparse per-pseudonym event sequences.

A *station* is a maximal run of a pseudonym's events whose cells are pairwise
adjacent (or identical) and which spans at least ``dwell_min_s``; ping-pong
between neighbouring cells stays inside one station. The events between two
consecutive stations form a *space-time path*. Paths that meet in the same
cell during the same time slot are grouped into *bundles*.
"""

from __future__ import annotations

import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .records import NetworkEvent

log = logging.getLogger(__name__)


@dataclass
class TimeGeoConfig:
    dwell_min_s: int = 1800
    bundle_min_members: int = 2
    time_quantum_s: int = 3600


@dataclass(frozen=True)
class Station:
    station_id: str
    pseudonym: str
    cell_set: frozenset[str]
    enter_ts: int
    exit_ts: int
    n_events: int
    modal_cell: str

    @property
    def dwell_s(self) -> int:
        return self.exit_ts - self.enter_ts

    def to_json(self) -> dict:
        return {"station_id": self.station_id, "pseud": self.pseudonym, "cells": sorted(self.cell_set),
                "enter_ts": self.enter_ts, "exit_ts": self.exit_ts, "n_events": self.n_events,
                "modal_cell": self.modal_cell}

    @classmethod
    def from_json(cls, d: Mapping) -> "Station":
        return cls(d["station_id"], d["pseud"], frozenset(d["cells"]), int(d["enter_ts"]),
                   int(d["exit_ts"]), int(d["n_events"]), d["modal_cell"])


@dataclass(frozen=True)
class Hop:
    cell: str
    first_ts: int
    last_ts: int


@dataclass(frozen=True)
class SpaceTimePath:
    path_id: str
    pseudonym: str
    hops: tuple[Hop, ...]
    origin: str
    dest: str
    origin_cell: str
    dest_cell: str
    depart_ts: int
    arrive_ts: int

    @property
    def duration_s(self) -> int:
        return self.arrive_ts - self.depart_ts

    def timed_cells(self) -> list[tuple[str, int]]:
        """Origin anchor, intermediate hops, destination anchor; repeated cells collapsed."""
        seq = [(self.origin_cell, self.depart_ts)]
        seq += [(h.cell, h.first_ts) for h in self.hops]
        seq.append((self.dest_cell, self.arrive_ts))
        out = [seq[0]]
        for cell, ts in seq[1:]:
            if cell != out[-1][0]:
                out.append((cell, ts))
        return out

    @property
    def cells(self) -> tuple[str, ...]:
        return tuple(c for c, _ in self.timed_cells())

    def to_json(self) -> dict:
        return {"path_id": self.path_id, "pseud": self.pseudonym,
                "hops": [[h.cell, h.first_ts, h.last_ts] for h in self.hops],
                "origin": self.origin, "dest": self.dest, "duration_s": self.duration_s,
                "origin_cell": self.origin_cell, "dest_cell": self.dest_cell,
                "depart_ts": self.depart_ts, "arrive_ts": self.arrive_ts}

    @classmethod
    def from_json(cls, d: Mapping) -> "SpaceTimePath":
        return cls(d["path_id"], d["pseud"], tuple(Hop(c, int(a), int(b)) for c, a, b in d["hops"]),
                   d["origin"], d["dest"], d["origin_cell"], d["dest_cell"], int(d["depart_ts"]),
                   int(d["arrive_ts"]))


@dataclass(frozen=True)
class Bundle:
    bundle_id: str
    member_path_ids: tuple[str, ...]
    shared_cells: tuple[str, ...]
    time_window: tuple[int, int]

    def to_json(self) -> dict:
        return {"bundle_id": self.bundle_id, "members": list(self.member_path_ids),
                "shared_cells": list(self.shared_cells), "time_window": list(self.time_window)}


def _events_of(stream) -> dict[str, list[NetworkEvent]]:
    events = getattr(stream, "events", stream)
    grouped: dict[str, list[NetworkEvent]] = defaultdict(list)
    for e in events:
        grouped[e.sub].append(e)
    for evs in grouped.values():
        evs.sort(key=NetworkEvent.sort_key)
    return dict(sorted(grouped.items()))


def _runs(events: Sequence[NetworkEvent], adjacency: Mapping[str, frozenset[str]]):
    """Split into maximal runs whose cells form a clique in the adjacency graph."""
    runs = []
    start, cells = 0, set()
    for i, e in enumerate(events):
        c = e.cell
        if not cells or c in cells or all(c in adjacency.get(x, ()) for x in cells):
            cells.add(c)
            continue
        runs.append((start, i, frozenset(cells)))
        start, cells = i, {c}
    if cells:
        runs.append((start, len(events), frozenset(cells)))
    return runs


def _modal_cell(events: Sequence[NetworkEvent]) -> str:
    counts = Counter(e.cell for e in events)
    first, last = {}, {}
    for e in events:
        first.setdefault(e.cell, e.ts)
        last[e.cell] = e.ts
    return min(counts, key=lambda c: (-counts[c], -(last[c] - first[c]), c))


def _station_runs(events, adjacency, dwell_min_s):
    for start, end, cells in _runs(events, adjacency):
        chunk = events[start:end]
        if len(chunk) >= 2 and chunk[-1].ts - chunk[0].ts >= dwell_min_s:
            yield start, end, cells, chunk


def detect_stations(stream, adjacency: Mapping[str, frozenset[str]],
                    cfg: TimeGeoConfig | None = None) -> list[Station]:
    """Stations for every pseudonym in ``stream`` (an AnnotatedStream or an event iterable)."""
    cfg = cfg or TimeGeoConfig()
    adjacency = getattr(adjacency, "adjacency", adjacency)
    out = []
    for pseud, events in _events_of(stream).items():
        for _, _, cells, chunk in _station_runs(events, adjacency, cfg.dwell_min_s):
            out.append((pseud, chunk[0].ts, cells, chunk[-1].ts, len(chunk), _modal_cell(chunk)))
    width = max(7, len(str(len(out))))
    return [Station(f"s{i:0{width}d}", p, cells, enter, exit_, n, modal)
            for i, (p, enter, cells, exit_, n, modal) in enumerate(out)]


def _locate(events, stations):
    """Event index span of each station, walking both sequences in order."""
    spans, cursor = [], 0
    for st in stations:
        i = cursor
        while i < len(events):
            if events[i].ts == st.enter_ts and events[i].cell in st.cell_set:
                j = i + st.n_events
                if (j <= len(events) and events[j - 1].ts == st.exit_ts
                        and all(e.cell in st.cell_set for e in events[i:j])):
                    break
            i += 1
        else:
            raise ValueError(f"station {st.station_id} does not match the event stream")
        spans.append((i, j))
        cursor = j
    return spans


def _hops(events: Sequence[NetworkEvent]) -> tuple[Hop, ...]:
    hops: list[Hop] = []
    for e in events:
        if hops and hops[-1].cell == e.cell:
            hops[-1] = Hop(e.cell, hops[-1].first_ts, e.ts)
        else:
            hops.append(Hop(e.cell, e.ts, e.ts))
    return tuple(hops)


def extract_paths(stream, stations: Iterable[Station]) -> list[SpaceTimePath]:
    """One path per pair of consecutive stations of the same pseudonym.

    Paths without intermediate events are still emitted: the origin and
    destination anchors alone carry the trip.
    """
    by_pseud: dict[str, list[Station]] = defaultdict(list)
    for st in stations:
        by_pseud[st.pseudonym].append(st)
    raw = []
    too_few = 0
    for pseud, events in _events_of(stream).items():
        sts = sorted(by_pseud.get(pseud, []), key=lambda s: s.enter_ts)
        if len(sts) < 2:
            too_few += 1
            continue
        spans = _locate(events, sts)
        for (a, (_, a_end)), (b, (b_start, _)) in zip(zip(sts, spans), zip(sts[1:], spans[1:])):
            raw.append((pseud, _hops(events[a_end:b_start]), a, b))
    if too_few:
        log.info("%d pseudonyms have fewer than two stations and yield no path", too_few)
    width = max(7, len(str(len(raw))))
    return [SpaceTimePath(f"p{i:0{width}d}", p, hops, a.station_id, b.station_id, a.modal_cell,
                          b.modal_cell, a.exit_ts, b.enter_ts)
            for i, (p, hops, a, b) in enumerate(raw)]


@dataclass
class Coverage:
    n_events: int
    in_stations: int
    in_paths: int
    unattributed: int
    pseudonyms_without_paths: int


def coverage(stream, stations: Sequence[Station], paths: Sequence[SpaceTimePath]) -> Coverage:
    """How the stream's events split between stations, paths and neither."""
    per_station = sum(s.n_events for s in stations)
    per_path = 0
    by_pseud = defaultdict(list)
    for p in paths:
        by_pseud[p.pseudonym].append(p)
    n_events = 0
    no_paths = 0
    st_by = defaultdict(list)
    for s in stations:
        st_by[s.pseudonym].append(s)
    for pseud, events in _events_of(stream).items():
        n_events += len(events)
        sts = sorted(st_by.get(pseud, []), key=lambda s: s.enter_ts)
        if len(sts) < 2:
            no_paths += 1
            continue
        spans = _locate(events, sts)
        per_path += sum(b_start - a_end for (_, a_end), (b_start, _) in zip(spans, spans[1:]))
    return Coverage(n_events, per_station, per_path, n_events - per_station - per_path, no_paths)


# ---------------------------------------------------------------------------
# bundles


def _slots(path: SpaceTimePath, q: int):
    keys = set()
    for cell, ts in path.timed_cells():
        keys.add((cell, ts // q))
    for h in path.hops:
        for slot in range(h.first_ts // q, h.last_ts // q + 1):
            keys.add((h.cell, slot))
    return keys


def bundle_paths(paths: Sequence[SpaceTimePath], cfg: TimeGeoConfig | None = None) -> list[Bundle]:
    """Group paths that share at least one (cell, time slot) pair, transitively."""
    cfg = cfg or TimeGeoConfig()
    if cfg.bundle_min_members < 2:
        raise ValueError("bundle_min_members must be >= 2")
    q = cfg.time_quantum_s
    paths = sorted(paths, key=lambda p: p.path_id)
    parent = list(range(len(paths)))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    owners: dict[tuple[str, int], list[int]] = defaultdict(list)
    for i, p in enumerate(paths):
        for key in _slots(p, q):
            owners[key].append(i)
    for members in owners.values():
        root = find(members[0])
        for m in members[1:]:
            r = find(m)
            if r != root:
                parent[max(r, root)] = min(r, root)
                root = min(r, root)
    groups: dict[int, list[int]] = defaultdict(list)
    for i in range(len(paths)):
        groups[find(i)].append(i)

    found = []
    for members in groups.values():
        if len(members) < cfg.bundle_min_members:
            continue
        mset = set(members)
        shared = sorted(k for k, own in owners.items() if len(mset.intersection(own)) >= 2)
        # order shared keys by slot, then by when the first member reaches the cell
        first_seen = {}
        for i in members:
            for cell, ts in paths[i].timed_cells():
                first_seen[cell] = min(first_seen.get(cell, ts), ts)
        shared.sort(key=lambda k: (k[1], first_seen.get(k[0], 0), k[0]))
        cells: list[str] = []
        for cell, _ in shared:
            if not cells or cells[-1] != cell:
                cells.append(cell)
        slots = [s for _, s in shared]
        found.append((tuple(paths[i].path_id for i in sorted(members)), tuple(cells),
                      (min(slots) * q, (max(slots) + 1) * q)))
    found.sort()
    width = max(5, len(str(len(found))))
    return [Bundle(f"b{i:0{width}d}", m, c, w) for i, (m, c, w) in enumerate(found)]


# ---------------------------------------------------------------------------
# prisms


def prism_violations(path: SpaceTimePath, net, max_speed_mps: float = 40.0) -> list[tuple[int, int]]:
    """Consecutive observations that no one could connect at ``max_speed_mps``.

    Two cells are reachable in ``dt`` seconds when the gap between their
    coverage circles is at most ``max_speed_mps * dt``. Returns index pairs
    into :meth:`SpaceTimePath.timed_cells`.
    """
    from .synthnet import haversine_m

    seq = path.timed_cells()
    bad = []
    for i in range(len(seq) - 1):
        (a, ta), (b, tb) = seq[i], seq[i + 1]
        ca, cb = net.cells[a], net.cells[b]
        gap = float(haversine_m(ca.lat, ca.lon, cb.lat, cb.lon)) - ca.radius_m - cb.radius_m
        if gap > max_speed_mps * max(tb - ta, 0):
            bad.append((i, i + 1))
    return bad


# ---------------------------------------------------------------------------
# serialization


def _write_jsonl(rows, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in rows:
            fh.write(json.dumps(r, separators=(",", ":")) + "\n")


def _read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_stations(stations, path) -> None:
    _write_jsonl((s.to_json() for s in stations), path)


def read_stations(path) -> list[Station]:
    return [Station.from_json(d) for d in _read_jsonl(path)]


def write_paths(paths, path) -> None:
    _write_jsonl((p.to_json() for p in paths), path)


def read_paths(path) -> list[SpaceTimePath]:
    return [SpaceTimePath.from_json(d) for d in _read_jsonl(path)]


def write_bundles(bundles, path) -> None:
    _write_jsonl((b.to_json() for b in bundles), path)
