"""Alternative publishable datasets: density graph, pseudonym rotation, cloaking, synthetic population."""

from __future__ import annotations

import csv
import hashlib
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ..errors import InvalidConfig
from ..ingest import AnnotatedStream
from ..records import NetworkEvent

log = logging.getLogger(__name__)

ABSENT = "-"


@dataclass(frozen=True)
class DensityGraphMode:
    bucket_s: int = 3600


@dataclass(frozen=True)
class RotateMode:
    period_s: float = 86400.0
    seed: int = 0


@dataclass(frozen=True)
class CloakMode:
    min_users: int = 5
    grid: int = 6          # finest quadtree level
    slot_s: int = 3600


@dataclass(frozen=True)
class SyntheticMode:
    seed: int = 0
    n_agents: int = 1000
    days: int = 7


# ---------------------------------------------------------------------------
# density graph


@dataclass
class DensityGraph:
    """Identifier-free (cell, t_start, distinct users) points."""

    points: list[tuple[str, int, int]]
    bucket_s: int

    def write(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cell", "t_start", "count"])
            w.writerows(self.points)


def density_graph(stream: AnnotatedStream, mode: DensityGraphMode) -> DensityGraph:
    if mode.bucket_s <= 0:
        raise InvalidConfig("bucket_s must be positive")
    users: dict[tuple[str, int], set] = defaultdict(set)
    for e in stream.events:
        users[(e.cell, e.ts - e.ts % mode.bucket_s)].add(e.sub)
    return DensityGraph([(c, t, len(u)) for (c, t), u in sorted(users.items())], mode.bucket_s)


# ---------------------------------------------------------------------------
# pseudonym rotation


def rotate_pseudonyms(stream: AnnotatedStream, mode: RotateMode) -> AnnotatedStream:
    """Replace each pseudonym with a fresh one every ``period_s`` seconds.

    Each pseudonym rotates at its own random phase so that all rotations do
    not coincide. Demographics are dropped for finite periods because a
    demographic record keyed by every rotated pseudonym would relink them.
    An infinite period returns the input unchanged.
    """
    if not mode.period_s > 0:
        raise InvalidConfig("period_s must be positive")
    if math.isinf(mode.period_s):
        return stream
    period = int(mode.period_s)
    key = hashlib.sha256(b"mobmine-rotate\x00" + str(mode.seed).encode()).digest()[:32]
    phase_cache: dict[str, int] = {}
    name_cache: dict[tuple[str, int], str] = {}

    def phase(p):
        if p not in phase_cache:
            h = hashlib.blake2b(b"phase\x00" + p.encode(), key=key, digest_size=8).digest()
            phase_cache[p] = int.from_bytes(h, "little") % period
        return phase_cache[p]

    def rotated(p, ts):
        epoch = (ts + phase(p)) // period
        name = name_cache.get((p, epoch))
        if name is None:
            name = hashlib.blake2b(f"{p}\x00{epoch}".encode(), key=key, digest_size=32).hexdigest()
            name_cache[(p, epoch)] = name
        return name

    events = [NetworkEvent(e.ts, rotated(e.sub, e.ts), e.kind, e.cell) for e in stream.events]
    events.sort(key=NetworkEvent.sort_key)
    return AnnotatedStream(events, {}, stream.provenance)


# ---------------------------------------------------------------------------
# spatial cloaking


@dataclass
class CloakedDataset:
    records: list[tuple[str, int, str]]          # (pseudonym, slot start, region id)
    regions: dict[str, tuple[float, float, float, float]]
    region_cells: dict[str, frozenset] = field(default_factory=dict, repr=False)
    slot_s: int = 3600

    def write(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["pseud", "t_start", "region", "lat_min", "lon_min", "lat_max", "lon_max"])
            for p, t, r in self.records:
                w.writerow([p, t, r, *self.regions[r]])


class _Quadtree:
    def __init__(self, net, depth: int):
        lat0, lon0, lat1, lon1 = net.bbox()
        pad_lat, pad_lon = (lat1 - lat0) * 1e-6 + 1e-9, (lon1 - lon0) * 1e-6 + 1e-9
        self.box = (lat0 - pad_lat, lon0 - pad_lon, lat1 + pad_lat, lon1 + pad_lon)
        self.depth = depth
        self.cell_xy = {c: (s.lat, s.lon) for c, s in net.cells.items()}

    def region(self, cell: str, level: int) -> str:
        lat0, lon0, lat1, lon1 = self.box
        n = 1 << level
        lat, lon = self.cell_xy[cell]
        iy = min(int((lat - lat0) / (lat1 - lat0) * n), n - 1)
        ix = min(int((lon - lon0) / (lon1 - lon0) * n), n - 1)
        return f"L{level}_{iy}_{ix}"

    def bounds(self, region: str) -> tuple[float, float, float, float]:
        level, iy, ix = (int(x) for x in region[1:].split("_"))
        lat0, lon0, lat1, lon1 = self.box
        n = 1 << level
        dl, dn = (lat1 - lat0) / n, (lon1 - lon0) / n
        return (round(lat0 + iy * dl, 6), round(lon0 + ix * dn, 6),
                round(lat0 + (iy + 1) * dl, 6), round(lon0 + (ix + 1) * dn, 6))


def cloak(stream: AnnotatedStream, net, mode: CloakMode) -> CloakedDataset:
    """Blur each observation to the finest quadtree region holding >= min_users users in its slot."""
    if mode.min_users < 1 or mode.grid < 0 or mode.slot_s <= 0:
        raise InvalidConfig("cloak needs min_users >= 1, grid >= 0, slot_s > 0")
    tree = _Quadtree(net, mode.grid)
    whole = "L0_0_0"
    if mode.min_users > stream.n_pseudonyms:
        log.warning("min_users %d exceeds population %d; every location becomes the whole map",
                    mode.min_users, stream.n_pseudonyms)
    levels = range(mode.grid, -1, -1)
    region_of = {c: [tree.region(c, lv) for lv in levels] for c in net.cells}
    members: dict[str, set] = defaultdict(set)
    for c, regions in region_of.items():
        for r in regions:
            members[r].add(c)
    # distinct (slot, user, cell) sightings are all that matter
    by_slot: dict[int, set] = defaultdict(set)
    for e in stream.events:
        by_slot[e.ts - e.ts % mode.slot_s].add((e.sub, e.cell))
    records = set()
    for slot, seen in by_slot.items():
        users_in: dict[str, set] = defaultdict(set)
        for sub, cell in seen:
            for r in region_of[cell]:
                users_in[r].add(sub)
        for sub, cell in seen:
            region = next((r for r in region_of[cell] if len(users_in[r]) >= mode.min_users), whole)
            records.add((sub, slot, region))
    recs = sorted(records)
    used = sorted({r for _, _, r in recs} | {whole})
    return CloakedDataset(recs, {r: tree.bounds(r) for r in used},
                          {r: frozenset(members[r]) for r in used}, mode.slot_s)


# ---------------------------------------------------------------------------
# synthetic population


@dataclass
class SyntheticAgent:
    agent_id: str
    age: int
    gender: str
    home_zone: str
    days: list[tuple[str, ...]]   # 24 hourly states per day, zone or ABSENT


@dataclass
class SyntheticDataset:
    agents: list[SyntheticAgent]

    def write(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["agent", "age", "gender", "home_zone", "day", *[f"h{h:02d}" for h in range(24)]])
            for a in self.agents:
                for d, states in enumerate(a.days):
                    w.writerow([a.agent_id, a.age, a.gender, a.home_zone, d, *states])


def hourly_states(stream: AnnotatedStream, zones: Mapping[str, str]) -> dict[str, list[tuple[str, ...]]]:
    """Per pseudonym, one 24-slot state tuple per UTC day spanned by the stream.

    The state of an hour is the zone of the most frequent cell observed in
    it (ties to the smaller cell id), or ABSENT.
    """
    if not stream.events:
        return {}
    day0 = stream.events[0].ts // 86400
    day1 = stream.events[-1].ts // 86400
    n_days = day1 - day0 + 1
    counts: dict[str, dict[tuple[int, int], Counter]] = defaultdict(lambda: defaultdict(Counter))
    for e in stream.events:
        counts[e.sub][(e.ts // 86400 - day0, (e.ts % 86400) // 3600)][e.cell] += 1
    out = {}
    for p in sorted(counts):
        grid = [[ABSENT] * 24 for _ in range(n_days)]
        for (d, h), cnt in counts[p].items():
            cell = min(cnt.items(), key=lambda kv: (-kv[1], kv[0]))[0]
            grid[d][h] = zones[cell]
        out[p] = [tuple(row) for row in grid]
    return out


def _modal(states, hours) -> str | None:
    c = Counter(s for day in states for h in hours if (s := day[h]) != ABSENT)
    if not c:
        return None
    return min(c.items(), key=lambda kv: (-kv[1], kv[0]))[0]


def presence(days_by_agent) -> dict[tuple[str, int], float]:
    """Share of all non-absent agent-hours spent in each (zone, hour)."""
    c: Counter = Counter()
    for days in days_by_agent:
        for day in days:
            for h, s in enumerate(day):
                if s != ABSENT:
                    c[(s, h)] += 1
    total = sum(c.values())
    return {k: v / total for k, v in sorted(c.items())} if total else {}


def presence_l1(a: Mapping, b: Mapping) -> float:
    return sum(abs(a.get(k, 0.0) - b.get(k, 0.0)) for k in set(a) | set(b))


def synthesize(stream: AnnotatedStream, zones: Mapping[str, str], mode: SyntheticMode) -> SyntheticDataset:
    """Sample artificial agents from an hour-indexed Markov chain over zones.

    The chain's initial distribution and per-hour transitions (including
    23h -> 0h of the next day) are fitted on the source, so hourly zone
    presence and zone-to-zone flows follow the source in expectation.
    Age and gender are drawn independently from the marginals of the
    agent's home zone.
    """
    if mode.n_agents < 0 or mode.days < 1:
        raise InvalidConfig("synthetic mode needs n_agents >= 0 and days >= 1")
    states = hourly_states(stream, zones)
    rng = np.random.default_rng(mode.seed)
    if not states:
        return SyntheticDataset([])
    vocab = sorted({s for days in states.values() for day in days for s in day})
    idx = {s: i for i, s in enumerate(vocab)}
    n = len(vocab)
    init = np.zeros(n)
    trans = np.zeros((24, n, n))
    for days in states.values():
        init[idx[days[0][0]]] += 1
        seq = [s for day in days for s in day]
        for t in range(len(seq) - 1):
            trans[t % 24, idx[seq[t]], idx[seq[t + 1]]] += 1
    init /= init.sum()
    rows = trans.sum(axis=2, keepdims=True)
    # unseen (hour, state) rows fall back to staying put
    stay = np.broadcast_to(np.eye(n), trans.shape)
    trans = np.where(rows > 0, trans / np.where(rows > 0, rows, 1), stay)
    cum = np.cumsum(trans, axis=2)
    cum[..., -1] = 1.0

    night = range(0, 6)
    ages: dict[str, list[int]] = defaultdict(list)
    genders: dict[str, list[str]] = defaultdict(list)
    for p, days in states.items():
        rec = stream.demographics.get(p)
        home = _modal(days, night)
        if rec is not None and home is not None:
            ages[home].append(rec.age)
            genders[home].append(rec.gender)
    all_ages = [a for v in ages.values() for a in v] or [0]
    all_genders = [g for v in genders.values() for g in v] or ["*"]

    width = max(5, len(str(mode.n_agents)))
    cur = rng.choice(n, size=mode.n_agents, p=init)
    grid = np.empty((mode.n_agents, mode.days * 24), dtype=np.int64)
    for t in range(mode.days * 24):
        grid[:, t] = cur
        u = rng.random(mode.n_agents)
        cur = (cum[t % 24, cur] < u[:, None]).sum(axis=1)
        cur = np.minimum(cur, n - 1)
    agents = []
    for i in range(mode.n_agents):
        days = [tuple(vocab[j] for j in grid[i, d * 24:(d + 1) * 24]) for d in range(mode.days)]
        home = _modal(days, night) or ABSENT
        a_pool = ages.get(home) or all_ages
        g_pool = genders.get(home) or all_genders
        agents.append(SyntheticAgent(f"syn{i:0{width}d}", int(a_pool[rng.integers(len(a_pool))]),
                                     g_pool[rng.integers(len(g_pool))], home, days))
    return SyntheticDataset(agents)


def baseline_transform(stream: AnnotatedStream, mode, net=None, zones: Mapping[str, str] | None = None):
    """Dispatch on the mode dataclass."""
    if isinstance(mode, DensityGraphMode):
        return density_graph(stream, mode)
    if isinstance(mode, RotateMode):
        return rotate_pseudonyms(stream, mode)
    if isinstance(mode, CloakMode):
        if net is None:
            raise InvalidConfig("cloak mode needs the cell map")
        return cloak(stream, net, mode)
    if isinstance(mode, SyntheticMode):
        if zones is None:
            raise InvalidConfig("synthetic mode needs a zone map")
        return synthesize(stream, zones, mode)
    raise InvalidConfig(f"unknown baseline mode {mode!r}")
