"""Synthetic cell networks, subscriber populations and passive network events.

The simulator is the ground-truth oracle for everything downstream: agents hop
along adjacency shortest paths at a constant per-hop duration, so every trip,
every Location Area crossing and every paging instant is known exactly.
"""

from __future__ import annotations

import bisect
import csv
import json
import logging
import math
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InvalidConfig
from .records import DemoRecord, EventKind, NetworkEvent, sort_events

log = logging.getLogger(__name__)

EARTH_RADIUS_M = 6371008.8
URBAN_RADIUS = (100.0, 3000.0)
RURAL_RADIUS = (3000.1, 35000.0)
# 2024-01-01T00:00:00Z, a Monday
DEFAULT_START_TS = 1704067200


def haversine_m(lat1, lon1, lat2, lon2):
    lat1, lon1, lat2, lon2 = map(np.radians, (lat1, lon1, lat2, lon2))
    a = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.minimum(a, 1.0)))


@dataclass(frozen=True)
class CellSite:
    cell_id: str
    lat: float
    lon: float
    radius_m: float
    la_id: str

    @property
    def is_urban(self) -> bool:
        return self.radius_m <= URBAN_RADIUS[1]


@dataclass
class CellMap:
    """Cells keyed by id plus the symmetric coverage-overlap adjacency."""

    cells: dict[str, CellSite]
    adjacency: dict[str, frozenset[str]]
    _coords: np.ndarray | None = field(default=None, repr=False, compare=False)

    @classmethod
    def from_sites(cls, sites: Iterable[CellSite]) -> "CellMap":
        ordered = sorted(sites, key=lambda s: s.cell_id)
        cells = {s.cell_id: s for s in ordered}
        if len(cells) != len(ordered):
            raise InvalidConfig("duplicate cell_id in cell map")
        return cls(cells=cells, adjacency=_overlap_adjacency(ordered))

    def __len__(self) -> int:
        return len(self.cells)

    def __contains__(self, cell_id) -> bool:
        return cell_id in self.cells

    @property
    def cell_ids(self) -> list[str]:
        return list(self.cells)

    def la_of(self, cell_id: str) -> str:
        return self.cells[cell_id].la_id

    def location_areas(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {}
        for c in self.cells.values():
            out.setdefault(c.la_id, []).append(c.cell_id)
        return dict(sorted(out.items()))

    def neighbors(self, cell_id: str) -> frozenset[str]:
        return self.adjacency[cell_id]

    def hop_distances(self, source: str) -> dict[str, int]:
        dist = {source: 0}
        queue = deque([source])
        while queue:
            u = queue.popleft()
            for v in sorted(self.adjacency[u]):
                if v not in dist:
                    dist[v] = dist[u] + 1
                    queue.append(v)
        return dist

    def shortest_path(self, source: str, target: str) -> list[str] | None:
        """BFS path with neighbors visited in sorted order, so ties resolve deterministically."""
        if source == target:
            return [source]
        parent = {source: None}
        queue = deque([source])
        while queue:
            u = queue.popleft()
            for v in sorted(self.adjacency[u]):
                if v in parent:
                    continue
                parent[v] = u
                if v == target:
                    path = [v]
                    while parent[path[-1]] is not None:
                        path.append(parent[path[-1]])
                    return path[::-1]
                queue.append(v)
        return None

    def bbox(self) -> tuple[float, float, float, float]:
        lats = [c.lat for c in self.cells.values()]
        lons = [c.lon for c in self.cells.values()]
        return min(lats), min(lons), max(lats), max(lons)

    def coords(self) -> np.ndarray:
        if self._coords is None:
            self._coords = np.array([(c.lat, c.lon) for c in self.cells.values()], dtype=float)
        return self._coords

    def nearest_cell(self, lat: float, lon: float) -> str:
        xy = self.coords()
        d = haversine_m(xy[:, 0], xy[:, 1], lat, lon)
        return self.cell_ids[int(np.argmin(d))]


def _overlap_adjacency(sites: Sequence[CellSite], block: int = 512) -> dict[str, frozenset[str]]:
    n = len(sites)
    lat = np.array([s.lat for s in sites])
    lon = np.array([s.lon for s in sites])
    rad = np.array([s.radius_m for s in sites])
    adj: dict[str, set[str]] = {s.cell_id: set() for s in sites}
    for lo in range(0, n, block):
        hi = min(n, lo + block)
        d = haversine_m(lat[lo:hi, None], lon[lo:hi, None], lat[None, :], lon[None, :])
        hit = d < rad[lo:hi, None] + rad[None, :]
        for i, j in zip(*np.nonzero(hit)):
            i += lo
            if i != j:
                adj[sites[i].cell_id].add(sites[j].cell_id)
    return {k: frozenset(v) for k, v in adj.items()}


# ---------------------------------------------------------------------------
# network generation


@dataclass
class NetworkConfig:
    n_cells: int = 400
    # (lat_min, lon_min, lat_max, lon_max)
    bbox: tuple[float, float, float, float] = (59.05, 17.55, 59.65, 18.65)
    urban_fraction: float = 0.75
    n_las: int = 8
    # side of the dense urban core relative to the bbox side
    urban_core_side: float = 0.25


def _validate_network_config(cfg: NetworkConfig) -> None:
    if cfg.n_cells < 1:
        raise InvalidConfig("n_cells must be >= 1")
    if cfg.n_las < 1:
        raise InvalidConfig("n_las must be >= 1")
    if cfg.n_las > cfg.n_cells:
        raise InvalidConfig("n_las must not exceed n_cells")
    lat0, lon0, lat1, lon1 = cfg.bbox
    if not (-90 <= lat0 < lat1 <= 90 and -180 <= lon0 < lon1 <= 180):
        raise InvalidConfig(f"malformed bbox {cfg.bbox}")
    if not 0.0 <= cfg.urban_fraction <= 1.0:
        raise InvalidConfig("urban_fraction must be in [0, 1]")
    if not 0.0 < cfg.urban_core_side <= 1.0:
        raise InvalidConfig("urban_core_side must be in (0, 1]")


def generate_network(config: NetworkConfig | None = None, seed: int = 0) -> CellMap:
    """Place urban cells densely in a central core and rural cells sparsely around it.

    Radii follow local cell spacing (0.7x the distance to the third-nearest
    site), clipped to the urban or rural range, so coverage circles overlap
    only with nearby cells. Location Areas are grown over the adjacency graph
    and are therefore contiguous.
    """
    cfg = config or NetworkConfig()
    _validate_network_config(cfg)
    rng = np.random.default_rng(seed)
    lat0, lon0, lat1, lon1 = cfg.bbox
    n = cfg.n_cells
    n_urban = int(round(n * cfg.urban_fraction))
    clat, clon = (lat0 + lat1) / 2, (lon0 + lon1) / 2
    hlat = (lat1 - lat0) * cfg.urban_core_side / 2
    hlon = (lon1 - lon0) * cfg.urban_core_side / 2

    pts = np.empty((n, 2))
    pts[:n_urban, 0] = rng.uniform(clat - hlat, clat + hlat, n_urban)
    pts[:n_urban, 1] = rng.uniform(clon - hlon, clon + hlon, n_urban)
    filled = n_urban
    while filled < n:
        cand = np.column_stack([rng.uniform(lat0, lat1, 4 * n), rng.uniform(lon0, lon1, 4 * n)])
        if n_urban:
            inside = (np.abs(cand[:, 0] - clat) < hlat) & (np.abs(cand[:, 1] - clon) < hlon)
            cand = cand[~inside]
        take = min(len(cand), n - filled)
        pts[filled:filled + take] = cand[:take]
        filled += take
    pts = np.vectorize(lambda v: float(f"{v:.6f}"))(pts)
    urban = np.arange(n) < n_urban

    radii = _spacing_radii(pts, urban)
    width = len(str(n - 1)) if n > 1 else 1
    ids = [f"C{i:0{max(4, width)}d}" for i in range(n)]
    sites = [CellSite(ids[i], float(pts[i, 0]), float(pts[i, 1]), float(radii[i]), "") for i in range(n)]
    sites = _connect_components(sites)
    adjacency = _overlap_adjacency(sites)
    la_of = _grow_location_areas([s.cell_id for s in sites], adjacency, pts, cfg.n_las, rng)
    sites = [CellSite(s.cell_id, s.lat, s.lon, s.radius_m, la_of[s.cell_id]) for s in sites]
    return CellMap(cells={s.cell_id: s for s in sites}, adjacency=adjacency)


def _spacing_radii(pts: np.ndarray, urban: np.ndarray) -> np.ndarray:
    n = len(pts)
    radii = np.where(urban, 1000.0, 10000.0)
    if n > 1:
        d = haversine_m(pts[:, None, 0], pts[:, None, 1], pts[None, :, 0], pts[None, :, 1])
        np.fill_diagonal(d, np.inf)
        kth = min(3, n - 1) - 1
        radii = 0.7 * np.partition(d, kth, axis=1)[:, kth]
    out = np.where(urban, np.clip(radii, *URBAN_RADIUS), np.clip(radii, *RURAL_RADIUS))
    return np.array([float(f"{r:.1f}") for r in out])


def _components(ids: Sequence[str], adjacency: Mapping[str, frozenset[str]]) -> list[list[str]]:
    seen: set[str] = set()
    comps = []
    for start in ids:
        if start in seen:
            continue
        comp, queue = [], deque([start])
        seen.add(start)
        while queue:
            u = queue.popleft()
            comp.append(u)
            for v in adjacency[u]:
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        comps.append(sorted(comp))
    return comps


def _connect_components(sites: list[CellSite]) -> list[CellSite]:
    """Grow radii (within class bounds) across the closest gap until the map is connected."""
    for _ in range(len(sites)):
        comps = _components([s.cell_id for s in sites], _overlap_adjacency(sites))
        if len(comps) <= 1:
            return sites
        index = {s.cell_id: i for i, s in enumerate(sites)}
        small = min(comps, key=lambda c: (len(c), c[0]))
        members = np.array([index[c] for c in small])
        others = np.array(sorted(set(range(len(sites))) - set(members.tolist())))
        lat = np.array([s.lat for s in sites])
        lon = np.array([s.lon for s in sites])
        d = haversine_m(lat[members, None], lon[members, None], lat[None, others], lon[None, others])
        a, b = np.unravel_index(int(np.argmin(d)), d.shape)
        i, j = int(members[a]), int(others[b])
        gap = float(d[a, b]) - sites[i].radius_m - sites[j].radius_m + 1.0
        new = list(sites)
        for k in (i, j):
            cap = URBAN_RADIUS[1] if sites[k].is_urban else RURAL_RADIUS[1]
            grow = min(max(gap, 0.0), cap - new[k].radius_m)
            r = min(math.ceil((new[k].radius_m + grow) * 10) / 10, cap)
            new[k] = CellSite(sites[k].cell_id, sites[k].lat, sites[k].lon, float(f"{r:.1f}"), "")
            gap -= grow
        if gap > 0:
            log.warning("network left disconnected: gap of %.0f m exceeds radius caps", gap)
            return new
        sites = new
    return sites


def _grow_location_areas(ids, adjacency, pts, n_las, rng) -> dict[str, str]:
    index = {c: i for i, c in enumerate(ids)}
    seeds = [ids[int(rng.integers(len(ids)))]]
    best = _hop_dist_all(seeds[0], ids, adjacency)
    while len(seeds) < n_las:
        # farthest-point sampling in hop metric; unreachable cells count as farthest
        cand = max((c for c in ids if c not in seeds), key=lambda c: (best[c], -index[c]))
        seeds.append(cand)
        d = _hop_dist_all(cand, ids, adjacency)
        best = {c: min(best[c], d[c]) for c in ids}
    width = len(str(n_las))
    labels = [f"LA{i + 1:0{max(2, width)}d}" for i in range(n_las)]
    owner: dict[str, int] = {}
    frontiers = [deque([s]) for s in seeds]
    sizes = [0] * n_las
    for k, s in enumerate(seeds):
        owner[s] = k
        sizes[k] = 1
    for k, s in enumerate(seeds):
        frontiers[k] = deque(sorted(adjacency[s]))
    while True:
        live = [k for k in range(n_las) if frontiers[k]]
        if not live:
            break
        k = min(live, key=lambda j: (sizes[j], j))
        while frontiers[k]:
            c = frontiers[k].popleft()
            if c in owner:
                continue
            owner[c] = k
            sizes[k] += 1
            frontiers[k].extend(sorted(v for v in adjacency[c] if v not in owner))
            break
    leftovers = [c for c in ids if c not in owner]
    if leftovers:
        log.warning("%d cells unreachable from any LA seed; assigned to nearest seed", len(leftovers))
        seed_pts = pts[[index[s] for s in seeds]]
        for c in leftovers:
            p = pts[index[c]]
            owner[c] = int(np.argmin(haversine_m(seed_pts[:, 0], seed_pts[:, 1], p[0], p[1])))
    return {c: labels[owner[c]] for c in ids}


def _hop_dist_all(source, ids, adjacency) -> dict[str, float]:
    dist: dict[str, float] = {c: math.inf for c in ids}
    dist[source] = 0
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in adjacency[u]:
            if dist[v] == math.inf:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


# ---------------------------------------------------------------------------
# population


@dataclass(frozen=True)
class DailyRoute:
    cells: tuple[str, ...]
    # departure time-of-day distribution, seconds after midnight UTC
    depart_mean_s: int
    depart_sd_s: int


@dataclass(frozen=True)
class Agent:
    sub_id: str
    home_cell: str
    work_cell: str
    daily_routes: tuple[DailyRoute, ...]
    demographics: DemoRecord

    @property
    def is_stationary(self) -> bool:
        return not self.daily_routes


@dataclass
class Population:
    agents: list[Agent]
    omitted_routes: int = 0

    def __len__(self) -> int:
        return len(self.agents)

    def __iter__(self):
        return iter(self.agents)

    def __getitem__(self, i):
        return self.agents[i]


@dataclass
class PopulationConfig:
    n_agents: int = 1000
    age_mean: float = 41.0
    age_sd: float = 15.0
    age_min: int = 16
    age_max: int = 90
    gender_weights: dict[str, float] = field(default_factory=lambda: {"F": 0.49, "M": 0.49, "X": 0.02})
    # agents that never commute (home == work)
    stationary_fraction: float = 0.05
    errand_fraction: float = 0.3
    hub_fraction: float = 0.05
    hub_weight: float = 25.0
    rural_home_weight: float = 0.4
    min_hops: int = 2
    unique_home_work: bool = False
    morning_s: int = 8 * 3600
    evening_s: int = 17 * 3600
    errand_return_s: int = 19 * 3600 + 1800
    depart_sd_s: int = 1800


def _cell_weights(net: CellMap, rng, cfg: PopulationConfig):
    ids = net.cell_ids
    urban = np.array([net.cells[c].is_urban for c in ids])
    home_w = np.where(urban, 1.0, cfg.rural_home_weight)
    work_w = np.where(urban, 1.0, 0.2)
    urban_idx = np.flatnonzero(urban)
    if len(urban_idx):
        n_hubs = max(1, int(round(cfg.hub_fraction * len(urban_idx))))
        hubs = rng.choice(urban_idx, size=min(n_hubs, len(urban_idx)), replace=False)
        work_w[hubs] = cfg.hub_weight
    return ids, home_w, work_w


def _pick(rng, ids, weights, allowed=None) -> str | None:
    w = np.array(weights, dtype=float)
    if allowed is not None:
        w = w * np.array([c in allowed for c in ids])
    total = w.sum()
    if total <= 0:
        return None
    return ids[int(rng.choice(len(ids), p=w / total))]


def _demographics(rng, sub, home_cell, net, zones, cfg: PopulationConfig) -> DemoRecord:
    age = int(np.clip(round(rng.normal(cfg.age_mean, cfg.age_sd)), cfg.age_min, cfg.age_max))
    genders = sorted(cfg.gender_weights)
    p = np.array([cfg.gender_weights[g] for g in genders], dtype=float)
    gender = genders[int(rng.choice(len(genders), p=p / p.sum()))]
    las = list(net.location_areas())
    la_idx = las.index(net.la_of(home_cell))
    postcode = f"{10 + la_idx % 90:02d}{net.cell_ids.index(home_cell) % 1000:03d}"
    return DemoRecord(sub, age, gender, postcode, zones[home_cell])


def _sub_ids(rng, n: int) -> list[str]:
    nums = rng.choice(10**7, size=n, replace=False) if n else []
    return [f"+4670{int(x):07d}" for x in nums]


def generate_population(config: PopulationConfig | None = None, net: CellMap | None = None,
                        seed: int = 0, zones: Mapping[str, str] | None = None) -> Population:
    cfg = config or PopulationConfig()
    if net is None:
        raise InvalidConfig("generate_population needs a CellMap")
    if cfg.n_agents < 0:
        raise InvalidConfig("n_agents must be >= 0")
    zones = zones or {c: net.la_of(c) for c in net.cells}
    rng = np.random.default_rng(seed)
    ids, home_w, work_w = _cell_weights(net, rng, cfg)
    subs = _sub_ids(rng, cfg.n_agents)
    used_pairs: set[tuple[str, str]] = set()
    agents, omitted = [], 0
    for sub in subs:
        home = _pick(rng, ids, home_w)
        stationary = len(ids) == 1 or rng.random() < cfg.stationary_fraction
        routes: tuple[DailyRoute, ...] = ()
        work = home
        if not stationary:
            dist = net.hop_distances(home)
            far = {c for c, h in dist.items() if h >= cfg.min_hops}
            if cfg.unique_home_work:
                far -= {w for (h, w) in used_pairs if h == home}
            work = _pick(rng, ids, work_w, far)
            if work is None:
                omitted += 1
                work = home
            else:
                routes = _commute_routes(rng, net, home, work, ids, home_w, cfg)
                used_pairs.add((home, work))
        agents.append(Agent(sub, home, work, routes, _demographics(rng, sub, home, net, zones, cfg)))
    if omitted:
        log.warning("%d agents have no reachable work cell; left stationary", omitted)
    return Population(agents, omitted)


def _commute_routes(rng, net, home, work, ids, home_w, cfg) -> tuple[DailyRoute, ...]:
    sd = cfg.depart_sd_s
    out = net.shortest_path(home, work)
    back = net.shortest_path(work, home)
    routes = [DailyRoute(tuple(out), cfg.morning_s, sd)]
    if rng.random() < cfg.errand_fraction:
        dw, dh = net.hop_distances(work), net.hop_distances(home)
        allowed = {c for c in ids if dw.get(c, -1) >= cfg.min_hops and dh.get(c, -1) >= cfg.min_hops}
        errand = _pick(rng, ids, home_w, allowed)
        if errand is not None:
            routes.append(DailyRoute(tuple(net.shortest_path(work, errand)), cfg.evening_s, sd))
            routes.append(DailyRoute(tuple(net.shortest_path(errand, home)), cfg.errand_return_s, sd // 2))
            return tuple(routes)
    routes.append(DailyRoute(tuple(back), cfg.evening_s, sd))
    return tuple(routes)


def planted_route_population(net: CellMap, n_routes: int = 3, per_route: int = 50,
                             noise_fraction: float = 0.1, min_route_hops: int = 8,
                             seed: int = 0, zones=None) -> tuple[Population, dict[str, int]]:
    """Commuters on ``n_routes`` cell-disjoint routes plus random-route noise agents.

    Returns the population and a ``sub -> route label`` map; noise agents get
    label -1.
    """
    rng = np.random.default_rng(seed)
    zones = zones or {c: net.la_of(c) for c in net.cells}
    cfg = PopulationConfig(errand_fraction=0.0, stationary_fraction=0.0)
    ids = net.cell_ids
    chosen: list[list[str]] = []
    used: set[str] = set()
    for _ in range(5000):
        if len(chosen) == n_routes:
            break
        a, b = (ids[int(i)] for i in rng.choice(len(ids), 2, replace=False))
        path = net.shortest_path(a, b)
        if path is None or len(path) - 1 < min_route_hops:
            continue
        # keep routes apart so their shingles cannot coincide
        halo = set(path).union(*(net.neighbors(c) for c in path))
        if halo & used:
            continue
        chosen.append(path)
        used |= halo
    if len(chosen) < n_routes:
        raise InvalidConfig(f"could only plant {len(chosen)} disjoint routes of >= {min_route_hops} hops")
    n_noise = int(round(noise_fraction * n_routes * per_route))
    subs = _sub_ids(rng, n_routes * per_route + n_noise)
    agents, labels = [], {}
    k = 0
    for r, path in enumerate(chosen):
        for _ in range(per_route):
            sub = subs[k]
            k += 1
            routes = (DailyRoute(tuple(path), cfg.morning_s, cfg.depart_sd_s),
                      DailyRoute(tuple(reversed(path)), cfg.evening_s, cfg.depart_sd_s))
            agents.append(Agent(sub, path[0], path[-1], routes, _demographics(rng, sub, path[0], net, zones, cfg)))
            labels[sub] = r
    for _ in range(n_noise):
        sub = subs[k]
        k += 1
        while True:
            a, b = (ids[int(i)] for i in rng.choice(len(ids), 2, replace=False))
            path = net.shortest_path(a, b)
            if path is not None and len(path) - 1 >= cfg.min_hops:
                break
        routes = (DailyRoute(tuple(path), cfg.morning_s, cfg.depart_sd_s),
                  DailyRoute(tuple(reversed(path)), cfg.evening_s, cfg.depart_sd_s))
        agents.append(Agent(sub, a, b, routes, _demographics(rng, sub, a, net, zones, cfg)))
        labels[sub] = -1
    return Population(agents), labels


def co_traveler_population(net: CellMap, n: int = 10, min_route_hops: int = 6, seed: int = 0,
                           depart_s: int = 8 * 3600 + 600, zones=None) -> Population:
    """``n`` agents sharing home, work and exact departure times (a bus)."""
    rng = np.random.default_rng(seed)
    zones = zones or {c: net.la_of(c) for c in net.cells}
    ids = net.cell_ids
    cfg = PopulationConfig()
    for _ in range(5000):
        a, b = (ids[int(i)] for i in rng.choice(len(ids), 2, replace=False))
        path = net.shortest_path(a, b)
        if path is not None and len(path) - 1 >= min_route_hops:
            break
    else:
        raise InvalidConfig("no route long enough for co-travelers")
    routes = (DailyRoute(tuple(path), depart_s, 0), DailyRoute(tuple(reversed(path)), 17 * 3600, 0))
    return Population([Agent(sub, path[0], path[-1], routes, _demographics(rng, sub, path[0], net, zones, cfg))
                       for sub in _sub_ids(rng, n)])


# ---------------------------------------------------------------------------
# event simulation


@dataclass
class SimConfig:
    days: int = 7
    paging_interval_s: int = 3600
    # Poisson rates per hour
    call_rate: float = 0.5
    sms_rate: float = 0.25
    data_rate: float = 1.0
    hop_s: int = 120
    call_duration_s: float = 90.0
    data_duration_s: float = 60.0
    # every stay lasts at least this long; keeps >= 2 paging records per stay at default paging
    min_stay_s: int = 9000
    start_ts: int = DEFAULT_START_TS
    position_noise_m: float = 0.0
    workers: int = 1


@dataclass(frozen=True)
class Trip:
    sub: str
    origin_zone: str
    dest_zone: str
    depart_ts: int
    arrive_ts: int
    cells: tuple[str, ...]

    def to_json(self) -> dict:
        return {"sub": self.sub, "origin_zone": self.origin_zone, "dest_zone": self.dest_zone,
                "depart_ts": self.depart_ts, "arrive_ts": self.arrive_ts, "cells": list(self.cells)}


@dataclass(frozen=True)
class Stay:
    sub: str
    cell: str
    start_ts: int
    end_ts: int


@dataclass
class GroundTruth:
    trips: list[Trip]
    stays: list[Stay]

    def trips_of(self, sub: str) -> list[Trip]:
        return [t for t in self.trips if t.sub == sub]


def _validate_sim_config(cfg: SimConfig) -> None:
    if cfg.days < 1:
        raise InvalidConfig("days must be >= 1")
    if cfg.paging_interval_s <= 0:
        raise InvalidConfig("paging_interval_s must be > 0")
    if cfg.hop_s <= 0:
        raise InvalidConfig("hop_s must be > 0")
    if min(cfg.call_rate, cfg.sms_rate, cfg.data_rate) < 0:
        raise InvalidConfig("communication rates must be >= 0")
    if cfg.min_stay_s < 0 or cfg.position_noise_m < 0:
        raise InvalidConfig("min_stay_s and position_noise_m must be >= 0")


class _Itinerary:
    """Piecewise-constant true cell of one agent over the simulated window."""

    def __init__(self, home: str, trips: list[tuple[int, int, tuple[str, ...]]], hop_s: int):
        self.home = home
        self.trips = trips
        self.departs = [t[0] for t in trips]
        self.hop_s = hop_s

    def cell_at(self, t: int) -> str:
        i = bisect.bisect_right(self.departs, t) - 1
        if i < 0:
            return self.home
        dep, arr, cells = self.trips[i]
        if t >= arr:
            return cells[-1]
        return cells[min((t - dep) // self.hop_s, len(cells) - 1)]

    def changes(self):
        """(time, previous cell, new cell) for every cell change."""
        for dep, _, cells in self.trips:
            for i in range(1, len(cells)):
                yield dep + i * self.hop_s, cells[i - 1], cells[i]


def _schedule(agent: Agent, rng, cfg: SimConfig, t0: int, t_end: int):
    trips = []
    cur = agent.home_cell
    prev_arrive = t0
    for day in range(cfg.days):
        for route in agent.daily_routes:
            if route.cells[0] != cur:
                return trips
            dep = t0 + day * 86400 + route.depart_mean_s
            if route.depart_sd_s > 0:
                jitter = float(np.clip(rng.normal(0.0, route.depart_sd_s), -3 * route.depart_sd_s,
                                       3 * route.depart_sd_s))
                dep += int(round(jitter))
            dep = max(dep, prev_arrive + cfg.min_stay_s)
            arr = dep + (len(route.cells) - 1) * cfg.hop_s
            if arr + cfg.min_stay_s > t_end:
                return trips
            trips.append((dep, arr, route.cells))
            prev_arrive = arr
            cur = route.cells[-1]
    return trips


def _poisson_times(rng, rate_per_hour: float, t0: int, t_end: int) -> np.ndarray:
    n = rng.poisson(rate_per_hour * (t_end - t0) / 3600.0)
    return np.sort(np.floor(rng.uniform(t0, t_end, n)).astype(np.int64))


def _simulate_agent(args):
    index, agent, net, cfg, seed, zones = args
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))
    t0 = cfg.start_ts
    t_end = t0 + cfg.days * 86400
    trips = _schedule(agent, rng, cfg, t0, t_end)
    itin = _Itinerary(agent.home_cell, trips, cfg.hop_s)
    sub = agent.sub_id

    sessions = []  # (start, end, kind); end == start for instantaneous ones
    for ts in _poisson_times(rng, cfg.call_rate, t0, t_end):
        kind = (EventKind.CALL_IN, EventKind.CALL_OUT, EventKind.CALL_REJ)[
            int(rng.choice(3, p=[0.45, 0.45, 0.10]))]
        dur = 0 if kind is EventKind.CALL_REJ else max(1, int(round(rng.exponential(cfg.call_duration_s))))
        sessions.append((int(ts), int(ts) + dur, kind))
    for ts in _poisson_times(rng, cfg.sms_rate, t0, t_end):
        kind = EventKind.SMS_IN if rng.random() < 0.5 else EventKind.SMS_OUT
        sessions.append((int(ts), int(ts), kind))
    for ts in _poisson_times(rng, cfg.data_rate, t0, t_end):
        dur = max(1, int(round(rng.exponential(cfg.data_duration_s))))
        sessions.append((int(ts), int(ts) + dur, EventKind.DATA))
    sessions.sort(key=lambda s: (s[0], s[1], s[2].value))

    busy = _merge_intervals([(s, e) for s, e, _ in sessions if e > s])
    busy_starts = [b[0] for b in busy]

    def active(t: int) -> bool:
        i = bisect.bisect_right(busy_starts, t) - 1
        return i >= 0 and t < busy[i][1]

    changes = list(itin.changes())
    change_times = [c[0] for c in changes]
    raw: list[tuple[int, EventKind, str]] = []
    for start, end, kind in sessions:
        raw.append((start, kind, itin.cell_at(start)))
        # handover records carry the in-session cell sequence
        lo = bisect.bisect_right(change_times, start)
        hi = bisect.bisect_left(change_times, end)
        for c in range(lo, hi):
            raw.append((changes[c][0], kind, changes[c][2]))
    for t, prev, new in changes:
        if net.la_of(prev) != net.la_of(new) and not active(t):
            raw.append((t, EventKind.LAU, new))
    t = t0 + int(rng.integers(0, cfg.paging_interval_s))
    while t < t_end:
        if not active(t):
            raw.append((t, EventKind.PAGE, itin.cell_at(t)))
        t += cfg.paging_interval_s

    if cfg.position_noise_m > 0:
        raw = [(ts, kind, _noisy_cell(net, cell, rng, cfg.position_noise_m)) for ts, kind, cell in raw]
    events = [NetworkEvent(ts, sub, kind, cell) for ts, kind, cell in raw if ts < t_end]

    trip_records = [Trip(sub, zones[cells[0]], zones[cells[-1]], dep, arr, tuple(cells)) for dep, arr, cells in trips]
    stays, start, cell = [], t0, agent.home_cell
    for dep, arr, cells in trips:
        stays.append(Stay(sub, cell, start, dep))
        start, cell = arr, cells[-1]
    stays.append(Stay(sub, cell, start, t_end))
    return events, trip_records, stays


def _noisy_cell(net: CellMap, cell: str, rng, sigma_m: float) -> str:
    site = net.cells[cell]
    dy, dx = rng.normal(0.0, sigma_m, 2)
    lat = site.lat + math.degrees(dy / EARTH_RADIUS_M)
    lon = site.lon + math.degrees(dx / (EARTH_RADIUS_M * math.cos(math.radians(site.lat))))
    return net.nearest_cell(lat, lon)


def _merge_intervals(intervals):
    out: list[list[int]] = []
    for s, e in sorted(intervals):
        if out and s <= out[-1][1]:
            out[-1][1] = max(out[-1][1], e)
        else:
            out.append([s, e])
    return [tuple(x) for x in out]


def simulate_events(agents: Iterable[Agent], net: CellMap, config: SimConfig | None = None,
                    seed: int = 0, zones: Mapping[str, str] | None = None
                    ) -> tuple[list[NetworkEvent], GroundTruth]:
    """Emit the three passive event classes for every agent.

    (a) communication sessions (calls, texts, data) at Poisson times, with an
    extra record of the session kind at every cell change while the session
    is open; (b) LAU at Location Area crossings while idle; (c) PAGE on a
    fixed per-agent grid of ``paging_interval_s`` while idle.

    Each agent draws from its own ``SeedSequence`` child, so splitting the
    work over processes gives a bitwise-identical result.
    """
    cfg = config or SimConfig()
    _validate_sim_config(cfg)
    agents = list(agents)
    zones = zones or {c: net.la_of(c) for c in net.cells}
    jobs = [(i, a, net, cfg, seed, zones) for i, a in enumerate(agents)]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_simulate_agent, jobs, chunksize=max(1, len(jobs) // (4 * cfg.workers))))
    else:
        results = [_simulate_agent(j) for j in jobs]
    events, trips, stays = [], [], []
    for ev, tr, st in results:
        events.extend(ev)
        trips.extend(tr)
        stays.extend(st)
    trips.sort(key=lambda t: (t.depart_ts, t.sub))
    stays.sort(key=lambda s: (s.sub, s.start_ts))
    return sort_events(events), GroundTruth(trips, stays)


# ---------------------------------------------------------------------------
# writers (readers live in ingest, which owns validation)


def _csv_writer(fh):
    return csv.writer(fh, lineterminator="\n")


def write_cells(net: CellMap, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _csv_writer(fh)
        w.writerow(["cell", "lat", "lon", "radius_m", "la"])
        for c in net.cells.values():
            w.writerow([c.cell_id, f"{c.lat:.6f}", f"{c.lon:.6f}", f"{c.radius_m:.1f}", c.la_id])


def write_events(events: Iterable[NetworkEvent], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _csv_writer(fh)
        w.writerow(["ts", "sub", "kind", "cell"])
        w.writerows((e.ts, e.sub, e.kind.value, e.cell) for e in events)


def write_demographics(records: Iterable[DemoRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _csv_writer(fh)
        w.writerow(["sub", "age", "gender", "postcode", "home_zone"])
        w.writerows(records)


def write_truth(truth: GroundTruth, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in truth.trips:
            fh.write(json.dumps(t.to_json(), separators=(",", ":")) + "\n")


def read_truth(path) -> list[Trip]:
    trips = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                trips.append(Trip(d["sub"], d["origin_zone"], d["dest_zone"], int(d["depart_ts"]),
                                  int(d["arrive_ts"]), tuple(d["cells"])))
    return trips


def write_zones(zones: Mapping[str, str], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _csv_writer(fh)
        w.writerow(["cell", "zone"])
        w.writerows(sorted(zones.items()))


def write_aux(agents: Iterable[Agent], zones: Mapping[str, str], path) -> None:
    """Adversary's directory: identity label with home and work zone."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _csv_writer(fh)
        w.writerow(["label", "home_zone", "work_zone"])
        for a in agents:
            w.writerow([a.sub_id, zones[a.home_cell], zones[a.work_cell]])
