"""Common-route mining: MinHash sketches, LSH banding, Louvain clustering.

Works purely on cell-id sequences; no coordinates are used.
"""

from __future__ import annotations

import hashlib
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidConfig
from .louvain import louvain, modularity

log = logging.getLogger(__name__)

MERSENNE_LIKE_PRIME = np.uint64(4294967291)  # largest prime below 2**32
_CHUNK = 1 << 16


@dataclass(frozen=True)
class RouteConfig:
    ngram_len: int = 3
    m: int = 128
    bands: int = 32
    rows: int = 4
    seed: int = 0
    threshold: float = 0.5

    def validate(self) -> "RouteConfig":
        if self.ngram_len < 1:
            raise InvalidConfig("ngram_len must be >= 1")
        if self.m != self.bands * self.rows:
            raise InvalidConfig(f"m ({self.m}) must equal bands*rows ({self.bands}*{self.rows})")
        if not 0.0 < self.threshold < 1.0:
            raise InvalidConfig("threshold must be in (0, 1)")
        return self


@dataclass
class RouteSketch:
    path_id: str
    shingles: frozenset
    signature: np.ndarray = field(repr=False)

    def __eq__(self, other):
        return (isinstance(other, RouteSketch) and self.path_id == other.path_id
                and self.shingles == other.shingles and np.array_equal(self.signature, other.signature))


def shingles(seq: Sequence[str], n: int) -> frozenset:
    """Sliding n-grams; a sequence shorter than n becomes one shingle."""
    seq = tuple(seq)
    if len(seq) < n:
        return frozenset([seq])
    return frozenset(seq[i:i + n] for i in range(len(seq) - n + 1))


def _hash_family(m: int, seed: int):
    rng = np.random.default_rng([seed, 0x5EED])
    a = rng.integers(1, int(MERSENNE_LIKE_PRIME), size=m, dtype=np.uint64)
    b = rng.integers(0, int(MERSENNE_LIKE_PRIME), size=m, dtype=np.uint64)
    return a, b


def _shingle_hash(sh: tuple, key: bytes) -> int:
    data = "\x1f".join(sh).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(data, digest_size=4, key=key).digest(), "little")


def _signatures(shingle_sets: Sequence[frozenset], cfg: RouteConfig) -> np.ndarray:
    a, b = _hash_family(cfg.m, cfg.seed)
    key = cfg.seed.to_bytes(8, "little", signed=True)
    cache: dict[tuple, int] = {}
    sigs = np.empty((len(shingle_sets), cfg.m), dtype=np.uint64)
    start = 0
    while start < len(shingle_sets):
        # batch paths so the (shingles x m) matrix stays bounded
        stop, total = start, 0
        while stop < len(shingle_sets) and (total == 0 or total + len(shingle_sets[stop]) <= _CHUNK):
            total += len(shingle_sets[stop])
            stop += 1
        xs, offsets = [], []
        for s in shingle_sets[start:stop]:
            offsets.append(len(xs))
            for sh in sorted(s):
                h = cache.get(sh)
                if h is None:
                    h = cache[sh] = _shingle_hash(sh, key)
                xs.append(h)
        x = np.asarray(xs, dtype=np.uint64)[:, None]
        vals = (a[None, :] * x + b[None, :]) % MERSENNE_LIKE_PRIME
        sigs[start:stop] = np.minimum.reduceat(vals, np.asarray(offsets), axis=0)
        start = stop
    return sigs


def sketch_sequences(ids: Sequence[str], seqs: Sequence[Sequence[str]], cfg: RouteConfig | None = None) -> list[RouteSketch]:
    cfg = (cfg or RouteConfig()).validate()
    sets = [shingles(s, cfg.ngram_len) for s in seqs]
    if not sets:
        return []
    sigs = _signatures(sets, cfg)
    return [RouteSketch(pid, sh, sigs[i]) for i, (pid, sh) in enumerate(zip(ids, sets))]


def sketch(paths, cfg: RouteConfig | None = None) -> list[RouteSketch]:
    """Sketch space-time paths over their cell sequences."""
    paths = list(paths)
    return sketch_sequences([p.path_id for p in paths], [p.cells for p in paths], cfg)


def jaccard(s: frozenset, t: frozenset) -> float:
    if not s and not t:
        return 1.0
    return len(s & t) / len(s | t)


def estimated_jaccard(x: RouteSketch, y: RouteSketch) -> float:
    return float(np.mean(x.signature == y.signature))


@dataclass
class SimilarityGraph:
    nodes: list[str]
    edges: list[tuple[str, str, float]]
    sequences: dict[str, tuple] = field(default_factory=dict, repr=False)
    n_candidates: int = 0
    candidates: set | None = field(default=None, repr=False)

    def index_edges(self) -> list[tuple[int, int, float]]:
        pos = {n: i for i, n in enumerate(self.nodes)}
        return [(pos[u], pos[v], w) for u, v, w in self.edges]


def _band_pairs(sigs: np.ndarray, bands: int, rows: int) -> np.ndarray:
    """Unique candidate pairs (as i*n+j codes, i<j) from band collisions."""
    n = sigs.shape[0]
    codes = []
    for band in range(bands):
        block = np.ascontiguousarray(sigs[:, band * rows:(band + 1) * rows])
        keys = block.view(np.dtype((np.void, block.dtype.itemsize * rows))).ravel()
        order = np.argsort(keys, kind="stable")
        sk = keys[order]
        bounds = np.flatnonzero(sk[1:] != sk[:-1]) + 1
        starts = np.concatenate(([0], bounds))
        ends = np.concatenate((bounds, [n]))
        for s, e in zip(starts[ends - starts > 1], ends[ends - starts > 1]):
            members = np.sort(order[s:e]).astype(np.int64)
            iu, ju = np.triu_indices(len(members), k=1)
            codes.append(members[iu] * n + members[ju])
    if not codes:
        return np.empty(0, dtype=np.int64)
    return np.unique(np.concatenate(codes))


def build_graph(sketches: Sequence[RouteSketch], cfg: RouteConfig | None = None,
                keep_candidates: bool = False) -> SimilarityGraph:
    """Similarity graph whose edges come only from LSH band collisions."""
    cfg = (cfg or RouteConfig()).validate()
    ordered = sorted(sketches, key=lambda s: s.path_id)
    nodes = [s.path_id for s in ordered]
    seqs = {}
    if not ordered:
        return SimilarityGraph([], [], seqs, 0, set() if keep_candidates else None)
    n = len(ordered)
    sigs = np.stack([s.signature for s in ordered])
    pairs = _band_pairs(sigs, cfg.bands, cfg.rows)
    edges = []
    for lo in range(0, len(pairs), _CHUNK):
        chunk = pairs[lo:lo + _CHUNK]
        i, j = chunk // n, chunk % n
        w = (sigs[i] == sigs[j]).mean(axis=1)
        keep = w >= cfg.threshold
        edges.extend((nodes[a], nodes[b], float(x)) for a, b, x in zip(i[keep], j[keep], w[keep]))
    cands = {(nodes[c // n], nodes[c % n]) for c in pairs.tolist()} if keep_candidates else None
    log.info("lsh: %d paths, %d candidate pairs, %d edges", n, len(pairs), len(edges))
    return SimilarityGraph(nodes, edges, seqs, int(len(pairs)), cands)


@dataclass
class RouteCluster:
    cluster_id: int
    member_path_ids: tuple[str, ...]
    representative: tuple[str, ...]

    @property
    def support(self) -> int:
        return len(self.member_path_ids)

    def to_json(self) -> dict:
        return {"cluster_id": self.cluster_id, "support": self.support,
                "representative": list(self.representative), "members": list(self.member_path_ids)}

    @classmethod
    def from_json(cls, d) -> "RouteCluster":
        return cls(int(d["cluster_id"]), tuple(d["members"]), tuple(d["representative"]))


def representative(seqs: Sequence[Sequence[str]]) -> tuple[str, ...]:
    """Modal cell per relative position over the members.

    The output has the median member length. Position ``i`` maps to
    ``round(i * (len-1) / (L-1))`` in each member; a cell is kept only if at
    least half of the members carry it there.
    """
    seqs = [tuple(s) for s in seqs if len(s)]
    if not seqs:
        return ()
    length = int(np.median([len(s) for s in seqs]))
    out = []
    for i in range(length):
        votes: Counter = Counter()
        for s in seqs:
            j = 0 if length == 1 else int(round(i * (len(s) - 1) / (length - 1)))
            votes[s[j]] += 1
        cell, count = min(votes.items(), key=lambda kv: (-kv[1], kv[0]))
        if 2 * count >= len(seqs) and (not out or out[-1] != cell):
            out.append(cell)
    return tuple(out)


def cluster(graph: SimilarityGraph, sequences: dict | None = None) -> list[RouteCluster]:
    """Louvain communities of the similarity graph, largest first.

    ``sequences`` maps path_id to its cell sequence and is only used for the
    representative; without it representatives are empty.
    """
    if not graph.nodes:
        return []
    seqs = sequences if sequences is not None else graph.sequences
    labels = louvain(len(graph.nodes), graph.index_edges())
    groups: dict[int, list[str]] = {}
    for node, lab in zip(graph.nodes, labels):
        groups.setdefault(lab, []).append(node)
    ordered = sorted(groups.values(), key=lambda ms: (-len(ms), ms[0]))
    return [RouteCluster(cid, tuple(ms), representative([seqs[m] for m in ms if m in seqs]))
            for cid, ms in enumerate(ordered)]


def graph_modularity(graph: SimilarityGraph, clusters: Sequence[RouteCluster]) -> float:
    pos = {n: i for i, n in enumerate(graph.nodes)}
    labels = [0] * len(graph.nodes)
    for c in clusters:
        for m in c.member_path_ids:
            labels[pos[m]] = c.cluster_id
    return modularity(labels, graph.index_edges())


def mine_routes(paths, cfg: RouteConfig | None = None) -> tuple[list[RouteCluster], SimilarityGraph]:
    paths = list(paths)
    cfg = (cfg or RouteConfig()).validate()
    graph = build_graph(sketch(paths, cfg), cfg)
    graph.sequences = {p.path_id: p.cells for p in paths}
    return cluster(graph), graph


def write_routes(clusters: Iterable[RouteCluster], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for c in clusters:
            fh.write(json.dumps(c.to_json(), separators=(",", ":")) + "\n")


def read_routes(path) -> list[RouteCluster]:
    with open(path, encoding="utf-8") as fh:
        return [RouteCluster.from_json(json.loads(line)) for line in fh if line.strip()]
