"""Greedy modularity maximization in two phases (local moves, then aggregation).

Nodes are integers ``0..n-1`` visited in increasing order, and ties between
candidate communities go to the lowest community id, so the result is
deterministic for a given graph.
"""

from __future__ import annotations

from collections import defaultdict
from typing import Iterable, Sequence

EPSILON = 1e-7


def _adjacency(n: int, edges: Iterable[tuple[int, int, float]]):
    adj: list[dict[int, float]] = [dict() for _ in range(n)]
    for u, v, w in edges:
        if w <= 0:
            continue
        adj[u][v] = adj[u].get(v, 0.0) + w
        if u != v:
            adj[v][u] = adj[v].get(u, 0.0) + w
    return adj


def modularity(labels: Sequence[int], edges: Iterable[tuple[int, int, float]], resolution: float = 1.0) -> float:
    """Newman modularity of a partition of an undirected weighted graph."""
    internal: dict[int, float] = defaultdict(float)
    degree: dict[int, float] = defaultdict(float)
    m = 0.0
    for u, v, w in edges:
        m += w
        degree[labels[u]] += w
        degree[labels[v]] += w
        if labels[u] == labels[v]:
            internal[labels[u]] += w
    if m == 0:
        return 0.0
    return sum(internal[c] / m - resolution * (degree[c] / (2 * m)) ** 2 for c in degree)


def _one_level(adj, self_loops, degrees, m2, resolution):
    """Local-move phase. Returns (community of each node, improved?)."""
    n = len(adj)
    comm = list(range(n))
    tot = list(degrees)
    improved = False
    while True:
        moves = 0
        for i in range(n):
            ci = comm[i]
            ki = degrees[i]
            links: dict[int, float] = defaultdict(float)
            for j, w in adj[i].items():
                if j != i:
                    links[comm[j]] += w
            tot[ci] -= ki
            best, best_gain = ci, links.get(ci, 0.0) - resolution * tot[ci] * ki / m2
            for c in sorted(links):
                gain = links[c] - resolution * tot[c] * ki / m2
                if gain > best_gain + EPSILON:
                    best, best_gain = c, gain
            tot[best] += ki
            if best != ci:
                comm[i] = best
                moves += 1
        if moves == 0:
            break
        improved = True
    return comm, improved


def louvain(n: int, edges: Sequence[tuple[int, int, float]], resolution: float = 1.0) -> list[int]:
    """Community label per node; labels are renumbered by smallest member."""
    edges = [(u, v, float(w)) for u, v, w in edges if w > 0]
    if n == 0:
        return []
    labels = list(range(n))
    total = sum(w for _, _, w in edges)
    if total == 0:
        return labels
    m2 = 2.0 * total
    adj = _adjacency(n, edges)
    self_loops = [0.0] * n
    q = modularity(labels, edges, resolution)
    while True:
        degrees = [sum(w for j, w in nbrs.items() if j != i) + 2 * self_loops[i]
                   for i, nbrs in enumerate(adj)]
        comm, improved = _one_level(adj, self_loops, degrees, m2, resolution)
        if not improved:
            break
        remap: dict[int, int] = {}
        for c in comm:
            remap.setdefault(c, len(remap))
        comm = [remap[c] for c in comm]
        new_labels = [comm[l] for l in labels]
        new_q = modularity(new_labels, edges, resolution)
        if new_q - q <= EPSILON:
            break
        labels, q = new_labels, new_q
        # aggregate: one node per community, internal weight kept as a self-loop
        k = len(remap)
        new_adj: list[dict[int, float]] = [dict() for _ in range(k)]
        new_self = [0.0] * k
        for i, nbrs in enumerate(adj):
            ci = comm[i]
            new_self[ci] += self_loops[i]
            for j, w in nbrs.items():
                if j == i:
                    continue
                cj = comm[j]
                if ci == cj:
                    if i < j:
                        new_self[ci] += w
                else:
                    new_adj[ci][cj] = new_adj[ci].get(cj, 0.0) + w
        adj, self_loops = new_adj, new_self
    first: dict[int, int] = {}
    for i, l in enumerate(labels):
        first.setdefault(l, i)
    order = {l: r for r, l in enumerate(sorted(first, key=first.get))}
    return [order[l] for l in labels]
