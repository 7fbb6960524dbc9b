"""Weighted random walks and co-visit counting."""

from __future__ import annotations

import random
from collections import Counter, deque
from typing import Iterable


def adjacency(edges: Iterable[tuple[str, str, float]], nodes: Iterable[str] = ()) -> dict[str, list[tuple[str, float]]]:
    """Undirected weighted adjacency; parallel edges add their weights. Neighbors sorted by id."""
    acc: dict[str, dict[str, float]] = {n: {} for n in nodes}
    for src, dst, weight in edges:
        if src == dst or weight <= 0:
            continue
        acc.setdefault(src, {})
        acc.setdefault(dst, {})
        acc[src][dst] = acc[src].get(dst, 0.0) + weight
        acc[dst][src] = acc[dst].get(src, 0.0) + weight
    return {n: sorted(nbrs.items()) for n, nbrs in acc.items()}


def hop_distances(adj: dict[str, list[tuple[str, float]]], start: str) -> dict[str, int]:
    dist = {start: 0}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        for nxt, _ in adj.get(node, ()):
            if nxt not in dist:
                dist[nxt] = dist[node] + 1
                queue.append(nxt)
    return dist


def walk(adj: dict[str, list[tuple[str, float]]], start: str, length: int, restart: float, rng: random.Random) -> set[str]:
    """Nodes other than ``start`` visited by one walk of ``length`` steps.

    Each step first restarts at ``start`` with probability ``restart``,
    otherwise moves to a neighbor with probability proportional to weight.
    """
    visited: set[str] = set()
    pos = start
    for _ in range(length):
        if rng.random() < restart:
            pos = start
            continue
        nbrs = adj.get(pos)
        if not nbrs:
            pos = start
            continue
        total = sum(w for _, w in nbrs)
        r = rng.random() * total
        for nxt, w in nbrs:
            r -= w
            if r < 0:
                break
        pos = nxt
        if pos != start:
            visited.add(pos)
    return visited


def covisit_counts(
    adj: dict[str, list[tuple[str, float]]],
    walks_per_node: int,
    walk_length: int,
    restart: float,
    seed: int,
) -> Counter:
    """Unordered pair -> number of walks (from either endpoint) in which the pair co-occurred."""
    rng = random.Random(seed)
    counts: Counter = Counter()
    for start in sorted(adj):
        if not adj[start]:
            continue
        for _ in range(walks_per_node):
            for other in sorted(walk(adj, start, walk_length, restart, rng)):
                counts[(min(start, other), max(start, other))] += 1
    return counts
