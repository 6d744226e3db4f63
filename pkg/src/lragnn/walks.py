"""Second-order biased random walks and the co-occurrence adjacency update.

The walk is the node2vec scheme: having arrived at ``cur`` from ``prev``,
each neighbour ``x`` of ``cur`` gets the un-normalised weight ``1/p`` when
``x == prev``, ``1`` when ``x`` is adjacent to ``prev`` and ``1/q`` when it
is two hops away.  Small ``p`` with large ``q`` keeps walks local (BFS-like),
large ``p`` with small ``q`` pushes them outward (DFS-like).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError, DomainError
from .graph import FaceGraph, cosine_matrix

UPDATE_THRESHOLD = 0.824


@dataclass(frozen=True)
class WalkConfig:
    p: float = 1.0
    q: float = 1.0
    walks_per_node: int = 10
    walk_length: int = 20
    window: int = 4
    tau: float = UPDATE_THRESHOLD
    # "profiles": cosine over walk co-occurrence rows; "features": raw node features
    similarity_source: str = "profiles"

    def __post_init__(self):
        if self.p <= 0 or self.q <= 0:
            raise DomainError(f"p and q must be positive (p={self.p}, q={self.q})")
        if self.walk_length < 2:
            raise DomainError("walk_length must be >= 2")
        if self.window < 1:
            raise DomainError("window must be >= 1")
        if self.walks_per_node < 0:
            raise DomainError("walks_per_node must be >= 0")
        if self.similarity_source not in ("profiles", "features"):
            raise DomainError(f"unknown similarity_source {self.similarity_source!r}")


@dataclass
class WalkSet:
    walks: list[list[int]]

    def __len__(self):
        return len(self.walks)

    def __iter__(self):
        return iter(self.walks)


def hop_distances(adjacency: np.ndarray, source: int) -> np.ndarray:
    """Breadth-first hop counts from ``source``; unreachable nodes get -1."""
    n = adjacency.shape[0]
    dist = np.full(n, -1, dtype=np.int64)
    dist[source] = 0
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in np.flatnonzero(adjacency[u] > 0):
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def transition_weight(prev: int, nxt: int, graph: FaceGraph, config: WalkConfig,
                      current: Optional[int] = None) -> float:
    """Un-normalised weight of stepping to ``nxt`` after arriving from ``prev``.

    When ``current`` is given, candidates that are not neighbours of it get 0.
    """
    if current is not None and graph.adjacency[current, nxt] <= 0:
        return 0.0
    d = hop_distances(graph.adjacency, prev)[nxt]
    if d == 0:
        return 1.0 / config.p
    if d == 1:
        return 1.0
    if d == 2:
        return 1.0 / config.q
    return 0.0


def next_step_distribution(graph: FaceGraph, prev: Optional[int], current: int,
                           config: WalkConfig) -> tuple[np.ndarray, np.ndarray]:
    """Neighbours of ``current`` and their normalised step probabilities.

    The first step of a walk (``prev is None``) is uniform over neighbours.
    """
    nbrs = graph.neighbors(current)
    if nbrs.size == 0:
        return nbrs, np.zeros(0)
    if prev is None:
        w = np.ones(nbrs.size)
    else:
        adj_prev = graph.adjacency[prev]
        w = np.where(nbrs == prev, 1.0 / config.p,
                     np.where(adj_prev[nbrs] > 0, 1.0, 1.0 / config.q))
    return nbrs, w / w.sum()


def _walk_from(graph, start, config, rng, cache):
    walk = [start]
    prev = None
    while len(walk) < config.walk_length:
        cur = walk[-1]
        key = (prev, cur)
        entry = cache.get(key)
        if entry is None:
            nbrs, probs = next_step_distribution(graph, prev, cur, config)
            entry = (nbrs, np.cumsum(probs))
            cache[key] = entry
        nbrs, cdf = entry
        if nbrs.size == 0:
            break
        k = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        walk.append(int(nbrs[min(k, nbrs.size - 1)]))
        prev = cur
    return walk


def sample_walks(graph: FaceGraph, config: WalkConfig, seed: int) -> WalkSet:
    """``walks_per_node`` walks from every node, ordered by start node then walk index.

    Each start node draws from its own stream seeded by ``(seed, node)``, so
    the result does not depend on the order nodes are processed in.
    """
    cache: dict = {}
    walks = []
    for node in range(graph.n_nodes):
        rng = np.random.default_rng([int(seed), node])
        for _ in range(config.walks_per_node):
            walks.append(_walk_from(graph, node, config, rng, cache))
    return WalkSet(walks)


def cooccurrence_profiles(walks: WalkSet | Sequence[Sequence[int]], window: int,
                          n_nodes: int) -> np.ndarray:
    """Symmetrised within-window co-occurrence counts; row i profiles node i."""
    if window < 1:
        raise DomainError("window must be >= 1")
    counts = np.zeros((n_nodes, n_nodes))
    for walk in walks:
        w = np.asarray(walk, dtype=np.int64)
        if w.size and (w.min() < 0 or w.max() >= n_nodes):
            raise DimensionError(f"walk visits node outside [0, {n_nodes})")
        for s in range(1, min(window, w.size - 1) + 1):
            np.add.at(counts, (w[:-s], w[s:]), 1.0)
    return counts + counts.T


def update_adjacency(graph: FaceGraph, profiles: np.ndarray,
                     tau: float = UPDATE_THRESHOLD) -> FaceGraph:
    """Add an edge wherever two profiles have cosine >= tau; existing edges stay."""
    n = graph.n_nodes
    profiles = np.asarray(profiles, dtype=np.float64)
    if profiles.ndim != 2 or profiles.shape[0] != n:
        raise DimensionError(f"profiles shape {profiles.shape} incompatible with {n} nodes")
    f = (cosine_matrix(profiles) >= tau).astype(np.float64)
    f = np.maximum(f, f.T)
    np.fill_diagonal(f, 0.0)
    return graph.with_adjacency(np.minimum(1.0, graph.adjacency + f))


def enrich_graph(graph: FaceGraph, config: WalkConfig, seed: int) -> FaceGraph:
    if config.similarity_source == "features":
        return update_adjacency(graph, graph.node_features, config.tau)
    walks = sample_walks(graph, config, seed)
    return update_adjacency(graph, cooccurrence_profiles(walks, config.window, graph.n_nodes),
                            config.tau)
