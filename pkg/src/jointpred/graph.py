"""Interaction graph construction."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .autodiff import ContractError

GRAPH_TYPES = ("none", "av_star", "random_star", "dynamic", "fully_connected")


def canonical_graph_type(name: str) -> str:
    """Accept CLI spellings such as ``av-star``."""
    key = name.replace("-", "_")
    if key not in GRAPH_TYPES:
        raise ValueError(f"unknown graph type {name!r}; expected one of {GRAPH_TYPES}")
    return key


@dataclass(frozen=True)
class InteractionGraph:
    num_nodes: int
    edges: tuple[tuple[int, int], ...]
    graph_type: str = "custom"

    def __post_init__(self):
        clean = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j:
                raise ContractError(f"self-loop on node {i}")
            if not (0 <= i < self.num_nodes and 0 <= j < self.num_nodes):
                raise ContractError(f"edge ({i}, {j}) out of range for {self.num_nodes} nodes")
            clean.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", tuple(sorted(clean)))

    def neighbors(self, node: int) -> list[int]:
        return [j if i == node else i for i, j in self.edges if node in (i, j)]

    def has_edge(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in self.edges

    def is_acyclic(self) -> bool:
        parent = list(range(self.num_nodes))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for i, j in self.edges:
            ri, rj = find(i), find(j)
            if ri == rj:
                return False
            parent[ri] = rj
        return True

    def diameter(self) -> int:
        """Longest shortest path over connected pairs (0 for no edges)."""
        adj = [self.neighbors(n) for n in range(self.num_nodes)]
        best = 0
        for src in range(self.num_nodes):
            dist = {src: 0}
            frontier = [src]
            while frontier:
                nxt = []
                for u in frontier:
                    for v in adj[u]:
                        if v not in dist:
                            dist[v] = dist[u] + 1
                            nxt.append(v)
                frontier = nxt
            best = max(best, max(dist.values()))
        return best


def proximity_edge(top_traj_i, top_traj_j, dims_i, dims_j) -> bool:
    """Centers within half the summed lengths at some common timestep (closed)."""
    ti = np.asarray(top_traj_i, dtype=np.float64)
    tj = np.asarray(top_traj_j, dtype=np.float64)
    dist = np.hypot(*(ti - tj).T)
    return bool((dist <= 0.5 * (dims_i[0] + dims_j[0])).any())


def star_graph(num_nodes: int, center: int, graph_type: str = "star") -> InteractionGraph:
    return InteractionGraph(num_nodes, tuple((center, k) for k in range(num_nodes) if k != center),
                            graph_type)


def build_graph(graph_type: str, scene, candidates=None, seed: int = 0) -> InteractionGraph:
    """Edges for one scene.

    ``candidates`` (anything with ``traj``, ``top_index()`` and ``dims``) is
    required for the dynamic type. ``random_star`` picks its center from
    ``seed``.
    """
    graph_type = canonical_graph_type(graph_type)
    n = scene.num_agents
    if graph_type == "none":
        return InteractionGraph(n, (), graph_type)
    if graph_type == "fully_connected":
        return InteractionGraph(n, tuple(combinations(range(n), 2)), graph_type)
    if graph_type == "av_star":
        avs = [k for k, a in enumerate(scene.agents) if a.is_av]
        if len(avs) != 1:
            raise ContractError("av_star graph needs exactly one AV")
        return star_graph(n, avs[0], graph_type)
    if graph_type == "random_star":
        center = int(np.random.default_rng(seed).integers(n))
        return star_graph(n, center, graph_type)
    if candidates is None:
        raise ContractError("dynamic graph needs candidates")
    top = candidates.top_index()
    traj = candidates.traj
    edges = [(i, j) for i, j in combinations(range(n), 2)
             if proximity_edge(traj[i, top[i]], traj[j, top[j]],
                               candidates.dims[i], candidates.dims[j])]
    return InteractionGraph(n, tuple(edges), graph_type)
