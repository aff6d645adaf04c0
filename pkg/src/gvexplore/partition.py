"""Weighted graph Voronoi partitioning by a parallel multi-source Dijkstra sweep."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .topo_graph import Certainty, HybridTopoGraph, TopoEdge

CLAMP_MARGIN = 1e-6


class LoadMetric(str, Enum):
    PLAIN = "plain"
    ONLINE = "online"


def edge_weight(e: TopoEdge, metric: LoadMetric) -> float:
    if metric is LoadMetric.ONLINE:
        return e.length if e.certainty is Certainty.UNCERTAIN else 0.0
    return e.length


@dataclass
class PowerPointSet:
    """Centers (robot id, node id) and the antisymmetric weight table w[i][j]."""

    centers: list[tuple[int, int]]
    weights: np.ndarray

    @classmethod
    def zeros(cls, centers: Sequence[tuple[int, int]]) -> PowerPointSet:
        n = len(centers)
        return cls(list(centers), np.zeros((n, n)))

    @classmethod
    def from_nodes(cls, nodes: Sequence[int]) -> PowerPointSet:
        return cls.zeros([(i, n) for i, n in enumerate(nodes)])

    def __post_init__(self) -> None:
        self.weights = np.array(self.weights, dtype=float)
        n = len(self.centers)
        if self.weights.shape != (n, n):
            raise ValueError(f"weight table shape {self.weights.shape} != ({n}, {n})")
        if not np.array_equal(self.weights, -self.weights.T):
            raise ValueError("weights must be antisymmetric")

    def __len__(self) -> int:
        return len(self.centers)

    @property
    def nodes(self) -> list[int]:
        return [c[1] for c in self.centers]

    def w(self, i: int, j: int) -> float:
        return float(self.weights[i, j])

    def set_pair(self, i: int, j: int, value: float) -> None:
        self.weights[i, j] = value
        self.weights[j, i] = -value

    def copy(self) -> PowerPointSet:
        return PowerPointSet(list(self.centers), self.weights.copy())

    def with_centers(self, nodes: Sequence[int]) -> PowerPointSet:
        return PowerPointSet([(r, n) for (r, _), n in zip(self.centers, nodes)], self.weights.copy())

    def clamp(self, center_dist: np.ndarray) -> None:
        """Enforce w_ij < D(g_i, g_j) on both sides of every pair.

        Centers in different graph components cannot trade nodes, so their
        weight is pinned to zero.
        """
        n = len(self.centers)
        for i in range(n):
            for j in range(i + 1, n):
                d = center_dist[i, j]
                if not math.isfinite(d):
                    if self.weights[i, j] != 0.0:
                        self.set_pair(i, j, 0.0)
                    continue
                lim = d - CLAMP_MARGIN
                w = self.weights[i, j]
                if w > lim or w < -lim:
                    self.set_pair(i, j, min(max(w, -lim), lim))


@dataclass
class CenterTrees:
    """Per-center shortest-path trees and their settle events in sweep order."""

    centers: tuple[int, ...]
    dist: list[dict[int, float]]
    parent: list[dict[int, int]]
    events: list[tuple[float, int, int, int]]

    def center_distances(self) -> np.ndarray:
        n = len(self.centers)
        out = np.full((n, n), math.inf)
        for i in range(n):
            for j in range(n):
                out[i, j] = self.dist[i].get(self.centers[j], math.inf)
        return out


def center_trees(g: HybridTopoGraph, centers: Sequence[int]) -> CenterTrees:
    """Run the interleaved multi-source Dijkstra.

    Heap key (distance, center index, predecessor, node). Each center's
    wavefront is an ordinary Dijkstra; interleaving only fixes the order in
    which settle events are seen by the labeling pass.
    """
    for c in centers:
        if c not in g:
            raise KeyError(f"center node {c} not in graph")
    if len(set(centers)) != len(centers):
        raise ValueError("center nodes must be distinct")
    k = len(centers)
    dist: list[dict[int, float]] = [{} for _ in range(k)]
    parent: list[dict[int, int]] = [{} for _ in range(k)]
    best: list[dict[int, float]] = [{c: 0.0} for c in centers]
    heap = [(0.0, i, -1, c) for i, c in enumerate(centers)]
    heapq.heapify(heap)
    events = []
    adj = g._adj
    while heap:
        d, i, p, u = heapq.heappop(heap)
        di = dist[i]
        if u in di:
            continue
        di[u] = d
        parent[i][u] = p
        events.append((d, i, p, u))
        bi = best[i]
        for v, e in adj[u].items():
            if v in di:
                continue
            nd = d + e.length
            if nd <= bi.get(v, math.inf):
                bi[v] = nd
                heapq.heappush(heap, (nd, i, u, v))
    return CenterTrees(tuple(centers), dist, parent, events)


@dataclass
class PartitionResult:
    centers: list[int]
    label: dict[int, int]
    dist: dict[int, float]
    parent: dict[int, int]
    load: list[float]
    metric: LoadMetric
    orphans: list[int]
    tree: list[list[tuple[int, int, float]]] = field(default_factory=list)

    @property
    def partition(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in self.centers]
        for v in sorted(self.label):
            out[self.label[v]].append(v)
        return out

    def sizes(self) -> list[int]:
        return [len(p) for p in self.partition]


def graph_voronoi(
    g: HybridTopoGraph,
    pp: PowerPointSet,
    metric: LoadMetric = LoadMetric.PLAIN,
    trees: CenterTrees | None = None,
) -> PartitionResult:
    """Weighted graph Voronoi labels and per-center loads.

    Settle events are replayed in heap order. The first center to settle a
    node claims it; a later center c takes a node held by a only when
    D_c(v) - w[c][a] < D_a(v), so the incumbent keeps exact ties. Loads are
    accumulated the same way: add the parent edge on a claim, subtract the
    old parent edge on a takeover.
    """
    metric = LoadMetric(metric)
    nodes = pp.nodes
    if trees is None or trees.centers != tuple(nodes):
        trees = center_trees(g, nodes)
    W = pp.weights
    is_center = {c: i for i, c in enumerate(nodes)}
    label: dict[int, int] = {}
    load = [0.0] * len(nodes)
    adj = g._adj

    def wt(p: int, v: int) -> float:
        return 0.0 if p < 0 else edge_weight(adj[p][v], metric)

    for d, c, p, v in trees.events:
        a = label.get(v)
        if a is None:
            label[v] = c
            load[c] += wt(p, v)
            continue
        if v in is_center:
            continue
        if d - W[c, a] < trees.dist[a][v]:
            load[a] -= wt(trees.parent[a][v], v)
            label[v] = c
            load[c] += wt(p, v)

    dist = {v: trees.dist[c][v] for v, c in label.items()}
    parent = {v: trees.parent[c][v] for v, c in label.items()}
    tree: list[list[tuple[int, int, float]]] = [[] for _ in nodes]
    for v in sorted(label):
        p = parent[v]
        if p >= 0:
            tree[label[v]].append((p, v, wt(p, v)))
    orphans = [v for v in g.node_ids() if v not in label]
    return PartitionResult(list(nodes), label, dist, parent, load, metric, orphans, tree)


def load_metric(res: PartitionResult, center: int) -> float:
    """Tree-sum recount of a center's load."""
    return math.fsum(w for _, _, w in res.tree[center])


def leaf_removal_decreases(res: PartitionResult, center: int, leaf: int) -> bool:
    """Check that dropping a tree leaf does not raise the center's load."""
    edges = res.tree[center]
    if res.label.get(leaf) != center or leaf == res.centers[center]:
        raise ValueError(f"node {leaf} is not a leaf of center {center}'s tree")
    if any(p == leaf for p, _, _ in edges):
        raise ValueError(f"node {leaf} has children in center {center}'s tree")
    before = math.fsum(w for _, _, w in edges)
    after = math.fsum(w for p, v, w in edges if v != leaf)
    return before >= after


def tour_upper_bound(res: PartitionResult, center: int) -> tuple[list[int], float]:
    """Depth-first walk of the center's load tree (open: no final return).

    The walk lists every node as visited, including the backtracking steps,
    so consecutive entries are tree neighbours. Children are taken in id order.
    """
    root = res.centers[center]
    children: dict[int, list[tuple[int, float]]] = {}
    for p, v, w in res.tree[center]:
        children.setdefault(p, []).append((v, w))
    for kids in children.values():
        kids.sort()

    walk = [root]
    length = 0.0
    stack = [(root, iter(children.get(root, [])), 0.0)]
    while stack:
        u, it, w_in = stack[-1]
        nxt = next(it, None)
        if nxt is None:
            stack.pop()
            if stack:
                walk.append(stack[-1][0])
                length += w_in
            continue
        v, w = nxt
        walk.append(v)
        length += w
        stack.append((v, iter(children.get(v, [])), w))
    # Drop the trailing return towards the root along the last branch.
    first_seen = {}
    for k, v in enumerate(walk):
        first_seen.setdefault(v, k)
    while len(walk) > 1 and first_seen[walk[-1]] < len(walk) - 1:
        length -= _tree_weight(res.tree[center], walk[-2], walk[-1])
        walk.pop()
    return walk, length


def _tree_weight(edges: list[tuple[int, int, float]], a: int, b: int) -> float:
    for p, v, w in edges:
        if (p, v) == (a, b) or (p, v) == (b, a):
            return w
    raise KeyError((a, b))


def feedback_load(lambda_online: float, atsp_distance: float, gamma_d: float) -> float:
    if lambda_online < 0 or atsp_distance < 0 or gamma_d < 0:
        raise ValueError("feedback inputs must be non-negative")
    return lambda_online + gamma_d * atsp_distance
