"""Graph builders and brute-force references shared by the test modules."""

from __future__ import annotations

import itertools
import math

import numpy as np

from gvexplore.balancer import BalanceConfig, BalanceOutcome, balance
from gvexplore.partition import LoadMetric, PowerPointSet
from gvexplore.topo_graph import Certainty, HybridTopoGraph, NodeKind


def path_graph(n: int, length: float = 1.0, kind: NodeKind = NodeKind.GV) -> HybridTopoGraph:
    g = HybridTopoGraph()
    for i in range(n):
        g.add_node(i, kind, (i * length, 0.0))
    for i in range(n - 1):
        g.add_edge(i, i + 1)
    return g


def star_graph(leaves: int = 3, kind: NodeKind = NodeKind.GV) -> HybridTopoGraph:
    g = HybridTopoGraph()
    g.add_node(0, kind, (0.0, 0.0))
    for k in range(leaves):
        a = 2 * math.pi * k / leaves
        g.add_node(k + 1, kind, (math.cos(a), math.sin(a)))
        g.add_edge(0, k + 1)
    return g


def random_graph(
    rng: np.random.Generator,
    n: int,
    extra: float = 0.3,
    dyadic: bool = True,
    mixed: bool = False,
) -> HybridTopoGraph:
    """Connected graph: random spanning tree plus extra edges.

    With ``dyadic`` the lengths are multiples of 0.5, so path sums are exact
    and ties between centers are common. With ``mixed`` about a third of the
    nodes are frontiers, giving a mix of certain and uncertain edges.
    """
    g = HybridTopoGraph()
    for i in range(n):
        kind = NodeKind.FRONTIER if mixed and rng.random() < 0.35 else NodeKind.GV
        g.add_node(i, kind, (float(rng.uniform(0, 10)), float(rng.uniform(0, 10))))

    def length() -> float:
        return 0.5 * int(rng.integers(1, 7)) if dyadic else float(rng.uniform(0.2, 3.0))

    order = rng.permutation(n)
    for k in range(1, n):
        u = int(order[k])
        v = int(order[rng.integers(k)])
        g.add_edge(u, v, length())
    for u, v in itertools.combinations(range(n), 2):
        if not g.has_edge(u, v) and rng.random() < extra / max(1, n / 4):
            g.add_edge(u, v, length())
    return g


def floyd_warshall(g: HybridTopoGraph) -> tuple[list[int], np.ndarray]:
    """All-pairs shortest distances by edge length."""
    ids = g.node_ids()
    idx = {v: k for k, v in enumerate(ids)}
    n = len(ids)
    d = np.full((n, n), math.inf)
    np.fill_diagonal(d, 0.0)
    for e in g.edges():
        d[idx[e.u], idx[e.v]] = d[idx[e.v], idx[e.u]] = e.length
    for k in range(n):
        d = np.minimum(d, d[:, k : k + 1] + d[k : k + 1, :])
    return ids, d


def oracle_labels(g: HybridTopoGraph, centers: list[int], w: np.ndarray) -> dict[int, int]:
    """Labels from exhaustive distances and the weighted Voronoi test.

    A node is claimed by the closest center (lower index on equal distance);
    every farther center, in order of distance, takes it over only when
    D_c(v) - w[c][holder] < D_holder(v). Center nodes keep their own label.
    """
    ids, d = floyd_warshall(g)
    idx = {v: k for k, v in enumerate(ids)}
    labels = {}
    for v in ids:
        if v in centers:
            labels[v] = centers.index(v)
            continue
        dist = [(d[idx[c], idx[v]], i) for i, c in enumerate(centers) if math.isfinite(d[idx[c], idx[v]])]
        if not dist:
            continue
        dist.sort()
        holder = dist[0][1]
        for dc, c in dist[1:]:
            if dc - w[c, holder] < d[idx[centers[holder]], idx[v]]:
                holder = c
        labels[v] = holder
    return labels


def tree_loads(g: HybridTopoGraph, labels: dict[int, int], centers: list[int], online: bool) -> list[float]:
    """Per-center sum of the edge from each labeled node to its parent toward
    that center; the parent is the lowest-id neighbour on a shortest path."""
    ids, d = floyd_warshall(g)
    idx = {v: k for k, v in enumerate(ids)}
    loads = [0.0] * len(centers)
    for v, c in labels.items():
        if v == centers[c]:
            continue
        dc = d[idx[centers[c]], idx[v]]
        u = min(u for u in g.neighbors(v)
                if abs(d[idx[centers[c]], idx[u]] + g.edge(u, v).length - dc) < 1e-9)
        e = g.edge(u, v)
        loads[c] += 0.0 if online and e.certainty is Certainty.DETERMINISTIC else e.length
    return loads


def random_feasible_weights(rng: np.random.Generator, g: HybridTopoGraph, centers: list[int],
                            dyadic: bool = True) -> np.ndarray:
    ids, d = floyd_warshall(g)
    idx = {v: k for k, v in enumerate(ids)}
    n = len(centers)
    w = np.zeros((n, n))
    for i, j in itertools.combinations(range(n), 2):
        lim = d[idx[centers[i]], idx[centers[j]]]
        if dyadic:
            steps = int(lim / 0.25) - 1
            val = 0.25 * int(rng.integers(-steps, steps + 1)) if steps > 0 else 0.0
        else:
            val = float(rng.uniform(-lim, lim)) * 0.999
        w[i, j], w[j, i] = val, -val
    return w


def brute_force_atsp(cost: np.ndarray) -> tuple[list[int], float]:
    """Best open path from index 0 over every permutation of the rest."""
    n = cost.shape[0]
    best, best_cost = [], 0.0 if n <= 1 else math.inf
    for perm in itertools.permutations(range(1, n)):
        c, prev = 0.0, 0
        for k in perm:
            c += cost[prev, k]
            prev = k
        if c < best_cost:
            best, best_cost = list(perm), c
    return best, best_cost


def ascii_grid(rows: list[str]) -> list[str]:
    return [r.strip() for r in rows if r.strip()]


def zero_weights(centers: list[int]) -> PowerPointSet:
    n = len(centers)
    return PowerPointSet([(i, c) for i, c in enumerate(centers)], np.zeros((n, n)))


def calibrated_balance(
    g: HybridTopoGraph, centers: list[int], metric: LoadMetric, gamma: float = 0.5, rounds: int = 4
) -> tuple[BalanceOutcome, float]:
    """Balance with B_lambda at twice the largest per-iteration load change
    observed under that same B_lambda (a fixed point of a few re-runs)."""
    b = 0.5
    for _ in range(rounds):
        out = balance(g, zero_weights(centers), BalanceConfig(gamma=gamma, b_lambda=b, max_iters=300), metric)
        need = 2.0 * out.max_load_jump()
        if need <= b:
            return out, b
        b = need
    return out, b
