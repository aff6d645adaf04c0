"""Distributed weight iteration for load-balanced graph Voronoi partitions."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .partition import (
    LoadMetric,
    PartitionResult,
    PowerPointSet,
    center_trees,
    edge_weight,
    graph_voronoi,
)
from .topo_graph import DUAL_SLOT, HybridTopoGraph, NodeKind, dijkstra, is_dual, make_node_id, node_counter

log = logging.getLogger(__name__)

Adjacency = Mapping[int, Sequence[int]]
FreeSpace = Callable[[float, float], bool]


@dataclass
class BalanceConfig:
    gamma: float = 0.5
    b_lambda: float = 10.0
    max_iters: int = 200
    overload_threshold: float | None = None  # defaults to 2 * b_lambda
    dual_radius: float = 0.5
    dual_attempts: int = 50

    def __post_init__(self) -> None:
        if self.overload_threshold is None:
            self.overload_threshold = 2.0 * self.b_lambda
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not self.b_lambda > 0:
            raise ValueError("b_lambda must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not self.overload_threshold > 0:
            raise ValueError("overload_threshold must be positive")
        if not self.dual_radius > 0:
            raise ValueError("dual_radius must be positive")


@dataclass
class BalanceOutcome:
    converged: bool
    iterations: int
    final_partition: PartitionResult
    final_weights: PowerPointSet
    load_trace: list[tuple[float, float, float]]
    loads: list[list[float]] = field(default_factory=list)
    initial_partition: PartitionResult | None = None

    def max_load_jump(self) -> float:
        """Largest per-iteration change of any single robot's load."""
        jump = 0.0
        for a, b in zip(self.loads, self.loads[1:]):
            jump = max(jump, max(abs(x - y) for x, y in zip(a, b)))
        return jump


def complete_adjacency(n: int) -> dict[int, list[int]]:
    return {i: [j for j in range(n) if j != i] for i in range(n)}


def _pairs(neighbors: Adjacency) -> list[tuple[int, int]]:
    out = set()
    for i, nbrs in neighbors.items():
        for j in nbrs:
            if i != j:
                out.add((min(i, j), max(i, j)))
    return sorted(out)


def _sign(x: float) -> float:
    return 1.0 if x > 0 else (-1.0 if x < 0 else 0.0)


def weight_step(
    loads: Sequence[float],
    neighbors: Adjacency,
    weights: PowerPointSet,
    cfg: BalanceConfig,
    center_dist: np.ndarray | None = None,
) -> PowerPointSet:
    """One synchronous round of the weight update over neighbour pairs.

    For a pair (i, j) with Δ = λ_j − λ_i and |Δ| > B_λ, w_ij moves by γ·sign(Δ)
    and w_ji mirrors it. With ``center_dist`` the result is clamped to the
    feasible band |w_ij| < D(g_i, g_j).
    """
    if not all(math.isfinite(x) for x in loads):
        raise ValueError("loads must be finite")
    out = weights.copy()
    for i, j in _pairs(neighbors):
        delta = loads[j] - loads[i]
        if abs(delta) > cfg.b_lambda:
            out.set_pair(i, j, out.weights[i, j] + cfg.gamma * _sign(delta))
    if center_dist is not None:
        out.clamp(center_dist)
    return out


def is_balanced(loads: Sequence[float], neighbors: Adjacency, b_lambda: float) -> bool:
    return all(abs(loads[j] - loads[i]) <= b_lambda for i, j in _pairs(neighbors))


def comm_components(n: int, neighbors: Adjacency) -> list[list[int]]:
    seen: set[int] = set()
    comps = []
    for s in range(n):
        if s in seen:
            continue
        stack, comp = [s], []
        seen.add(s)
        while stack:
            u = stack.pop()
            comp.append(u)
            for v in neighbors.get(u, ()):
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        comps.append(sorted(comp))
    return comps


def balance(
    g: HybridTopoGraph,
    centers: PowerPointSet,
    cfg: BalanceConfig | None = None,
    metric: LoadMetric = LoadMetric.PLAIN,
    comm: Adjacency | None = None,
    bias: Sequence[float] | None = None,
    update_weights: bool = True,
) -> BalanceOutcome:
    """Alternate partitioning and weight steps until no pair needs an update.

    ``bias`` is added to each robot's load before comparison (the ATSP
    feedback term). Centers stay fixed for the whole run. With
    ``update_weights`` false the partition is computed once and the run
    reports whether it already satisfies the tolerance.
    """
    cfg = cfg or BalanceConfig()
    n = len(centers)
    comm = complete_adjacency(n) if comm is None else comm
    if len(comm_components(n, comm)) > 1:
        raise ValueError("communication graph is disconnected; use balance_components")
    bias = [0.0] * n if bias is None else list(bias)
    trees = center_trees(g, centers.nodes)
    cdist = trees.center_distances()
    pp = centers.copy()
    pp.clamp(cdist)

    trace: list[tuple[float, float, float]] = []
    history: list[list[float]] = []
    first: PartitionResult | None = None
    k = 0
    while True:
        res = graph_voronoi(g, pp, metric, trees)
        first = first or res
        loads = [x + b for x, b in zip(res.load, bias)]
        history.append(loads)
        hi, lo = max(loads), min(loads)
        trace.append((hi, lo, hi - lo))
        if is_balanced(loads, comm, cfg.b_lambda):
            return BalanceOutcome(True, k, res, pp, trace, history, first)
        if k >= cfg.max_iters or not update_weights:
            return BalanceOutcome(False, k, res, pp, trace, history, first)
        pp = weight_step(loads, comm, pp, cfg, cdist)
        k += 1


def balance_components(
    g: HybridTopoGraph,
    centers: PowerPointSet,
    cfg: BalanceConfig | None = None,
    metric: LoadMetric = LoadMetric.PLAIN,
    comm: Adjacency | None = None,
    bias: Sequence[float] | None = None,
    update_weights: bool = True,
) -> list[tuple[list[int], BalanceOutcome]]:
    """Run ``balance`` independently on each connected communication component."""
    n = len(centers)
    comm = complete_adjacency(n) if comm is None else comm
    bias = [0.0] * n if bias is None else list(bias)
    out = []
    for comp in comm_components(n, comm):
        idx = {r: k for k, r in enumerate(comp)}
        sub = PowerPointSet(
            [centers.centers[r] for r in comp],
            centers.weights[np.ix_(comp, comp)],
        )
        sub_comm = {idx[r]: [idx[s] for s in comm.get(r, ()) if s in idx] for r in comp}
        outcome = balance(g, sub, cfg, metric, sub_comm, [bias[r] for r in comp], update_weights)
        out.append((comp, outcome))
    return out


def virtual_center(
    g: HybridTopoGraph,
    my_partition: Sequence[int],
    neighbor_centers: Sequence[int],
    robot_pos: Sequence[float],
) -> int:
    """Partition node farthest (summed graph distance) from the neighbour centers.

    Ties go to the node nearest ``robot_pos``, then to the lowest id. Neighbour
    centers that cannot reach the partition are ignored.
    """
    cand = sorted(set(my_partition))
    if not cand:
        raise ValueError("empty partition")

    def near(v: int) -> tuple[float, int]:
        p = g.node(v).pos
        return (math.hypot(p[0] - robot_pos[0], p[1] - robot_pos[1]), v)

    fields = []
    for c in neighbor_centers:
        dist, _ = dijkstra(g, c)
        if all(v in dist for v in cand):
            fields.append(dist)
    if not fields:
        return min(cand, key=near)
    score = {v: math.fsum(f[v] for f in fields) for v in cand}
    top = max(score.values())
    tied = [v for v in cand if score[v] >= top - 1e-9]
    return min(tied, key=near)


def _segment_free(free_space: FreeSpace, p: Sequence[float], q: Sequence[float], step: float = 0.05) -> bool:
    n = max(1, int(math.ceil(math.hypot(q[0] - p[0], q[1] - p[1]) / step)))
    for k in range(n + 1):
        t = k / n
        if not free_space(p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])):
            return False
    return True


def removal_load_changes(g: HybridTopoGraph, res: PartitionResult, center: int) -> dict[int, float]:
    """|λ(N_i) − λ(N_i minus v)| for each non-center node v of a partition.

    The reduced load is the tree sum of a fresh shortest-path tree from g_i
    over the induced subgraph without v; nodes cut off by the removal drop out.
    """
    members = set(res.partition[center])
    root = res.centers[center]
    base = math.fsum(w for _, _, w in res.tree[center])
    out = {}
    for v in sorted(members):
        if v == root:
            continue
        keep = members - {v}
        _, parent = dijkstra(g, root, allowed=keep)
        lam = math.fsum(edge_weight(g.edge(p, u), res.metric) for u, p in parent.items() if p >= 0)
        out[v] = abs(base - lam)
    return out


def insert_dual_nodes(
    g: HybridTopoGraph,
    res: PartitionResult,
    cfg: BalanceConfig,
    free_space: FreeSpace,
    seed: int = 0,
) -> HybridTopoGraph:
    """Add one dual node beside every overloaded node.

    A node is overloaded when removing it from its partition changes the
    center's load by at least ``cfg.overload_threshold``. Duals are sampled
    with a per-node seeded generator inside ``cfg.dual_radius`` and joined to
    the overloaded node's neighbours by collision-free straight segments.
    """
    overloaded = []
    for c in range(len(res.centers)):
        for v, change in removal_load_changes(g, res, c).items():
            if change >= cfg.overload_threshold:
                overloaded.append(v)
    if not overloaded:
        return g

    out = g.copy()
    duals = [n for n in out.nodes() if is_dual(n.id)]
    counter = max((node_counter(n.id) for n in duals), default=-1) + 1
    for v in sorted(overloaded):
        vp = out.node(v).pos
        if any(math.hypot(d.pos[0] - vp[0], d.pos[1] - vp[1]) <= cfg.dual_radius for d in duals):
            continue
        rng = np.random.default_rng([seed, v & 0xFFFFFFFF, v >> 32])
        nbrs = [u for u in out.neighbors(v) if not is_dual(u)]
        placed = None
        for _ in range(cfg.dual_attempts):
            r = cfg.dual_radius * math.sqrt(rng.uniform(0.25, 1.0))
            th = rng.uniform(0.0, 2.0 * math.pi)
            p = (vp[0] + r * math.cos(th), vp[1] + r * math.sin(th))
            if not free_space(*p):
                continue
            links = [u for u in nbrs if _segment_free(free_space, p, out.node(u).pos)]
            if links:
                placed = (p, links)
                break
        if placed is None:
            log.info("no free dual sample near node %d after %d attempts", v, cfg.dual_attempts)
            continue
        p, links = placed
        nid = make_node_id(DUAL_SLOT, counter)
        counter += 1
        node = out.add_node(nid, NodeKind.COVERAGE, p)
        for u in links:
            out.add_edge(nid, u)
        duals.append(node)
    return out
