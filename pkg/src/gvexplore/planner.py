"""Target ranking, dual-layer path costs, ATSP sequencing and waypoint emission."""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import ndimage

from .topo_graph import Certainty, HybridTopoGraph, NodeKind, dijkstra, is_dual
from .world import FREE, OCCUPIED, UNKNOWN, OccupancyGrid

SQRT2 = math.sqrt(2.0)
EXACT_ATSP_MAX = 12
INFLATION_PENALTY = 4.0


@dataclass
class PriorityParams:
    beta_c: float = 0.3
    beta_s: float = 0.1
    horizon: int = 5
    gamma_d: float = 1.0

    def __post_init__(self) -> None:
        if not 0 <= self.beta_c < 1 or not 0 <= self.beta_s < 1:
            raise ValueError("beta_c and beta_s must lie in [0, 1)")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.gamma_d < 0:
            raise ValueError("gamma_d must be non-negative")


# -- priority -------------------------------------------------------------------------

def information_gain(belief: OccupancyGrid, pos: Sequence[float], radius: float) -> int:
    """Unknown cells whose centers lie within ``radius`` of ``pos``."""
    res = belief.resolution
    r0, c0 = belief.world_to_cell(*pos)
    R = int(math.ceil(radius / res))
    rs = slice(max(0, r0 - R), min(belief.height, r0 + R + 1))
    cs = slice(max(0, c0 - R), min(belief.width, c0 + R + 1))
    rr, cc = np.mgrid[rs, cs]
    inside = np.hypot((cc + 0.5) * res - pos[0], (rr + 0.5) * res - pos[1]) <= radius
    return int(np.count_nonzero(inside & (belief.cells[rs, cs] == UNKNOWN)))


def minmax(values: Sequence[float], degenerate: float) -> list[float]:
    lo, hi = min(values), max(values)
    if hi - lo <= 0:
        return [degenerate] * len(values)
    return [(v - lo) / (hi - lo) for v in values]


def priority_scores(
    gains: Sequence[float],
    costs: Sequence[float],
    flags: Sequence[int],
    params: PriorityParams,
) -> list[float]:
    """π = I − β_C·C + β_S·S with I and C min-max normalised over the set.

    An all-equal set normalises gains to 1 and costs to 0.
    """
    if not gains:
        return []
    g = minmax(gains, 1.0)
    c = minmax(costs, 0.0)
    return [gi - params.beta_c * ci + params.beta_s * s for gi, ci, s in zip(g, c, flags)]


def priority(gain: float, cost: float, flag: int, params: PriorityParams) -> float:
    """Score of one already-normalised candidate."""
    return gain - params.beta_c * cost + params.beta_s * flag


def self_flags(
    g: HybridTopoGraph,
    members: Sequence[int],
    me: int,
    label_before: Mapping[int, int],
    label_after: Mapping[int, int],
    margin: int = 2,
) -> dict[int, int]:
    """S(v) = 1 when v kept its label through the balance run and lies more
    than ``margin`` edges from every node labelled to another center."""
    hops: dict[int, int] = {}
    queue: deque[int] = deque()
    for v, lab in label_after.items():
        if lab != me and v in g:
            hops[v] = 0
            queue.append(v)
    while queue:
        u = queue.popleft()
        if hops[u] >= margin:
            continue
        for v in g.neighbors(u):
            if v not in hops:
                hops[v] = hops[u] + 1
                queue.append(v)
    out = {}
    for v in members:
        stable = label_before.get(v) == me and label_after.get(v) == me
        out[v] = int(stable and v not in hops)
    return out


# -- grid layer ---------------------------------------------------------------------------

class GridPlanner:
    """A* over known-free cells of a belief, with a soft penalty near obstacles.

    Cells within ``safe_distance`` of a known obstacle stay traversable but
    cost ``1 + INFLATION_PENALTY`` times more, so paths keep clear where they
    can and still squeeze through narrow passages. Unknown cells are blocked.
    Diagonal moves need both side cells traversable.
    """

    def __init__(self, belief: OccupancyGrid, safe_distance: float = 0.5) -> None:
        self.belief = belief
        self.res = belief.resolution
        cells = belief.cells
        self.free = cells == FREE
        clearance = ndimage.distance_transform_edt(cells != OCCUPIED) * self.res
        self.clearance = clearance
        self.inflated = clearance < safe_distance + 0.5 * self.res
        self.mult = np.where(self.inflated, 1.0 + INFLATION_PENALTY, 1.0)
        self.h, self.w = cells.shape

    def cell(self, pos: Sequence[float]) -> tuple[int, int]:
        return self.belief.world_to_cell(pos[0], pos[1])

    def astar(
        self,
        start: Sequence[float],
        goal: Sequence[float],
        goal_tol: float = 0.0,
    ) -> tuple[float, list[tuple[int, int]]] | None:
        """Cheapest path from the start cell to a free cell within ``goal_tol``
        of ``goal`` (the goal cell itself when the tolerance is zero)."""
        sr, sc = self.cell(start)
        gr, gc = self.cell(goal)
        gx, gy = goal[0] / self.res - 0.5, goal[1] / self.res - 0.5
        tol2 = (goal_tol / self.res) ** 2
        if not (0 <= sr < self.h and 0 <= sc < self.w):
            return None
        free, mult, w = self.free, self.mult, self.w

        def at_goal(r: int, c: int) -> bool:
            if (r, c) == (gr, gc):
                return True
            return tol2 > 0 and (c - gx) ** 2 + (r - gy) ** 2 <= tol2

        def heur(r: int, c: int) -> float:
            dy, dx = abs(r - gy), abs(c - gx)
            if tol2 > 0:
                d = math.hypot(dy, dx) - math.sqrt(tol2)
                return max(0.0, d) * self.res
            return (max(dy, dx) + (SQRT2 - 1) * min(dy, dx)) * self.res

        start_i = sr * w + sc
        best = {start_i: 0.0}
        came: dict[int, int] = {}
        heap = [(heur(sr, sc), 0.0, start_i)]
        closed = set()
        while heap:
            f, gcost, u = heapq.heappop(heap)
            if u in closed:
                continue
            closed.add(u)
            r, c = divmod(u, w)
            if at_goal(r, c) and (free[r, c] or u == start_i):
                path = [(r, c)]
                while u in came:
                    u = came[u]
                    path.append(divmod(u, w))
                path.reverse()
                return gcost, path
            for dr, dc in ((0, 1), (1, 0), (0, -1), (-1, 0), (1, 1), (1, -1), (-1, 1), (-1, -1)):
                nr, nc = r + dr, c + dc
                if not (0 <= nr < self.h and 0 <= nc < self.w) or not free[nr, nc]:
                    continue
                if dr and dc and not (free[r, nc] and free[nr, c]):
                    continue
                step = (SQRT2 if dr and dc else 1.0) * self.res * mult[nr, nc]
                ng = gcost + step
                v = nr * w + nc
                if ng < best.get(v, math.inf):
                    best[v] = ng
                    came[v] = u
                    heapq.heappush(heap, (ng + heur(nr, nc), ng, v))
        return None

    def _line_cells(self, a: Sequence[float], b: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
        """Every cell the segment a→b touches (fractional cell coordinates).

        Walks the crossings of row and column lines; a crossing through a
        grid corner adds all four cells around it, so no diagonal squeeze.
        """
        r0, c0 = a
        dr, dc = b[0] - r0, b[1] - c0
        ts = {0.0, 1.0}
        for p0, d in ((r0, dr), (c0, dc)):
            if abs(d) > 1e-12:
                lo, hi = sorted((p0, p0 + d))
                for k in range(math.floor(lo) + 1, math.ceil(hi)):
                    ts.add((k - p0) / d)
        ts = sorted(ts)
        rs = [math.floor(r0 + (s + t) / 2 * dr) for s, t in zip(ts, ts[1:])]
        cs = [math.floor(c0 + (s + t) / 2 * dc) for s, t in zip(ts, ts[1:])]
        rs.append(math.floor(b[0]))
        cs.append(math.floor(b[1]))
        for t in ts:
            pr, pc = r0 + t * dr, c0 + t * dc
            rr, cc = round(pr), round(pc)
            if abs(pr - rr) < 1e-9 and abs(pc - cc) < 1e-9:
                rs += [rr - 1, rr - 1, rr, rr]
                cs += [cc - 1, cc, cc - 1, cc]
        return np.array(rs, dtype=int), np.array(cs, dtype=int)

    def _clear(self, a: Sequence[float], b: Sequence[float], min_clear: float) -> bool:
        r, c = self._line_cells(a, b)
        if (r < 0).any() or (r >= self.h).any() or (c < 0).any() or (c >= self.w).any():
            return False
        return bool(self.free[r, c].all() and (self.clearance[r, c] >= min_clear - 1e-9).all())

    def simplify(
        self, path: list[tuple[int, int]], start: Sequence[float] | None = None
    ) -> list[tuple[float, float]]:
        """Greedy line-of-sight shortcutting, in fractional cell coordinates.

        A shortcut must stay in known free cells and may not come closer to an
        obstacle than the stretch of path it replaces. With ``start`` (a world
        position) the route begins there instead of at the first cell center.
        """
        pts = [(r + 0.5, c + 0.5) for r, c in path]
        clear = [float(self.clearance[p]) for p in path]
        if start is not None:
            pts[0] = (start[1] / self.res, start[0] / self.res)
        if len(pts) <= 2:
            return pts
        out = [pts[0]]
        i = 0
        while i < len(pts) - 1:
            j = i + 1
            lo = min(clear[i], clear[j])
            k = i + 2
            while k < len(pts):
                lo = min(lo, clear[k])
                if not self._clear(pts[i], pts[k], lo):
                    break
                j = k
                k += 1
            if j == i + 1 and i == 0 and start is not None and not self._clear(pts[0], pts[1], 0.0):
                # The pose sits off-center; step back to the start cell first.
                out.append((path[0][0] + 0.5, path[0][1] + 0.5))
            out.append(pts[j])
            i = j
        return out

    def route_length(self, start: Sequence[float], path: list[tuple[int, int]]) -> float:
        """Metric length of the shortcut route from ``start`` along ``path``."""
        pts = [(c * self.res, r * self.res) for r, c in self.simplify(path, start)]
        return math.fsum(math.hypot(b[0] - a[0], b[1] - a[1]) for a, b in zip(pts, pts[1:]))

    def waypoints(self, path: list[tuple[int, int]], start: Sequence[float] | None = None) -> list[tuple[float, float]]:
        pts = [(c * self.res, r * self.res) for r, c in self.simplify(path, start)]
        return pts[1:] if len(pts) > 1 else pts


class DualLayerCost:
    """Path costs from one robot pose to graph nodes.

    The grid leg runs A* from the pose to the nearest graph node; the graph
    leg is a shortest path from there. Targets without a graph route fall
    back to a pure grid search. Grid legs are measured as the metric length
    of the shortcut route; the inflation penalty only shapes the route.
    """

    def __init__(self, grid: GridPlanner, graph: HybridTopoGraph, pose: Sequence[float]) -> None:
        self.grid = grid
        self.graph = graph
        self.pose = (float(pose[0]), float(pose[1]))
        self.entry: int | None = None
        self.entry_cost = math.inf
        self.graph_dist: dict[int, float] = {}
        self._fallback: dict[int, float] = {}
        cands = sorted(
            (math.hypot(n.pos[0] - self.pose[0], n.pos[1] - self.pose[1]), n.id)
            for n in graph.nodes()
            if grid.belief.value_at(*n.pos) == FREE
        )
        for _, nid in cands[:3]:
            found = grid.astar(self.pose, graph.node(nid).pos)
            if found is not None:
                self.entry, self.entry_cost = nid, grid.route_length(self.pose, found[1])
                break
        if self.entry is not None:
            self.graph_dist, _ = dijkstra(graph, self.entry)

    def __call__(self, node: int) -> float:
        if node in self.graph_dist:
            cost = self.entry_cost + self.graph_dist[node]
            pos = self.graph.node(node).pos
            return max(cost, math.hypot(pos[0] - self.pose[0], pos[1] - self.pose[1]))
        if node not in self._fallback:
            pos = self.graph.node(node).pos
            found = self.grid.astar(self.pose, pos, approach_tolerance(self.grid.belief, pos))
            self._fallback[node] = math.inf if found is None else self.grid.route_length(self.pose, found[1])
        return self._fallback[node]


def approach_tolerance(belief: OccupancyGrid, pos: Sequence[float]) -> float:
    """Targets in unknown space only need to be approached; known ones reached."""
    return 1.0 if belief.value_at(*pos) == UNKNOWN else 0.3


def dual_layer_cost(
    pose: Sequence[float],
    node: int,
    graph: HybridTopoGraph,
    belief: OccupancyGrid,
    safe_distance: float = 0.5,
) -> float:
    return DualLayerCost(GridPlanner(belief, safe_distance), graph, pose)(node)


# -- ATSP -------------------------------------------------------------------------------------

def _path_cost(cost: np.ndarray, order: Sequence[int]) -> float:
    total, prev = 0.0, 0
    for j in order:
        total += cost[prev, j]
        prev = j
    return float(total)


def held_karp(cost: np.ndarray) -> tuple[list[int], float]:
    """Exact open-path ATSP from node 0 over nodes 1..n (dynamic programming)."""
    n = cost.shape[0] - 1
    if n == 0:
        return [], 0.0
    full = (1 << n) - 1
    INF = math.inf
    dp = [[INF] * n for _ in range(1 << n)]
    par = [[-1] * n for _ in range(1 << n)]
    for j in range(n):
        dp[1 << j][j] = float(cost[0, j + 1])
    for mask in range(1, full + 1):
        row = dp[mask]
        for j in range(n):
            base = row[j]
            if base == INF or not mask >> j & 1:
                continue
            for k in range(n):
                if mask >> k & 1:
                    continue
                nm = mask | 1 << k
                val = base + cost[j + 1, k + 1]
                if val < dp[nm][k]:
                    dp[nm][k] = val
                    par[nm][k] = j
    end = min(range(n), key=lambda j: (dp[full][j], j))
    order = []
    mask, j = full, end
    while j >= 0:
        order.append(j + 1)
        pj = par[mask][j]
        mask ^= 1 << j
        j = pj
    order.reverse()
    return order, _path_cost(cost, order)


def _local_search(cost: np.ndarray, order: list[int]) -> list[int]:
    """Best-improvement descent over segment reversals and segment moves.

    The open path is closed with a zero-cost sentinel end so every move is
    an interior rearrangement; reversal costs come from prefix sums, which
    keeps each move's delta O(1) on asymmetric matrices.
    """
    n = len(order)
    if n < 2:
        return list(order)
    end = cost.shape[0]
    c = np.zeros((end + 1, end + 1))
    c[:end, :end] = cost
    c = c.tolist()
    seq = [0] + list(order) + [end]
    while True:
        fwd = [0.0]
        back = [0.0]
        for a, b in zip(seq, seq[1:]):
            fwd.append(fwd[-1] + c[a][b])
            back.append(back[-1] + c[b][a])
        best_delta, move = -1e-12, None
        for i in range(1, n + 1):
            p = seq[i - 1]
            for j in range(i, n + 1):
                si, sj, q = seq[i], seq[j], seq[j + 1]
                cut = c[p][si] + c[sj][q]
                if j > i:
                    d = c[p][sj] + (back[j] - back[i]) + c[si][q] - cut - (fwd[j] - fwd[i])
                    if d < best_delta:
                        best_delta, move = d, ("rev", i, j, 0)
                gap = c[p][q] - cut
                for k in range(0, n + 1):
                    if i - 1 <= k <= j:
                        continue
                    a, b = seq[k], seq[k + 1]
                    d = gap - c[a][b] + c[a][si] + c[sj][b]
                    if d < best_delta:
                        best_delta, move = d, ("move", i, j, k)
        if move is None:
            return seq[1:-1]
        kind, i, j, k = move
        if kind == "rev":
            seq[i : j + 1] = seq[i : j + 1][::-1]
        else:
            seg = seq[i : j + 1]
            if k < i:
                seq = seq[: k + 1] + seg + seq[k + 1 : i] + seq[j + 1 :]
            else:
                seq = seq[:i] + seq[j + 1 : k + 1] + seg + seq[k + 1 :]


def _double_bridge(order: list[int], rng: np.random.Generator) -> list[int]:
    n = len(order)
    if n < 4:
        k = int(rng.integers(n))
        return order[k:] + order[:k]
    a, b, c = sorted(int(x) for x in rng.choice(np.arange(1, n), size=3, replace=False))
    return order[:a] + order[c:] + order[b:c] + order[a:b]


def heuristic_atsp(cost: np.ndarray, kicks: int | None = None, seed: int = 0) -> tuple[list[int], float]:
    """Nearest-neighbour starts (one per first target) refined by local search,
    then iterated local search with seeded double-bridge kicks."""
    n = cost.shape[0] - 1
    if n == 0:
        return [], 0.0
    best, best_cost = None, math.inf
    for first in range(1, n + 1):
        order = [first]
        left = set(range(1, n + 1)) - {first}
        while left:
            cur = order[-1]
            nxt = min(left, key=lambda j: (cost[cur, j], j))
            order.append(nxt)
            left.remove(nxt)
        order = _local_search(cost, order)
        c = _path_cost(cost, order)
        if c < best_cost - 1e-12:
            best, best_cost = order, c
    rng = np.random.default_rng([seed, n])
    for _ in range(min(30 * n, 300) if kicks is None else kicks):
        order = _local_search(cost, _double_bridge(best, rng))
        c = _path_cost(cost, order)
        if c < best_cost - 1e-12:
            best, best_cost = order, c
    return best, best_cost


def solve_atsp(cost: np.ndarray | Sequence[Sequence[float]]) -> tuple[list[int], float]:
    """Open-path ATSP from index 0; exact up to 12 targets, heuristic beyond."""
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError("cost matrix must be square")
    n = cost.shape[0] - 1
    if not np.isfinite(cost).all():
        raise ValueError("cost matrix must be finite")
    if n <= EXACT_ATSP_MAX:
        return held_karp(cost)
    return heuristic_atsp(cost)


# -- planning cycle ----------------------------------------------------------------------

@dataclass
class PlanResult:
    waypoints: list[tuple[float, float]]
    d_t: float
    status: str
    targets: list[int] = field(default_factory=list)
    tour: list[int] = field(default_factory=list)
    goal: int | None = None
    self_flags: dict[int, int] = field(default_factory=dict)
    unreachable: list[int] = field(default_factory=list)


def target_nodes(g: HybridTopoGraph, members: Sequence[int] | None = None) -> list[int]:
    """Frontier/coverage endpoints of uncertain edges (dual nodes excluded)."""
    pool = g.node_ids() if members is None else sorted(members)
    out = []
    for v in pool:
        n = g.node(v)
        if n.kind is NodeKind.GV or is_dual(v):
            continue
        if any(e.certainty is Certainty.UNCERTAIN for e in g.incident(v)):
            out.append(v)
    return out


def plan_cycle(
    pose: Sequence[float],
    graph: HybridTopoGraph,
    members: Sequence[int],
    belief: OccupancyGrid,
    params: PriorityParams,
    me: int = 0,
    labels: Mapping[int, int] | None = None,
    labels_before: Mapping[int, int] | None = None,
    sensor_range: float = 3.0,
    safe_distance: float = 0.5,
    blocked: set[int] | frozenset[int] = frozenset(),
) -> PlanResult:
    """One receding-horizon plan for a robot at ``pose`` owning ``members``."""
    labels = labels or {v: me for v in members}
    labels_before = labels if labels_before is None else labels_before
    grid = GridPlanner(belief, safe_distance)
    costs = DualLayerCost(grid, graph, pose)
    all_targets = [v for v in target_nodes(graph) if v not in blocked]
    mine = [v for v in target_nodes(graph, [m for m in members if m in graph]) if v not in blocked]
    flags = self_flags(graph, [m for m in members if m in graph], me, labels_before, labels)
    if not all_targets:
        return PlanResult([], 0.0, "complete", self_flags=flags)

    cand, raw_cost, unreachable = [], [], []
    for v in mine:
        c = costs(v)
        if math.isfinite(c):
            cand.append(v)
            raw_cost.append(c)
        else:
            unreachable.append(v)

    if not cand:
        return _fallback(pose, graph, belief, grid, costs, all_targets, set(members), flags, unreachable)

    gains = [information_gain(belief, graph.node(v).pos, sensor_range) for v in cand]
    scores = priority_scores(gains, raw_cost, [flags.get(v, 0) for v in cand], params)
    ranked = sorted(range(len(cand)), key=lambda k: (-scores[k], cand[k]))
    chosen = [cand[k] for k in ranked[: params.horizon]]
    chosen_cost = {cand[k]: raw_cost[k] for k in ranked[: params.horizon]}

    m = len(chosen)
    mat = np.zeros((m + 1, m + 1))
    for a, v in enumerate(chosen):
        mat[0, a + 1] = chosen_cost[v]
        dist, _ = dijkstra(graph, v)
        for b, u in enumerate(chosen):
            if a == b:
                continue
            if u in dist:
                mat[a + 1, b + 1] = dist[u]
            else:
                pu, pv = graph.node(u).pos, graph.node(v).pos
                mat[a + 1, b + 1] = 2.0 * math.hypot(pu[0] - pv[0], pu[1] - pv[1])
    order, d_t = solve_atsp(mat)
    tour = [chosen[k - 1] for k in order]

    for goal in tour:
        pos = graph.node(goal).pos
        found = grid.astar(pose, pos, approach_tolerance(belief, pos))
        if found is not None:
            wps = grid.waypoints(found[1], pose)
            return PlanResult(wps, d_t, "ok", mine, tour, goal, flags, unreachable)
        unreachable.append(goal)
    return PlanResult([], d_t, "stuck", mine, tour, None, flags, unreachable)


def _fallback(pose, graph, belief, grid, costs, all_targets, members, flags, unreachable) -> PlanResult:
    """Idle robot: head for the nearest target owned by someone else, one
    partition boundary at a time."""
    foreign = [v for v in all_targets if v not in members]
    on_graph = sorted((costs(v), v) for v in foreign if v in costs.graph_dist)
    if on_graph:
        target = on_graph[0][1]
    else:
        off = sorted(
            (math.hypot(graph.node(v).pos[0] - pose[0], graph.node(v).pos[1] - pose[1]), v) for v in foreign
        )
        reachable = [v for _, v in off[:3] if math.isfinite(costs(v))]
        if not reachable:
            return PlanResult([], 0.0, "idle", self_flags=flags, unreachable=unreachable)
        target = reachable[0]
    goal = target
    if costs.entry is not None:
        _, parent = dijkstra(graph, costs.entry)
        path = [target]
        while path[-1] != costs.entry and parent.get(path[-1], -1) >= 0:
            path.append(parent[path[-1]])
        path.reverse()
        for v in path:
            p = graph.node(v).pos
            if v not in members and math.hypot(p[0] - pose[0], p[1] - pose[1]) > 0.5:
                goal = v
                break
    pos = graph.node(goal).pos
    found = grid.astar(pose, pos, approach_tolerance(belief, pos))
    if found is None and goal != target:
        goal = target
        pos = graph.node(goal).pos
        found = grid.astar(pose, pos, approach_tolerance(belief, pos))
    if found is None:
        return PlanResult([], 0.0, "idle", self_flags=flags, unreachable=unreachable + [target])
    # The committed travel still counts as this robot's tour for the feedback term.
    d_t = costs(target)
    d_t = d_t if math.isfinite(d_t) else grid.route_length(pose, found[1])
    return PlanResult(grid.waypoints(found[1], pose), d_t, "fallback", [], [], goal, flags, unreachable)

