"""Deterministic multi-robot exploration episodes and their output files."""

from __future__ import annotations

import csv
import json
import logging
import math
import statistics
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .balancer import BalanceConfig, balance, comm_components, insert_dual_nodes, virtual_center
from .mapper import MapperParams, TopoMapper
from .network import exchange_and_fuse, neighbors
from .partition import LoadMetric, PowerPointSet, graph_voronoi
from .planner import PriorityParams, plan_cycle, target_nodes
from .topo_graph import Certainty, HybridTopoGraph, format_snapshot, merge_graphs
from .world import FREE, UNKNOWN, OccupancyGrid, RobotState, Scenario, SimClock, sense, step_robot

log = logging.getLogger(__name__)


class Variant(str, Enum):
    FULL = "full"
    NOWEIGHT = "noweight"
    POSVOR = "posvor"
    NOFB = "nofb"

    @property
    def virtual_centers(self) -> bool:
        return self in (Variant.FULL, Variant.NOFB)

    @property
    def weights(self) -> bool:
        return self is not Variant.NOWEIGHT

    @property
    def feedback(self) -> bool:
        return self in (Variant.FULL, Variant.POSVOR)


@dataclass
class ExploreParams:
    gamma: float = 0.5
    b_lambda: float = 10.0
    beta_c: float = 0.3
    beta_s: float = 0.1
    d_c: float = 5.0
    horizon: int = 5
    gamma_d: float = 1.0
    v_max: float = 1.2
    omega_max: float = 1.57
    sensor_range: float = 3.0
    resolution: float = 0.1
    safe_distance: float = 0.5
    comm_range: float = 15.0
    dt: float = 0.1
    replan_period: float = 1.0
    comm_period: float = 1.0
    max_time: float = 600.0
    coverage_target: float = 0.98
    n_rays: int = 360
    multi_hop: bool = False
    drop_prob: float = 0.0
    max_balance_iters: int = 200
    trap_cycles: int = 30
    blacklist_cycles: int = 10
    stall_cycles: int = 5
    stall_blacklist_cycles: int = 60
    d_hat: float = 2.0
    node_spacing: float = 1.0

    def priority(self) -> PriorityParams:
        return PriorityParams(self.beta_c, self.beta_s, self.horizon, self.gamma_d)

    def balance_config(self) -> BalanceConfig:
        return BalanceConfig(gamma=self.gamma, b_lambda=self.b_lambda, max_iters=self.max_balance_iters)

    def mapper(self, sensor_range: float) -> MapperParams:
        return MapperParams(d_hat=self.d_hat, node_spacing=self.node_spacing, d_c=self.d_c,
                            sensor_range=sensor_range)


@dataclass
class EpisodeMetrics:
    scenario: str
    variant: str
    seed: int
    robots: int
    success: bool
    reason: str
    coverage: float
    exploration_time: float
    tour_distances: list[float]
    robot_times: list[float]
    collisions: int
    bytes_sent: int
    max_abs_weight: float
    coverage_curve: list[tuple[float, float]] = field(default_factory=list)
    balance_trace: list[tuple[float, int, float, float, float]] = field(default_factory=list)
    trajectory: list[tuple[float, int, float, float, float]] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)
    final_graph: HybridTopoGraph | None = None
    final_labels: dict[int, int] = field(default_factory=dict)

    @property
    def gap(self) -> float:
        return max(self.tour_distances) - min(self.tour_distances)


def _exploring(g: HybridTopoGraph, part: Sequence[int]) -> list[int]:
    """Partition nodes still touching unexplored space (an uncertain edge);
    explored parts of the graph only carry connectivity."""
    return [v for v in part if any(e.certainty is Certainty.UNCERTAIN for e in g.incident(v))]


def _distinct_nearest(g: HybridTopoGraph, poses: Sequence[tuple[float, float]]) -> list[int] | None:
    """Nearest node per robot, in robot order, skipping nodes already taken."""
    nodes = list(g.nodes())
    out: list[int] = []
    for p in poses:
        ranked = sorted(nodes, key=lambda n: (math.hypot(n.pos[0] - p[0], n.pos[1] - p[1]), n.id))
        pick = next((n.id for n in ranked if n.id not in out), None)
        if pick is None:
            return None
        out.append(pick)
    return out


class Episode:
    """One exploration run; ``run`` ticks it to completion."""

    def __init__(self, scenario: Scenario, params: ExploreParams | None = None,
                 variant: Variant | str = Variant.FULL, seed: int = 0, robots: int | None = None) -> None:
        self.sc = scenario
        self.p = params or ExploreParams()
        self.variant = Variant(variant)
        self.seed = seed
        self.n = robots or scenario.robots
        if self.n > len(scenario.starts):
            raise ValueError(f"scenario has {len(scenario.starts)} start poses, {self.n} robots requested")
        if abs(scenario.world.resolution - self.p.resolution) > 1e-12:
            raise ValueError(
                f"resolution {self.p.resolution} does not match scenario resolution {scenario.world.resolution}")
        self.world = scenario.world
        self.sensor = scenario.sensor_range if scenario.sensor_range is not None else self.p.sensor_range
        self.clock = SimClock(self.p.dt, self.p.replan_period, self.p.comm_period)
        h, w = self.world.cells.shape
        self.states = [
            RobotState(i, x, y, th, self.p.v_max, self.p.omega_max)
            for i, (x, y, th) in enumerate(scenario.starts[: self.n])
        ]
        self.beliefs = [OccupancyGrid.unknown(h, w, self.world.resolution) for _ in range(self.n)]
        self.graphs = [HybridTopoGraph() for _ in range(self.n)]
        mp = self.p.mapper(self.sensor)
        self.mappers = [TopoMapper(i, self.beliefs[i], mp, seed) for i in range(self.n)]
        self.W = np.zeros((self.n, self.n))
        self.d_t = [0.0] * self.n
        self.waypoints: list[list[tuple[float, float]]] = [[] for _ in range(self.n)]
        self.blocked: list[dict[int, int]] = [{} for _ in range(self.n)]
        self.trap = [0] * self.n
        self.goal_hist: list[list[tuple[int | None, tuple[float, float]]]] = [[] for _ in range(self.n)]
        self.done = [False] * self.n
        self.last_move = [0.0] * self.n
        self.prev_partner: set[tuple[int, int]] = set()
        self.comm = {i: [] for i in range(self.n)}
        self.reach = scenario.reachable_free()
        self.total = int(self.reach.sum())
        self.labels: dict[int, int] = {}
        self.centers: dict[int, int] = {}
        self.cycle = 0
        self.max_w = 0.0
        self.collisions = 0
        self.bytes_sent = 0
        self.coverage_curve: list[tuple[float, float]] = []
        self.balance_trace: list[tuple[float, int, float, float, float]] = []
        self.trajectory: list[tuple[float, int, float, float, float]] = []
        self.events: list[dict] = []

    # -- pieces of a tick ----------------------------------------------------------

    def coverage(self) -> float:
        known = np.zeros_like(self.reach)
        for b in self.beliefs:
            known |= b.cells == FREE
        return float(np.count_nonzero(known & self.reach)) / max(1, self.total)

    def _sense(self) -> None:
        for i, s in enumerate(self.states):
            changed = sense(self.world, self.beliefs[i], s.pos, self.sensor, self.p.n_rays)
            self.mappers[i].note_changes(changed)

    def _exchange(self) -> None:
        self.comm = neighbors([s.pos for s in self.states], self.p.comm_range, self.p.multi_hop)
        extras = [{"load": 0.0, "tour": self.d_t[i]} for i in range(self.n)]
        rng = np.random.default_rng([self.seed, self.clock.step]) if self.p.drop_prob > 0 else None
        ex = exchange_and_fuse(self.beliefs, self.graphs, self.comm, self.clock.step, extras,
                               self.p.drop_prob, rng)
        for i in range(self.n):
            gained = (self.beliefs[i].cells == UNKNOWN) & (ex.beliefs[i].cells != UNKNOWN)
            self.mappers[i].note_changes(gained)
            self.beliefs[i] = ex.beliefs[i]
            self.graphs[i] = ex.graphs[i]
        self.bytes_sent += ex.bytes_sent
        self.events.append({"t": round(self.clock.t, 6), "type": "exchange", "bytes": ex.bytes_sent,
                            "links": sum(len(v) for v in self.comm.values()) // 2})

    def _replan(self) -> None:
        t = round(self.clock.t, 6)
        self.cycle += 1
        for i, s in enumerate(self.states):
            self.graphs[i] = self.mappers[i].update(self.beliefs[i], self.graphs[i], s.pos)
        comps = comm_components(self.n, self.comm)
        pairs_now = {(a, b) for comp in comps for a in comp for b in comp if a < b}
        for a, b in sorted(pairs_now - self.prev_partner):
            self.W[a, b] = self.W[b, a] = 0.0
        self.prev_partner = pairs_now
        for comp in comps:
            self._replan_component(comp, t)

    def _replan_component(self, comp: list[int], t: float) -> None:
        g = merge_graphs(self.graphs[comp[0]], [self.graphs[k] for k in comp[1:]])
        belief = self.beliefs[comp[0]]
        poses = [self.states[k].pos for k in comp]
        members: list[list[int]]
        labels: dict[int, int]
        labels_before: dict[int, int]
        seeds = _distinct_nearest(g, poses)
        if seeds is None:
            members = [g.node_ids() for _ in comp]
            labels = labels_before = {}
        else:
            centers = seeds
            sub_w = self.W[np.ix_(comp, comp)] if self.variant.weights else np.zeros((len(comp), len(comp)))
            if self.variant.virtual_centers and len(comp) > 1:
                # Re-select from the partitions of the previous centers when
                # they survive; robots without one start from their own node.
                prev = [self.centers.get(r) for r in comp]
                if all(c is not None and c in g for c in prev) and len(set(prev)) == len(prev):
                    seeds = prev
                pre = graph_voronoi(g, PowerPointSet([(k, c) for k, c in enumerate(seeds)], sub_w),
                                    LoadMetric.ONLINE)
                virt = []
                for k, part in enumerate(pre.partition):
                    others = [c for j, c in enumerate(seeds) if j != k]
                    cand = _exploring(g, part) or part
                    virt.append(virtual_center(g, cand, others, poses[k]) if cand else seeds[k])
                if len(set(virt)) == len(virt):
                    centers = virt
            for k, r in enumerate(comp):
                self.centers[r] = centers[k]
            pp = PowerPointSet([(k, c) for k, c in enumerate(centers)], sub_w)
            bias = [self.p.gamma_d * self.d_t[k] for k in comp] if self.variant.feedback else None
            local = {r: k for k, r in enumerate(comp)}
            sub_comm = {local[r]: [local[q] for q in self.comm.get(r, ()) if q in local] for r in comp}
            out = balance(g, pp, self.p.balance_config(), LoadMetric.ONLINE, sub_comm, bias,
                          update_weights=self.variant.weights)
            for it, (hi, lo, gap) in enumerate(out.load_trace):
                self.balance_trace.append((t, it, hi, lo, gap))
            if self.variant.weights:
                self.W[np.ix_(comp, comp)] = out.final_weights.weights
                self.max_w = max(self.max_w, float(np.abs(out.final_weights.weights).max(initial=0.0)))
            res = out.final_partition
            members = res.partition
            labels = res.label
            labels_before = out.initial_partition.label if out.initial_partition else labels
            self.events.append({"t": t, "type": "balance", "robots": comp, "converged": out.converged,
                                "iterations": out.iterations, "loads": [round(x, 6) for x in out.loads[-1]],
                                "centers": centers})
            if not out.converged and self.variant.weights:
                g = insert_dual_nodes(g, res, self.p.balance_config(), belief.is_free, self.seed)
            for v in res.label:
                self.labels[v] = comp[res.label[v]]

        any_targets = bool(target_nodes(g))
        for k, r in enumerate(comp):
            self.graphs[r] = g
            blocked = {v for v, until in self.blocked[r].items() if until > self.cycle}
            plan = plan_cycle(
                self.states[r].pos, g, [v for v in members[k] if v in g], self.beliefs[r], self.p.priority(),
                me=k, labels=labels or None, labels_before=labels_before or None, sensor_range=self.sensor,
                safe_distance=self.p.safe_distance, blocked=blocked,
            )
            for v in plan.unreachable:
                self.blocked[r][v] = self.cycle + self.p.blacklist_cycles
            self._check_stall(r, plan.goal)
            self.waypoints[r] = list(plan.waypoints)
            self.d_t[r] = plan.d_t
            self.done[r] = plan.status == "complete"
            feasible = plan.status in ("ok", "fallback", "complete")
            self.trap[r] = 0 if feasible or not any_targets else self.trap[r] + 1
            self.events.append({"t": t, "type": "plan", "robot": r, "status": plan.status, "goal": plan.goal,
                                "d_t": round(plan.d_t, 6), "targets": len(plan.targets)})

    def _check_stall(self, r: int, goal: int | None) -> None:
        """Drop a goal the robot has chased for a while without getting anywhere."""
        hist = self.goal_hist[r]
        hist.append((goal, self.states[r].pos))
        del hist[: -self.p.stall_cycles]
        if goal is None or len(hist) < self.p.stall_cycles or any(h[0] != goal for h in hist):
            return
        (x0, y0), (x1, y1) = hist[0][1], hist[-1][1]
        if math.hypot(x1 - x0, y1 - y0) < 0.2:
            self.blocked[r][goal] = self.cycle + self.p.stall_blacklist_cycles
            hist.clear()
            self.events.append({"t": round(self.clock.t, 6), "type": "stall", "robot": r, "goal": goal})

    def _step(self) -> None:
        t = self.clock.t + self.p.dt
        for i, s in enumerate(self.states):
            new, self.waypoints[i] = step_robot(s, self.waypoints[i], self.p.dt, self.world)
            if new.collided and not s.collided:
                self.collisions += 1
                self.events.append({"t": round(t, 6), "type": "collision", "robot": i, "x": new.x, "y": new.y})
            if new.collided:
                new = RobotState(new.id, new.x, new.y, new.heading, new.v_max, new.omega_max,
                                 new.tour_distance, False)
                self.waypoints[i] = []
            if (new.x, new.y) != (s.x, s.y):
                self.last_move[i] = t
            self.states[i] = new

    # -- main loop ------------------------------------------------------------------

    def run(self) -> EpisodeMetrics:
        reason = "timeout"
        while True:
            t = self.clock.t
            self._sense()
            cov = self.coverage()
            if self.clock.due("replan_period"):
                self.coverage_curve.append((round(t, 6), cov * self.total * self.world.resolution**2))
            if cov >= self.p.coverage_target:
                reason = "coverage"
                break
            if t >= self.p.max_time - 1e-9:
                break
            if self.clock.due("comm_period"):
                self._exchange()
            if self.clock.due("replan_period"):
                self._replan()
                if all(self.done):
                    reason = "complete"
                    break
                if max(self.trap) >= self.p.trap_cycles:
                    reason = "trapped"
                    break
            self._step()
            for s in self.states:
                self.trajectory.append((round(self.clock.t + self.p.dt, 6), s.id, s.x, s.y, s.heading))
            self.clock.tick()
        t = round(self.clock.t, 6)
        cov = self.coverage()
        self.coverage_curve.append((t, cov * self.total * self.world.resolution**2))
        success = cov >= self.p.coverage_target and self.collisions == 0
        self.events.append({"t": t, "type": "end", "reason": reason, "coverage": round(cov, 6)})
        return EpisodeMetrics(
            scenario=self.sc.name, variant=self.variant.value, seed=self.seed, robots=self.n,
            success=success, reason=reason, coverage=cov, exploration_time=t,
            tour_distances=[s.tour_distance for s in self.states],
            robot_times=[round(x, 6) for x in self.last_move],
            collisions=self.collisions, bytes_sent=self.bytes_sent, max_abs_weight=self.max_w,
            coverage_curve=self.coverage_curve, balance_trace=self.balance_trace,
            trajectory=self.trajectory, events=self.events,
            final_graph=self.graphs[0], final_labels=dict(self.labels),
        )


def run_episode(
    scenario: Scenario,
    params: ExploreParams | None = None,
    variant: Variant | str = Variant.FULL,
    seed: int = 0,
    robots: int | None = None,
) -> EpisodeMetrics:
    return Episode(scenario, params, variant, seed, robots).run()


# -- output files ---------------------------------------------------------------------

SUMMARY_COLUMNS = ["robot_id", "tour_distance", "exploration_time", "avg", "max", "min", "std", "max_min"]


def _f(x: float) -> str:
    return f"{x:.4f}"


def write_outputs(m: EpisodeMetrics, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    d = m.tour_distances
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for i, (dist, rt) in enumerate(zip(d, m.robot_times)):
            w.writerow([i, _f(dist), _f(rt), "", "", "", "", ""])
        std = statistics.pstdev(d) if len(d) > 1 else 0.0
        w.writerow(["all", _f(math.fsum(d)), _f(m.exploration_time), _f(statistics.fmean(d)),
                    _f(max(d)), _f(min(d)), _f(std), _f(max(d) - min(d))])
    with open(out / "coverage.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "explored_m2"])
        for t, a in m.coverage_curve:
            w.writerow([_f(t), _f(a)])
    with open(out / "balance.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "iter", "M_lambda", "m_lambda", "D_lambda"])
        for t, it, hi, lo, gap in m.balance_trace:
            w.writerow([_f(t), it, _f(hi), _f(lo), _f(gap)])
    with open(out / "trajectory.txt", "w") as fh:
        fh.write("# t robot x y heading\n")
        for t, r, x, y, h in m.trajectory:
            fh.write(f"{t:.4f} {r} {x:.4f} {y:.4f} {h:.4f}\n")
    with open(out / "graph_final.txt", "w") as fh:
        g = m.final_graph or HybridTopoGraph()
        fh.write(format_snapshot(g, {v: lab for v, lab in m.final_labels.items() if v in g}))
    with open(out / "events.jsonl", "w") as fh:
        for ev in m.events:
            fh.write(json.dumps(ev, sort_keys=True) + "\n")
        meta = {k: getattr(m, k) for k in ("scenario", "variant", "seed", "robots", "success", "reason",
                                           "coverage", "exploration_time", "tour_distances", "robot_times",
                                           "collisions", "bytes_sent", "max_abs_weight")}
        fh.write(json.dumps({"type": "metrics", **meta}, sort_keys=True) + "\n")
