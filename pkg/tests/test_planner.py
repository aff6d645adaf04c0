from __future__ import annotations

import math

import numpy as np
import pytest

from gvexplore.planner import (
    DualLayerCost,
    GridPlanner,
    PriorityParams,
    dual_layer_cost,
    held_karp,
    heuristic_atsp,
    information_gain,
    minmax,
    plan_cycle,
    priority,
    priority_scores,
    self_flags,
    solve_atsp,
    target_nodes,
)
from gvexplore.topo_graph import HybridTopoGraph, NodeKind, make_node_id
from gvexplore.world import FREE, OCCUPIED, OccupancyGrid

from helpers import brute_force_atsp, path_graph


# -- priority -------------------------------------------------------------------------

def test_priority_formula_example():
    assert priority(1.0, 0.5, 1, PriorityParams(beta_c=0.3, beta_s=0.1)) == pytest.approx(0.95)


def test_two_candidates_normalise_to_unit_interval():
    assert minmax([3.0, 7.0], 0.0) == [0.0, 1.0]
    s = priority_scores([10, 30], [2.0, 6.0], [0, 0], PriorityParams())
    assert s == pytest.approx([0.0 - 0.0, 1.0 - 0.3])


def test_degenerate_set_ranks_by_flag():
    s = priority_scores([5, 5, 5], [2.0, 2.0, 2.0], [0, 1, 0], PriorityParams())
    assert s == pytest.approx([1.0, 1.1, 1.0])


def test_params_validation():
    for kw in ({"beta_c": 1.0}, {"beta_s": -0.1}, {"horizon": 0}, {"gamma_d": -1}):
        with pytest.raises(ValueError):
            PriorityParams(**kw)


def test_information_gain_counts_unknown_disc():
    belief = OccupancyGrid.unknown(21, 21, 0.1)
    belief.cells[:, :11] = FREE
    n = information_gain(belief, (1.05, 1.05), 0.5)
    # Oracle: count unknown cell centers inside the disc by hand.
    want = sum(
        1 for r in range(21) for c in range(11, 21)
        if math.hypot((c + 0.5) * 0.1 - 1.05, (r + 0.5) * 0.1 - 1.05) <= 0.5
    )
    assert n == want > 0


def test_self_flags_margin_and_stability():
    g = path_graph(7)
    after = {v: 0 if v <= 3 else 1 for v in range(7)}
    before = dict(after)
    before[0] = 1
    flags = self_flags(g, [0, 1, 2, 3], 0, before, after)
    assert flags == {0: 0, 1: 1, 2: 0, 3: 0}


# -- dual-layer cost ---------------------------------------------------------------------

def _room(h=40, w=40):
    return OccupancyGrid(np.zeros((h, w), dtype=np.int8), 0.1)


def test_cost_in_open_space_is_euclidean():
    belief = _room()
    g = HybridTopoGraph()
    g.add_node(1, NodeKind.GV, (2.05, 2.05))
    g.add_node(2, NodeKind.FRONTIER, (2.55, 2.05))
    g.add_edge(1, 2)
    c = dual_layer_cost((2.05, 2.05), 2, g, belief)
    assert c == pytest.approx(0.5, abs=0.1)


def _two_rooms():
    # Wall at x in [2.0, 2.1) with a door at y in [3.0, 3.6).
    belief = OccupancyGrid(np.zeros((60, 40), dtype=np.int8), 0.1)
    belief.cells[:, 20] = OCCUPIED
    belief.cells[30:36, 20] = FREE
    return belief


def test_cost_through_a_door():
    belief = _two_rooms()
    g = HybridTopoGraph()
    t = make_node_id(0, 0)
    g.add_node(1, NodeKind.GV, (1.0, 1.0))
    g.add_node(t, NodeKind.FRONTIER, (3.0, 1.0))  # no graph route: grid search only
    pose = (1.0, 1.0)
    c = dual_layer_cost(pose, t, g, belief, safe_distance=0.2)
    # Any-angle oracle: straight legs to the nearest door corner and on.
    corner = (2.05, 3.0)
    ideal = math.dist(pose, corner) + math.dist(corner, (3.0, 1.0))
    assert c > math.dist(pose, (3.0, 1.0))
    assert ideal - 0.15 <= c <= ideal * 1.15


def test_cost_without_graph_route_equals_grid_search():
    belief = _room()
    g = HybridTopoGraph()
    g.add_node(5, NodeKind.FRONTIER, (3.05, 0.55))
    grid = GridPlanner(belief)
    found = grid.astar((0.55, 0.55), (3.05, 0.55))
    assert found is not None
    c = DualLayerCost(grid, g, (0.55, 0.55))(5)
    assert c == pytest.approx(grid.route_length((0.55, 0.55), found[1]))
    assert c == pytest.approx(2.5, abs=0.1)


def test_shortcut_rejects_clipping_a_wall_corner():
    belief = _room()
    belief.cells[20:, :11] = OCCUPIED
    grid = GridPlanner(belief)
    # Crosses row 20 at column 10.95, inside the corner cell for 0.05 cells.
    assert not grid._clear((19.9, 10.55), (22.9, 22.55), 0.0)
    assert grid._clear((19.9, 11.05), (22.9, 23.05), 0.0)
    r, c = grid._line_cells((5.0, 5.0), (8.0, 8.0))
    assert {(5, 6), (6, 5), (6, 7), (7, 6)} <= set(zip(r.tolist(), c.tolist()))


def test_unreachable_target_is_infinite():
    belief = _room()
    belief.cells[:, 20] = OCCUPIED
    g = HybridTopoGraph()
    g.add_node(5, NodeKind.FRONTIER, (3.05, 2.05))
    assert math.isinf(dual_layer_cost((0.55, 0.55), 5, g, belief))


def test_cost_never_below_straight_line():
    belief = _room()
    g = path_graph(4)  # nodes at (i, 0) ... keep inside the room
    g2 = HybridTopoGraph()
    for n in g.nodes():
        g2.add_node(n.id, n.kind, (n.pos[0] + 0.55, 1.05))
    for e in g.edges():
        g2.add_edge(e.u, e.v, 0.2)  # graph lengths shorter than the geometry
    c = DualLayerCost(GridPlanner(belief), g2, (0.55, 1.05))
    for v in g2.node_ids():
        assert c(v) >= math.dist((0.55, 1.05), g2.node(v).pos) - 1e-9


# -- ATSP ------------------------------------------------------------------------------

def test_atsp_trivial_cases():
    assert solve_atsp(np.zeros((1, 1))) == ([], 0.0)
    order, d = solve_atsp([[0, 4.0], [1.0, 0]])
    assert order == [1] and d == 4.0


def test_exact_beats_greedy():
    # Greedy goes to 1 first (cost 1) and then pays 10 for 1->2 or 2->3.
    cost = np.array([
        [0, 1, 2, 3],
        [9, 0, 10, 10],
        [9, 10, 0, 1],
        [9, 1, 10, 0],
    ], dtype=float)
    order, d = solve_atsp(cost)
    ref_order, ref = brute_force_atsp(cost)
    assert d == ref and order == ref_order
    assert d < 1 + 10 + 1


@pytest.mark.parametrize("n", range(1, 8))
def test_held_karp_matches_brute_force(n):
    rng = np.random.default_rng(n)
    for _ in range(5):
        cost = rng.uniform(0.5, 10.0, (n + 1, n + 1))
        np.fill_diagonal(cost, 0.0)
        order, d = held_karp(cost)
        _, ref = brute_force_atsp(cost)
        assert d == pytest.approx(ref, abs=1e-9)
        assert sorted(order) == list(range(1, n + 1))


@pytest.mark.parametrize("n", range(2, 9))
def test_heuristic_within_five_percent(n):
    rng = np.random.default_rng(100 + n)
    for _ in range(10):
        cost = rng.uniform(0.5, 10.0, (n + 1, n + 1))
        np.fill_diagonal(cost, 0.0)
        order, d = heuristic_atsp(cost)
        assert sorted(order) == list(range(1, n + 1))
        assert d <= 1.05 * held_karp(cost)[1] + 1e-9


def test_symmetric_instance_reversal():
    pts = np.array([[0, 0], [1, 0], [2, 1], [3, 0], [4, 1]], dtype=float)
    cost = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    order, d = solve_atsp(cost)
    _, ref = brute_force_atsp(cost)
    assert d == pytest.approx(ref)
    # The same stops walked backwards only differ by the leg from the start.
    rev = order[::-1]
    back = cost[0, rev[0]] + sum(cost[a, b] for a, b in zip(rev, rev[1:]))
    assert back - cost[0, rev[0]] == pytest.approx(d - cost[0, order[0]])


def test_large_instance_uses_heuristic():
    rng = np.random.default_rng(9)
    cost = rng.uniform(1, 5, (16, 16))
    np.fill_diagonal(cost, 0)
    order, d = solve_atsp(cost)
    assert sorted(order) == list(range(1, 16))
    assert d == pytest.approx(cost[0, order[0]] + sum(cost[a, b] for a, b in zip(order, order[1:])))


def test_atsp_rejects_bad_input():
    with pytest.raises(ValueError):
        solve_atsp(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        solve_atsp([[0, math.inf], [1, 0]])


# -- plan cycle -----------------------------------------------------------------------------

def _fan(n_targets: int):
    """Known room with a hub and ``n_targets`` frontier spokes; unknown band on top."""
    belief = OccupancyGrid(np.zeros((50, 50), dtype=np.int8), 0.1)
    belief.cells[45:, :] = -1
    g = HybridTopoGraph()
    g.add_node(0, NodeKind.GV, (2.5, 2.0))
    ids = []
    for k in range(n_targets):
        a = math.pi * (k + 0.5) / n_targets
        nid = make_node_id(0, k)
        g.add_node(nid, NodeKind.FRONTIER, (2.5 + 1.5 * math.cos(a), 2.0 + 1.5 * math.sin(a) + 0.5 * (k % 2)))
        g.add_edge(0, nid)
        ids.append(nid)
    return belief, g, ids


def test_horizon_limits_atsp_size():
    belief, g, ids = _fan(8)
    res = plan_cycle((2.5, 2.0), g, g.node_ids(), belief, PriorityParams(horizon=5))
    assert res.status == "ok"
    assert sorted(res.targets) == sorted(ids)
    assert len(res.tour) == 5 and set(res.tour) <= set(ids)
    assert res.goal == res.tour[0] and res.waypoints
    # The five entering the tour are the top five by priority.
    pose = (2.5, 2.0)
    costs = DualLayerCost(GridPlanner(belief), g, pose)
    gains = [information_gain(belief, g.node(v).pos, 3.0) for v in ids]
    scores = priority_scores(gains, [costs(v) for v in ids], [res.self_flags.get(v, 0) for v in ids],
                             PriorityParams())
    top = sorted(range(8), key=lambda k: (-scores[k], ids[k]))[:5]
    assert set(res.tour) == {ids[k] for k in top}


def test_single_target_plan():
    belief, g, ids = _fan(1)
    res = plan_cycle((2.5, 2.0), g, g.node_ids(), belief, PriorityParams())
    assert res.tour == ids and res.status == "ok"
    end = res.waypoints[-1]
    assert math.dist(end, g.node(ids[0]).pos) <= 0.3 + 0.1
    assert res.d_t == pytest.approx(DualLayerCost(GridPlanner(belief), g, (2.5, 2.0))(ids[0]))


def test_plan_is_deterministic():
    belief, g, _ = _fan(8)
    a = plan_cycle((2.5, 2.0), g, g.node_ids(), belief, PriorityParams())
    b = plan_cycle((2.5, 2.0), g, g.node_ids(), belief, PriorityParams())
    assert a == b


def test_no_targets_anywhere_is_complete():
    belief = _room()
    g = path_graph(3)
    res = plan_cycle((0.05, 0.05), g, [0, 1, 2], belief, PriorityParams())
    assert res.status == "complete" and res.waypoints == []


def test_idle_robot_falls_back_toward_neighbour_targets():
    # Corridor of GV nodes; robot 0 owns the left half which has no targets,
    # robot 1 owns the right half ending in a frontier.
    belief = OccupancyGrid(np.zeros((20, 100), dtype=np.int8), 0.1)
    belief.cells[:, 95:] = -1
    g = HybridTopoGraph()
    for k in range(9):
        g.add_node(k, NodeKind.GV, (0.5 + k, 1.0))
        if k:
            g.add_edge(k - 1, k)
    f = make_node_id(1, 0)
    g.add_node(f, NodeKind.FRONTIER, (9.3, 1.0))
    g.add_edge(8, f)
    mine = [0, 1, 2, 3]
    labels = {v: (0 if v in mine else 1) for v in g.node_ids()}
    res = plan_cycle((0.5, 1.0), g, mine, belief, PriorityParams(), me=0, labels=labels)
    assert res.status == "fallback"
    assert res.goal not in mine and res.waypoints
    # Stops at the first node past the boundary, not at the far frontier.
    assert res.goal == 4
    assert res.d_t > 0
    assert target_nodes(g, mine) == []
