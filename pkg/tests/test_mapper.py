from __future__ import annotations

import math

import numpy as np
import pytest

from gvexplore.mapper import (
    DistanceField,
    MapperParams,
    TopoMapper,
    build_gv_graph,
    detect_frontiers,
    frontier_mask,
    full_distance_field,
    gv_cells,
    open_unknown,
    sample_coverage,
    segment_not_blocked,
    update_frontiers,
    update_gvd,
)
from gvexplore.topo_graph import HybridTopoGraph, NodeKind
from gvexplore.world import FREE, OCCUPIED, UNKNOWN, OccupancyGrid, load_scenario, sense


def boxed(h: int, w: int, res: float = 0.1) -> OccupancyGrid:
    cells = np.zeros((h, w), dtype=np.int8)
    cells[0, :] = cells[-1, :] = cells[:, 0] = cells[:, -1] = OCCUPIED
    return OccupancyGrid(cells, res)


def test_corridor_ridge_runs_down_the_middle():
    # 4 m wide, 10 m long; walls are the outer cell ring.
    belief = boxed(100, 40)
    params = MapperParams(d_hat=2.5)
    field = full_distance_field(belief, params.d_hat)
    ridge = gv_cells(belief, field)
    rows, cols = np.nonzero(ridge[25:75])
    assert rows.size > 0
    xs = (cols + 0.5) * 0.1
    assert np.all(np.abs(xs - 2.0) <= 0.1 + 1e-9)
    assert set(rows) == set(range(50))  # unbroken along the straight part
    g = build_gv_graph(belief, ridge, params)
    mid = [n for n in g.nodes() if 2.5 <= n.pos[1] <= 7.5]
    assert mid and all(abs(n.pos[0] - 2.0) <= 0.1 + 1e-9 for n in mid)
    assert len(g.components()) == 1
    for n in g.nodes():
        r, c = belief.world_to_cell(*n.pos)
        assert n.id == r * belief.width + c and n.kind is NodeKind.GV
    for e in g.edges():
        assert e.length <= params.node_spacing * 1.5 + 1e-9


def test_single_obstacle_gives_no_ridge():
    belief = OccupancyGrid(np.zeros((40, 40), dtype=np.int8), 0.1)
    belief.cells[20, 20] = OCCUPIED
    ridge = gv_cells(belief, full_distance_field(belief, 2.0))
    assert not ridge.any()
    assert build_gv_graph(belief, ridge, MapperParams()).node_ids() == []


def test_distance_field_matches_brute_force():
    rng = np.random.default_rng(7)
    cells = np.where(rng.random((25, 30)) < 0.05, OCCUPIED, FREE).astype(np.int8)
    f = full_distance_field(OccupancyGrid(cells, 0.1), 1.0)
    occ = np.argwhere(cells == OCCUPIED)
    for r in range(25):
        for c in range(30):
            d2 = ((occ - (r, c)) ** 2).sum(axis=1)
            best = d2.min()
            if best <= f.radius ** 2:
                assert f.dist2[r, c] == best
                oy, ox = divmod(int(f.obst[r, c]), 30)
                assert (oy - r) ** 2 + (ox - c) ** 2 == best
            else:
                assert f.obst[r, c] == -1


def _exploration_steps(name="maze", steps=12):
    sc = load_scenario(name)
    world = sc.world
    belief = OccupancyGrid.unknown(*world.cells.shape, world.resolution)
    x, y, _ = sc.starts[0]
    free = np.argwhere(sc.reachable_free())
    rng = np.random.default_rng(0)
    poses = [(x, y)] + [world.cell_center(*free[int(rng.integers(len(free)))]) for _ in range(steps - 1)]
    for p in poses:
        yield belief, sense(world, belief, p, 3.0), p


def test_incremental_field_and_frontiers_match_batch():
    params = MapperParams()
    field = None
    fis = []
    for belief, changed, _ in _exploration_steps():
        if field is None:
            field = DistanceField.empty(belief.cells.shape, belief.resolution, params.d_hat)
            field, ridge = update_gvd(belief, field, None)
            fis = update_frontiers(belief, None, fis)
        else:
            field, ridge = update_gvd(belief, field, changed)
            fis = update_frontiers(belief, changed, fis)
        full = full_distance_field(belief, params.d_hat)
        assert np.array_equal(field.dist2, full.dist2)
        assert np.array_equal(field.obst, full.obst)
        assert np.array_equal(ridge, gv_cells(belief, full))
        assert fis == detect_frontiers(belief)


def test_frontier_clusters_partition_the_mask():
    for belief, _, _ in _exploration_steps(steps=4):
        pass
    fm = frontier_mask(belief)
    clusters = detect_frontiers(belief, 2.0)
    cells = [c for cl in clusters for c in cl.cells]
    assert len(cells) == len(set(cells)) == int(fm.sum())
    for cl in clusters:
        x0, y0, x1, y1 = cl.bbox
        assert max(x1 - x0, y1 - y0) <= 2.0 + 1e-9
        assert belief.is_free(*cl.viewpoint)


def test_frontier_mask_example():
    belief = OccupancyGrid.from_ascii(["...", "..."], 0.1)
    belief.cells[0, 2] = UNKNOWN
    assert frontier_mask(belief).tolist() == [[False, True, False], [False, False, True]]


def test_open_unknown_excludes_sealed_pockets():
    belief = OccupancyGrid.from_ascii(["#####", "#...#", "#####"], 0.1)
    belief.cells[1, 1] = UNKNOWN  # next to free space
    belief.cells[0, 2] = UNKNOWN  # only touches walls and free cell below
    sealed = OccupancyGrid.from_ascii(["###", "#.#", "###"], 0.1)
    sealed.cells[1, 1] = UNKNOWN
    assert open_unknown(belief)[1, 1] and open_unknown(belief)[0, 2]
    assert not open_unknown(sealed).any()


def _half_known_room():
    belief = OccupancyGrid.unknown(60, 60, 0.1)
    belief.cells[:, :30] = FREE
    g = HybridTopoGraph()
    g.add_node(1, NodeKind.GV, (1.0, 3.0))
    g.add_node(2, NodeKind.GV, (2.5, 3.0))
    g.add_edge(1, 2)
    return belief, g


def test_coverage_samples_respect_spacing_and_range():
    belief, g = _half_known_room()
    params = MapperParams(max_new_samples=10, sample_attempts=200)
    pos = (2.9, 3.0)
    out = sample_coverage(belief, pos, np.random.default_rng(3), g, params=params)
    assert out
    for s in out:
        assert belief.value_at(*s.pos) == UNKNOWN
        assert math.dist(s.pos, pos) <= params.d_c + 1e-9
        assert s.anchor in (1, 2)
        assert segment_not_blocked(belief, s.pos, g.node(s.anchor).pos)
    for a in out:
        for b in out:
            if a is not b:
                assert math.dist(a.pos, b.pos) >= params.sample_spacing
    again = sample_coverage(belief, pos, np.random.default_rng(3), g, params=params)
    assert again == out


def test_coverage_samples_keep_away_from_existing():
    belief, g = _half_known_room()
    taken = [(3.5, 3.0)]
    out = sample_coverage(belief, (2.9, 3.0), np.random.default_rng(0), g, taken,
                          MapperParams(max_new_samples=10, sample_attempts=200))
    assert all(math.dist(s.pos, taken[0]) >= 1.0 for s in out)


def test_topo_mapper_builds_a_valid_graph():
    mapper = None
    g = HybridTopoGraph()
    for belief, changed, pos in _exploration_steps(steps=6):
        if mapper is None:
            mapper = TopoMapper(0, belief, MapperParams(), seed=1)
        else:
            mapper.note_changes(changed)
        g = mapper.update(belief, g, pos)
        g.validate()
        for n in g.nodes():
            assert belief.is_free(*n.pos) or n.kind is NodeKind.COVERAGE
    kinds = {n.kind for n in g.nodes()}
    assert NodeKind.GV in kinds and NodeKind.FRONTIER in kinds


def test_topo_mapper_is_deterministic():
    def run():
        mapper = None
        g = HybridTopoGraph()
        for belief, changed, pos in _exploration_steps(steps=5):
            if mapper is None:
                mapper = TopoMapper(0, belief, MapperParams(), seed=4)
            else:
                mapper.note_changes(changed)
            g = mapper.update(belief, g, pos)
        return g

    assert run() == run()
