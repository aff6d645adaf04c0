"""Incremental hybrid topological map from a belief grid.

GV nodes come from a nearest-obstacle distance field: a free cell is a ridge
cell when it and a 4-neighbour are closest to obstacle cells that are not
adjacent to each other. Ridges are thinned, traced and sparsified into
nodes. Frontier clusters and coverage samples add the uncertain layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage
from skimage.morphology import skeletonize

from .topo_graph import (
    Certainty,
    HybridTopoGraph,
    NodeKind,
    TopoNode,
    is_dual,
    make_node_id,
)
from .world import FREE, OCCUPIED, UNKNOWN, OccupancyGrid

EIGHT = np.ones((3, 3), dtype=bool)
_NO_OBST = np.iinfo(np.int32).max


@dataclass
class MapperParams:
    d_hat: float = 2.0
    node_spacing: float = 1.0
    spur_length: float = 1.0
    cluster_max_size: float = 2.0
    min_cluster_cells: int = 3
    d_c: float = 5.0
    sample_spacing: float = 1.0
    sample_attempts: int = 30
    max_new_samples: int = 4
    link_radius: float = 3.0
    sensor_range: float = 3.0


# -- distance field -------------------------------------------------------------

def _offsets(radius: int) -> list[tuple[int, int, int]]:
    out = []
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            d2 = dy * dy + dx * dx
            if d2 <= radius * radius:
                out.append((d2, dy, dx))
    out.sort()
    return out


@dataclass
class DistanceField:
    """Nearest known-obstacle squared cell distance and obstacle id per cell.

    Ties between equally distant obstacles go to the smallest (d², dy, dx)
    offset, which makes every cell's value independent of the window it was
    computed in. Cells with no obstacle within ``radius`` cells hold
    ``_NO_OBST`` and id -1.
    """

    dist2: np.ndarray
    obst: np.ndarray
    resolution: float
    radius: int

    @classmethod
    def empty(cls, shape: tuple[int, int], resolution: float, d_hat: float) -> DistanceField:
        radius = int(math.floor(d_hat / resolution + 1e-9))
        return cls(
            np.full(shape, _NO_OBST, dtype=np.int32),
            np.full(shape, -1, dtype=np.int64),
            resolution,
            radius,
        )

    @property
    def d_hat(self) -> float:
        return self.radius * self.resolution

    def dist(self) -> np.ndarray:
        """Metric distance, capped at the search range."""
        d = np.sqrt(self.dist2.astype(float)) * self.resolution
        d[self.obst < 0] = self.d_hat
        return d

    def copy(self) -> DistanceField:
        return DistanceField(self.dist2.copy(), self.obst.copy(), self.resolution, self.radius)

    def recompute(self, occupied: np.ndarray, window: tuple[int, int, int, int] | None = None) -> None:
        h, w = occupied.shape
        r0, r1, c0, c1 = window if window is not None else (0, h, 0, w)
        R = self.radius
        pad = np.pad(occupied, R, constant_values=False)
        d2 = np.full((r1 - r0, c1 - c0), _NO_OBST, dtype=np.int32)
        ob = np.full((r1 - r0, c1 - c0), -1, dtype=np.int64)
        open_ = np.ones((r1 - r0, c1 - c0), dtype=bool)
        rows = np.arange(r0, r1)[:, None]
        cols = np.arange(c0, c1)[None, :]
        for k, (dd, dy, dx) in enumerate(_offsets(R)):
            hit = pad[r0 + R + dy : r1 + R + dy, c0 + R + dx : c1 + R + dx] & open_
            if hit.any():
                d2[hit] = dd
                ob[hit] = ((rows + dy) * w + (cols + dx))[hit]
                open_ &= ~hit
                if k % 16 == 0 and not open_.any():
                    break
        self.dist2[r0:r1, c0:c1] = d2
        self.obst[r0:r1, c0:c1] = ob


def full_distance_field(belief: OccupancyGrid, d_hat: float) -> DistanceField:
    f = DistanceField.empty(belief.cells.shape, belief.resolution, d_hat)
    f.recompute(belief.cells == OCCUPIED)
    return f


def gv_cells(belief: OccupancyGrid, field: DistanceField) -> np.ndarray:
    """Ridge mask: free cells where two non-adjacent nearest obstacles meet.

    Of each qualifying 4-neighbour pair only the cell whose distances to the
    two obstacles are closer to equal is marked.
    """
    h, w = belief.cells.shape
    free = belief.cells == FREE
    ok = free & (field.obst >= 0) & (field.dist2 > 0) & (field.dist2 < field.radius**2)
    oy, ox = np.divmod(np.where(field.obst >= 0, field.obst, 0), w)
    rr, cc = np.mgrid[0:h, 0:w]
    d = np.sqrt(field.dist2.astype(float))
    mark = np.zeros((h, w), dtype=bool)
    for dy, dx in ((0, 1), (1, 0)):
        a = (slice(0, h - dy), slice(0, w - dx))
        b = (slice(dy, h), slice(dx, w))
        both = ok[a] & ok[b]
        distinct = np.maximum(np.abs(oy[a] - oy[b]), np.abs(ox[a] - ox[b])) > 1
        pair = both & distinct
        if not pair.any():
            continue
        fa = np.abs(np.hypot(rr[a] - oy[b], cc[a] - ox[b]) - d[a])
        fb = np.abs(np.hypot(rr[b] - oy[a], cc[b] - ox[a]) - d[b])
        mark[a] |= pair & (fa <= fb)
        mark[b] |= pair & (fb < fa)
    return mark


def update_gvd(
    belief: OccupancyGrid,
    field: DistanceField,
    changed: np.ndarray | None,
) -> tuple[DistanceField, np.ndarray]:
    """Refresh the distance field for newly known cells; return (field, ridge mask).

    Only cells within the search radius of a newly occupied cell can change,
    so the recompute window is the bounding box of those cells dilated by it.
    ``changed=None`` forces a full recompute.
    """
    occ = belief.cells == OCCUPIED
    if changed is None:
        field.recompute(occ)
    else:
        new_occ = changed & occ
        if new_occ.any():
            R = field.radius
            rows = np.nonzero(new_occ.any(axis=1))[0]
            cols = np.nonzero(new_occ.any(axis=0))[0]
            h, w = occ.shape
            window = (
                max(0, rows[0] - R),
                min(h, rows[-1] + R + 1),
                max(0, cols[0] - R),
                min(w, cols[-1] + R + 1),
            )
            field.recompute(occ, window)
    return field, gv_cells(belief, field)


# -- geometry helpers --------------------------------------------------------------

def segment_cells(belief: OccupancyGrid, p: Sequence[float], q: Sequence[float]) -> np.ndarray:
    """Belief values sampled every quarter cell along p→q (endpoints included)."""
    res = belief.resolution
    n = max(1, int(math.ceil(math.hypot(q[0] - p[0], q[1] - p[1]) / (res / 4.0))))
    t = np.linspace(0.0, 1.0, n + 1)
    xs = p[0] + t * (q[0] - p[0])
    ys = p[1] + t * (q[1] - p[1])
    r = np.floor(ys / res).astype(np.int64)
    c = np.floor(xs / res).astype(np.int64)
    inb = (r >= 0) & (r < belief.height) & (c >= 0) & (c < belief.width)
    vals = np.full(t.shape, OCCUPIED, dtype=np.int8)
    vals[inb] = belief.cells[r[inb], c[inb]]
    return vals


def segment_known_free(belief: OccupancyGrid, p: Sequence[float], q: Sequence[float]) -> bool:
    return bool(np.all(segment_cells(belief, p, q) == FREE))


def segment_not_blocked(belief: OccupancyGrid, p: Sequence[float], q: Sequence[float]) -> bool:
    return not bool(np.any(segment_cells(belief, p, q) == OCCUPIED))


# -- GV node extraction --------------------------------------------------------------

@dataclass
class GraphDelta:
    add_nodes: list[TopoNode] = field(default_factory=list)
    remove_nodes: list[int] = field(default_factory=list)
    add_edges: list[tuple[int, int]] = field(default_factory=list)
    remove_edges: list[tuple[int, int]] = field(default_factory=list)

    def is_empty(self) -> bool:
        return not (self.add_nodes or self.remove_nodes or self.add_edges or self.remove_edges)


def apply_delta(g: HybridTopoGraph, delta: GraphDelta) -> None:
    for u, v in delta.remove_edges:
        if g.has_edge(u, v):
            g.remove_edge(u, v)
    for nid in delta.remove_nodes:
        if nid in g:
            g.remove_node(nid)
    for n in delta.add_nodes:
        g.add_node(n.id, n.kind, n.pos)
    for u, v in delta.add_edges:
        g.add_edge(u, v)


_NBR8 = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def _pixel_neighbors(pix: set[tuple[int, int]], p: tuple[int, int]) -> list[tuple[int, int]]:
    return [(p[0] + dy, p[1] + dx) for dy, dx in _NBR8 if (p[0] + dy, p[1] + dx) in pix]


def _step_len(a: tuple[int, int], b: tuple[int, int]) -> float:
    return math.sqrt(2.0) if a[0] != b[0] and a[1] != b[1] else 1.0


def _prune_spurs(pix: set[tuple[int, int]], max_len: float) -> set[tuple[int, int]]:
    """Remove endpoint branches shorter than ``max_len`` cells (one pass)."""
    pix = set(pix)
    deg = {p: len(_pixel_neighbors(pix, p)) for p in pix}
    doomed: set[tuple[int, int]] = set()
    for p in sorted(pix):
        if deg[p] != 1:
            continue
        walk = [p]
        length = 0.0
        prev, cur = None, p
        while True:
            nxt = [q for q in _pixel_neighbors(pix, cur) if q != prev and q not in walk]
            if len(nxt) != 1:
                break
            if deg[nxt[0]] >= 3:
                length += _step_len(cur, nxt[0])
                if length < max_len:
                    doomed.update(walk)
                break
            length += _step_len(cur, nxt[0])
            if length >= max_len:
                break
            prev, cur = cur, nxt[0]
            walk.append(cur)
    return pix - doomed


def _trace_ridges(
    pix: set[tuple[int, int]],
) -> tuple[list[list[tuple[int, int]]], set[tuple[int, int]]]:
    """Split a skeleton into pixel chains between key pixels.

    Key pixels are endpoints and junctions; touching junction pixels are
    merged into one representative (the pixel nearest their mean). Returns
    the chains and the set of junction representatives.
    """
    deg = {p: len(_pixel_neighbors(pix, p)) for p in pix}
    rep: dict[tuple[int, int], tuple[int, int]] = {}
    junction = sorted(p for p in pix if deg[p] >= 3)
    jset = set(junction)
    for p in junction:
        if p in rep:
            continue
        comp, stack = [p], [p]
        rep[p] = p
        while stack:
            u = stack.pop()
            for q in _pixel_neighbors(pix, u):
                if q in jset and q not in rep:
                    rep[q] = p
                    comp.append(q)
                    stack.append(q)
        my = sum(q[0] for q in comp) / len(comp)
        mx = sum(q[1] for q in comp) / len(comp)
        best = min(comp, key=lambda q: ((q[0] - my) ** 2 + (q[1] - mx) ** 2, q))
        for q in comp:
            rep[q] = best
    junction_reps = set(rep.values())
    for p in pix:
        if deg[p] <= 1:
            rep[p] = p

    chains: list[list[tuple[int, int]]] = []
    seen_pairs: set[frozenset] = set()
    visited: set[tuple[int, int]] = set()

    def walk(start: tuple[int, int], first: tuple[int, int]) -> None:
        chain = [rep[start]]
        prev, cur = start, first
        while True:
            visited.add(cur)
            chain.append(cur)
            nxt = [q for q in _pixel_neighbors(pix, cur) if q != prev and q not in visited]
            keys = [q for q in _pixel_neighbors(pix, cur) if q != prev and q in rep]
            if keys:
                chain.append(rep[min(keys)])
                break
            if not nxt:
                break
            prev, cur = cur, min(nxt)
        if len(chain) >= 2 and not (chain[0] == chain[-1] and len(chain) <= 3):
            chains.append(chain)

    for p in sorted(rep):
        for q in _pixel_neighbors(pix, p):
            if q in rep:
                pair = frozenset((rep[p], rep[q]))
                if rep[q] != rep[p] and pair not in seen_pairs:
                    seen_pairs.add(pair)
                    chains.append([rep[p], rep[q]])
            elif q not in visited:
                walk(p, q)
    # Closed loops without any key pixel.
    for p in sorted(pix):
        if p in rep or p in visited:
            continue
        rep[p] = p
        visited.add(p)
        nb = [q for q in _pixel_neighbors(pix, p) if q not in visited]
        if nb:
            walk(p, min(nb))
    return chains, junction_reps


def _chain_nodes(chain: list[tuple[int, int]], spacing_cells: float, anchor_first: bool) -> list[int]:
    """Indices into ``chain`` that become nodes: both ends plus every spacing."""
    if len(chain) <= 2:
        return list(range(len(chain)))
    seq = chain if anchor_first else chain[::-1]
    arc = [0.0]
    for a, b in zip(seq, seq[1:]):
        arc.append(arc[-1] + _step_len(a, b))
    total = arc[-1]
    picks = [0]
    k = 1
    while total - k * spacing_cells >= 0.5 * spacing_cells:
        target = k * spacing_cells
        i = min(range(len(arc)), key=lambda j: (abs(arc[j] - target), j))
        if i > picks[-1] and i < len(seq) - 1:
            picks.append(i)
        k += 1
    picks.append(len(seq) - 1)
    if not anchor_first:
        picks = sorted(len(seq) - 1 - i for i in picks)
    return picks


def build_gv_graph(belief: OccupancyGrid, ridge: np.ndarray, params: MapperParams) -> HybridTopoGraph:
    """Thin ridge cells and turn them into GV nodes with deterministic edges."""
    res = belief.resolution
    w = belief.width
    thin = skeletonize(ridge) if ridge.any() else ridge
    pix = {(int(r), int(c)) for r, c in zip(*np.nonzero(thin))}
    pix = _prune_spurs(pix, params.spur_length / res)
    # Drop fragments shorter than a spur.
    lab, n = ndimage.label(_mask_from(pix, ridge.shape), structure=EIGHT)
    if n:
        sizes = ndimage.sum_labels(np.ones_like(lab), lab, index=np.arange(1, n + 1))
        small = {i + 1 for i, s in enumerate(sizes) if s * res < params.spur_length}
        pix = {p for p in pix if int(lab[p]) not in small}

    g = HybridTopoGraph()
    if not pix:
        return g
    chains, junctions = _trace_ridges(pix)
    spacing = params.node_spacing / res

    def nid(p: tuple[int, int]) -> int:
        return p[0] * w + p[1]

    def ensure(p: tuple[int, int]) -> int:
        i = nid(p)
        if i not in g:
            g.add_node(i, NodeKind.GV, belief.cell_center(*p))
        return i

    def link(chain: list[tuple[int, int]], i: int, j: int) -> None:
        a, b = ensure(chain[i]), ensure(chain[j])
        if a == b or g.has_edge(a, b):
            return
        pa, pb = g.node(a).pos, g.node(b).pos
        if j - i > 1 and not segment_known_free(belief, pa, pb):
            m = (i + j) // 2
            link(chain, i, m)
            link(chain, m, j)
            return
        g.add_edge(a, b)

    for chain in chains:
        if len(chain) < 2:
            continue
        s, e = chain[0], chain[-1]
        anchor_first = (s in junctions, -nid(s)) >= (e in junctions, -nid(e))
        picks = _chain_nodes(chain, spacing, anchor_first)
        for i, j in zip(picks, picks[1:]):
            link(chain, i, j)
    return g


def _mask_from(pix: Iterable[tuple[int, int]], shape: tuple[int, int]) -> np.ndarray:
    m = np.zeros(shape, dtype=bool)
    for p in pix:
        m[p] = True
    return m


def gv_delta(new_gv: HybridTopoGraph, existing: HybridTopoGraph) -> GraphDelta:
    old_nodes = {n.id: n for n in existing.nodes() if n.kind is NodeKind.GV}
    new_nodes = {n.id: n for n in new_gv.nodes()}
    old_edges = {e.key for e in existing.edges() if e.certainty is Certainty.DETERMINISTIC}
    new_edges = {e.key for e in new_gv.edges()}
    return GraphDelta(
        add_nodes=[new_nodes[i] for i in sorted(set(new_nodes) - set(old_nodes))],
        remove_nodes=sorted(set(old_nodes) - set(new_nodes)),
        add_edges=sorted(new_edges - old_edges),
        remove_edges=sorted(old_edges - new_edges),
    )


def extract_gv_nodes(
    belief: OccupancyGrid,
    ridge: np.ndarray,
    existing: HybridTopoGraph,
    params: MapperParams | None = None,
) -> GraphDelta:
    return gv_delta(build_gv_graph(belief, ridge, params or MapperParams()), existing)


# -- frontiers ------------------------------------------------------------------------

@dataclass(frozen=True)
class FrontierCluster:
    cells: tuple[int, ...]
    centroid: tuple[float, float]
    viewpoint: tuple[float, float]
    bbox: tuple[float, float, float, float]


def frontier_mask(belief: OccupancyGrid) -> np.ndarray:
    cells = belief.cells
    unk = cells == UNKNOWN
    near = np.zeros_like(unk)
    near[1:, :] |= unk[:-1, :]
    near[:-1, :] |= unk[1:, :]
    near[:, 1:] |= unk[:, :-1]
    near[:, :-1] |= unk[:, 1:]
    return (cells == FREE) & near


def _split(cells: np.ndarray, w: int, max_cells: float) -> list[np.ndarray]:
    r, c = np.divmod(cells, w)
    span_r = r.max() - r.min() + 1
    span_c = c.max() - c.min() + 1
    if max(span_r, span_c) <= max_cells:
        return [np.sort(cells)]
    coord = r if span_r >= span_c else c
    cut = coord.mean()
    left = coord <= cut
    if left.all() or not left.any():
        left = coord <= np.median(coord)
        if left.all():
            left = coord < coord.max()
    return _split(cells[left], w, max_cells) + _split(cells[~left], w, max_cells)


def _make_cluster(belief: OccupancyGrid, cells: np.ndarray) -> FrontierCluster:
    w = belief.width
    res = belief.resolution
    r, c = np.divmod(cells, w)
    cy = (r.mean() + 0.5) * res
    cx = (c.mean() + 0.5) * res
    if belief.is_free(cx, cy):
        vp = (float(cx), float(cy))
    else:
        d = (r + 0.5 - cy / res) ** 2 + (c + 0.5 - cx / res) ** 2
        k = int(np.lexsort((cells, d))[0])
        vp = belief.cell_center(int(r[k]), int(c[k]))
    bbox = (
        float(c.min() * res), float(r.min() * res),
        float((c.max() + 1) * res), float((r.max() + 1) * res),
    )
    return FrontierCluster(tuple(int(x) for x in cells), (float(cx), float(cy)), vp, bbox)


def detect_frontiers(belief: OccupancyGrid, cluster_max_size: float = 2.0) -> list[FrontierCluster]:
    """Batch frontier clustering: 8-connected components, split by bbox size."""
    return update_frontiers(belief, None, [], cluster_max_size)


def update_frontiers(
    belief: OccupancyGrid,
    changed: np.ndarray | None,
    fis: Sequence[FrontierCluster],
    cluster_max_size: float = 2.0,
) -> list[FrontierCluster]:
    """Re-detect clusters near changed cells and keep the untouched ones.

    A component of frontier cells that does not touch the one-cell dilation of
    ``changed`` is identical to the previous step's component, so its
    clusters are reused as they were. ``changed=None`` re-detects everything.
    """
    w = belief.width
    fm = frontier_mask(belief)
    lab, n = ndimage.label(fm, structure=EIGHT)
    if n == 0:
        return []
    touched = np.zeros(n + 1, dtype=bool)
    if changed is None:
        touched[:] = True
    else:
        near = ndimage.binary_dilation(changed, structure=EIGHT)
        touched[np.unique(lab[near & fm])] = True
    flat = lab.ravel()
    order = np.argsort(flat, kind="stable")
    bounds = np.searchsorted(flat[order], np.arange(n + 2))
    old_by_first = {}
    for cl in fis:
        old_by_first.setdefault(int(flat[cl.cells[0]]) if flat[cl.cells[0]] else 0, []).append(cl)
    max_cells = cluster_max_size / belief.resolution
    out: list[FrontierCluster] = []
    for k in range(1, n + 1):
        cells = order[bounds[k] : bounds[k + 1]]
        if not touched[k]:
            reuse = old_by_first.get(k, [])
            if sum(len(cl.cells) for cl in reuse) == len(cells) and all(
                np.all(flat[list(cl.cells)] == k) for cl in reuse
            ):
                out.extend(reuse)
                continue
        for part in _split(cells, w, max_cells):
            out.append(_make_cluster(belief, part))
    out.sort(key=lambda cl: cl.cells[0])
    return out


# -- coverage samples ------------------------------------------------------------------

FOUR = ndimage.generate_binary_structure(2, 1)


def open_unknown(belief: OccupancyGrid) -> np.ndarray:
    """Unknown cells whose 4-connected Unknown region borders known free space.

    The rest (e.g. the inside of a thick wall whose faces have been seen) can
    never be observed.
    """
    unk = belief.cells == UNKNOWN
    lab, n = ndimage.label(unk, structure=FOUR)
    if n == 0:
        return unk
    touch = ndimage.binary_dilation(belief.cells == FREE, structure=FOUR) & unk
    keep = np.zeros(n + 1, dtype=bool)
    keep[np.unique(lab[touch])] = True
    keep[0] = False
    return keep[lab]


@dataclass(frozen=True)
class CoverageSample:
    pos: tuple[float, float]
    anchor: int


def sample_coverage(
    belief: OccupancyGrid,
    robot_pos: Sequence[float],
    rng: np.random.Generator,
    graph: HybridTopoGraph,
    existing: Sequence[tuple[float, float]] = (),
    params: MapperParams | None = None,
    observable: np.ndarray | None = None,
) -> list[CoverageSample]:
    """Rejection-sample observable Unknown cells within d_c of the robot.

    A sample is kept when it is at least ``sample_spacing`` from every other
    sample and a straight segment to its nearest graph node crosses no known
    Occupied cell; that node becomes its anchor.
    """
    params = params or MapperParams()
    res = belief.resolution
    r0, c0 = belief.world_to_cell(*robot_pos)
    R = int(math.ceil(params.d_c / res))
    rs = slice(max(0, r0 - R), min(belief.height, r0 + R + 1))
    cs = slice(max(0, c0 - R), min(belief.width, c0 + R + 1))
    rr, cc = np.mgrid[rs, cs]
    centers_x = (cc + 0.5) * res
    centers_y = (rr + 0.5) * res
    inside = np.hypot(centers_x - robot_pos[0], centers_y - robot_pos[1]) <= params.d_c
    observable = open_unknown(belief) if observable is None else observable
    cand = inside & observable[rs, cs]
    ys, xs = centers_y[cand], centers_x[cand]
    if ys.size == 0:
        return []
    nodes = [n for n in graph.nodes() if n.kind is not NodeKind.COVERAGE]
    if not nodes:
        return []
    npos = np.array([n.pos for n in nodes])
    taken = [tuple(p) for p in existing]
    out: list[CoverageSample] = []
    for _ in range(params.sample_attempts):
        if len(out) >= params.max_new_samples:
            break
        k = int(rng.integers(ys.size))
        p = (float(xs[k]), float(ys[k]))
        if any(math.hypot(p[0] - q[0], p[1] - q[1]) < params.sample_spacing for q in taken):
            continue
        d = np.hypot(npos[:, 0] - p[0], npos[:, 1] - p[1])
        anchor = None
        for j in np.lexsort(([n.id for n in nodes], d))[:3]:
            if d[j] > params.d_c:
                break
            if segment_not_blocked(belief, p, nodes[j].pos):
                anchor = nodes[j].id
                break
        if anchor is None:
            continue
        taken.append(p)
        out.append(CoverageSample(p, anchor))
    return out


# -- the per-robot mapper -------------------------------------------------------------------

class TopoMapper:
    """Owns one robot's distance field, frontier set and node id counter.

    ``update`` rebuilds the robot's hybrid graph in place from its belief.
    Frontier nodes keep their id while a cluster viewpoint stays within
    ``match_radius``; coverage samples live until their cell becomes known or
    is sealed off from known free space.
    """

    def __init__(self, robot: int, belief: OccupancyGrid, params: MapperParams, seed: int = 0,
                 match_radius: float = 0.3) -> None:
        self.robot = robot
        self.params = params
        self.field = DistanceField.empty(belief.cells.shape, belief.resolution, params.d_hat)
        self.fis: list[FrontierCluster] = []
        self.ridge = np.zeros(belief.cells.shape, dtype=bool)
        self.rng = np.random.default_rng([seed, robot])
        self.counter = 0
        self.match_radius = match_radius
        self._pending = np.zeros(belief.cells.shape, dtype=bool)
        self._first = True

    def _new_id(self) -> int:
        nid = make_node_id(self.robot, self.counter)
        self.counter += 1
        return nid

    def note_changes(self, changed: np.ndarray) -> None:
        self._pending |= changed

    def update(self, belief: OccupancyGrid, graph: HybridTopoGraph, robot_pos: Sequence[float]) -> HybridTopoGraph:
        changed = None if self._first else self._pending
        self._first = False
        self.field, self.ridge = update_gvd(belief, self.field, changed)
        self.fis = update_frontiers(belief, changed, self.fis, self.params.cluster_max_size)
        self._pending = np.zeros_like(self._pending)

        g = graph.copy()
        apply_delta(g, gv_delta(build_gv_graph(belief, self.ridge, self.params), g))
        self._sync_frontiers(g, belief)
        self._sync_samples(g, belief, robot_pos)
        self._relink(g, belief)
        return g

    def _sync_frontiers(self, g: HybridTopoGraph, belief: OccupancyGrid) -> None:
        targets = [cl for cl in self.fis if len(cl.cells) >= self.params.min_cluster_cells]
        old = [n for n in g.nodes() if n.kind is NodeKind.FRONTIER]
        claimed: set[int] = set()
        keep: list[tuple[int, tuple[float, float]]] = []
        for cl in targets:
            best = None
            for n in old:
                if n.id in claimed:
                    continue
                d = math.hypot(n.pos[0] - cl.viewpoint[0], n.pos[1] - cl.viewpoint[1])
                if d <= self.match_radius and (best is None or (d, n.id) < best):
                    best = (d, n.id)
            if best is not None:
                claimed.add(best[1])
                keep.append((best[1], cl.viewpoint))
            else:
                keep.append((-1, cl.viewpoint))
        for n in old:
            g.remove_node(n.id)
        for nid, vp in keep:
            g.add_node(nid if nid >= 0 else self._new_id(), NodeKind.FRONTIER, vp)

    def _sync_samples(self, g: HybridTopoGraph, belief: OccupancyGrid, robot_pos: Sequence[float]) -> None:
        observable = open_unknown(belief)
        live = []
        for n in list(g.nodes()):
            if n.kind is not NodeKind.COVERAGE or is_dual(n.id):
                continue
            r, c = belief.world_to_cell(*n.pos)
            if not (belief.in_bounds(r, c) and observable[r, c]):
                g.remove_node(n.id)
            else:
                live.append(n.pos)
        for s in sample_coverage(belief, robot_pos, self.rng, g, live, self.params, observable):
            g.add_node(self._new_id(), NodeKind.COVERAGE, s.pos)

    def _relink(self, g: HybridTopoGraph, belief: OccupancyGrid) -> None:
        """Reconnect non-GV nodes and bridge disconnected components."""
        for n in g.nodes():
            if n.kind is NodeKind.GV or is_dual(n.id):
                continue
            for v in g.neighbors(n.id):
                if not is_dual(v):
                    g.remove_edge(n.id, v)
        for n in list(g.nodes()):
            if is_dual(n.id) and g.degree(n.id) == 0:
                g.remove_node(n.id)
        nodes = list(g.nodes())
        if not nodes:
            return
        ids = np.array([n.id for n in nodes])
        pos = np.array([n.pos for n in nodes])
        is_gv = np.array([n.kind is NodeKind.GV for n in nodes])
        for k, n in enumerate(nodes):
            if n.kind is NodeKind.GV or is_dual(n.id):
                continue
            d = np.hypot(pos[:, 0] - n.pos[0], pos[:, 1] - n.pos[1])
            d[d <= 0] = np.inf  # itself, or a node at the very same spot
            # Anchor preference: GV nodes first, then the rest; nearest first.
            order = np.lexsort((ids, d, ~is_gv))
            linked = 0
            for j in order:
                if d[j] > self.params.link_radius or linked >= 1:
                    break
                if segment_not_blocked(belief, n.pos, nodes[j].pos):
                    if not g.has_edge(n.id, int(ids[j])):
                        g.add_edge(n.id, int(ids[j]))
                    linked += 1
            for j in np.lexsort((ids, d)):
                if d[j] > self.params.link_radius or linked >= 2:
                    break
                if not g.has_edge(n.id, int(ids[j])) and segment_not_blocked(belief, n.pos, nodes[j].pos):
                    g.add_edge(n.id, int(ids[j]))
                    linked += 1
        link_components(g, belief)


def link_components(g: HybridTopoGraph, belief: OccupancyGrid, max_tests: int = 2000) -> None:
    """Join graph components with the shortest clear straight links (Kruskal order).

    GV-to-GV links must lie in known free space; any other link must only
    avoid known occupied cells.
    """
    comps = g.components()
    if len(comps) <= 1:
        return
    nodes = list(g.nodes())
    comp_of = {v: k for k, comp in enumerate(comps) for v in comp}
    parent = list(range(len(comps)))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    pos = np.array([n.pos for n in nodes])
    cid = np.array([comp_of[n.id] for n in nodes])
    iu, ju = np.triu_indices(len(nodes), k=1)
    cross = cid[iu] != cid[ju]
    iu, ju = iu[cross], ju[cross]
    d = np.hypot(pos[iu, 0] - pos[ju, 0], pos[iu, 1] - pos[ju, 1])
    order = np.lexsort((ju, iu, d))
    merged = 0
    tests = 0
    for k in order:
        a, b = int(iu[k]), int(ju[k])
        ra, rb = find(int(cid[a])), find(int(cid[b]))
        if ra == rb or d[k] <= 0:
            continue
        tests += 1
        if tests > max_tests:
            break
        na, nb = nodes[a], nodes[b]
        if na.kind is NodeKind.GV and nb.kind is NodeKind.GV:
            ok = segment_known_free(belief, na.pos, nb.pos)
        else:
            ok = segment_not_blocked(belief, na.pos, nb.pos)
        if ok:
            g.add_edge(na.id, nb.id)
            parent[ra] = rb
            merged += 1
            if merged == len(comps) - 1:
                break
