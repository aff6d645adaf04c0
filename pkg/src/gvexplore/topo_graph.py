"""Hybrid topological graph: typed nodes and edges, graph distances, merging."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator, Sequence

# Non-GV node ids carry their origin in the high bits: ((slot + 1) << 32) | counter.
# GV node ids are belief cell indices and stay below 2**32.
ID_SHIFT = 32
DUAL_SLOT = 0xFFFE


class NodeKind(str, Enum):
    GV = "GV"
    FRONTIER = "Frontier"
    COVERAGE = "Coverage"


class Certainty(str, Enum):
    DETERMINISTIC = "Deterministic"
    UNCERTAIN = "Uncertain"


def make_node_id(slot: int, counter: int) -> int:
    """Global id for a node created by robot ``slot`` (or the dual-node slot)."""
    if counter < 0 or counter >= 1 << ID_SHIFT:
        raise ValueError(f"counter out of range: {counter}")
    return ((slot + 1) << ID_SHIFT) | counter


def node_slot(node_id: int) -> int | None:
    """Robot slot that minted ``node_id``; None for grid-derived ids."""
    hi = node_id >> ID_SHIFT
    return None if hi == 0 else hi - 1


def node_counter(node_id: int) -> int:
    return node_id & ((1 << ID_SHIFT) - 1)


def is_dual(node_id: int) -> bool:
    return node_slot(node_id) == DUAL_SLOT


@dataclass(frozen=True)
class TopoNode:
    id: int
    kind: NodeKind
    pos: tuple[float, float]


@dataclass(frozen=True)
class TopoEdge:
    u: int
    v: int
    length: float
    certainty: Certainty

    def other(self, n: int) -> int:
        return self.v if n == self.u else self.u

    @property
    def key(self) -> tuple[int, int]:
        return (self.u, self.v)


def edge_certainty(a: NodeKind, b: NodeKind) -> Certainty:
    if a is NodeKind.GV and b is NodeKind.GV:
        return Certainty.DETERMINISTIC
    return Certainty.UNCERTAIN


def _dist(p: tuple[float, float], q: tuple[float, float]) -> float:
    return math.hypot(p[0] - q[0], p[1] - q[1])


class HybridTopoGraph:
    """Undirected graph of typed nodes; edge certainty follows the endpoint kinds.

    Edge lengths default to the Euclidean distance between endpoints. An
    explicit length may be given (used by synthetic test graphs).
    """

    def __init__(self) -> None:
        self._nodes: dict[int, TopoNode] = {}
        self._adj: dict[int, dict[int, TopoEdge]] = {}

    # -- nodes -------------------------------------------------------------
    def add_node(self, node_id: int, kind: NodeKind | str, pos: Sequence[float]) -> TopoNode:
        if node_id in self._nodes:
            raise ValueError(f"duplicate node id {node_id}")
        node = TopoNode(int(node_id), NodeKind(kind), (float(pos[0]), float(pos[1])))
        self._nodes[node.id] = node
        self._adj[node.id] = {}
        return node

    def remove_node(self, node_id: int) -> None:
        for nbr in list(self._adj[node_id]):
            del self._adj[nbr][node_id]
        del self._adj[node_id]
        del self._nodes[node_id]

    def node(self, node_id: int) -> TopoNode:
        return self._nodes[node_id]

    def __contains__(self, node_id: object) -> bool:
        return node_id in self._nodes

    def __len__(self) -> int:
        return len(self._nodes)

    def node_ids(self) -> list[int]:
        return sorted(self._nodes)

    def nodes(self) -> Iterator[TopoNode]:
        for nid in sorted(self._nodes):
            yield self._nodes[nid]

    # -- edges -------------------------------------------------------------
    def add_edge(self, u: int, v: int, length: float | None = None) -> TopoEdge:
        if u == v:
            raise ValueError("self-loop")
        if u not in self._nodes or v not in self._nodes:
            raise KeyError(f"edge endpoint missing: {u}-{v}")
        if v in self._adj[u]:
            raise ValueError(f"duplicate edge {u}-{v}")
        a, b = (u, v) if u < v else (v, u)
        na, nb = self._nodes[a], self._nodes[b]
        if length is None:
            length = _dist(na.pos, nb.pos)
        if not length > 0.0:
            raise ValueError(f"edge {a}-{b} has non-positive length {length}")
        e = TopoEdge(a, b, float(length), edge_certainty(na.kind, nb.kind))
        self._adj[a][b] = e
        self._adj[b][a] = e
        return e

    def remove_edge(self, u: int, v: int) -> None:
        del self._adj[u][v]
        del self._adj[v][u]

    def has_edge(self, u: int, v: int) -> bool:
        return u in self._adj and v in self._adj[u]

    def edge(self, u: int, v: int) -> TopoEdge:
        return self._adj[u][v]

    def neighbors(self, u: int) -> list[int]:
        return sorted(self._adj[u])

    def incident(self, u: int) -> Iterable[TopoEdge]:
        return self._adj[u].values()

    def degree(self, u: int) -> int:
        return len(self._adj[u])

    def edges(self) -> list[TopoEdge]:
        out = []
        for u in sorted(self._adj):
            for v, e in self._adj[u].items():
                if u < v:
                    out.append(e)
        out.sort(key=lambda e: e.key)
        return out

    def num_edges(self) -> int:
        return sum(len(a) for a in self._adj.values()) // 2

    def copy(self) -> HybridTopoGraph:
        g = HybridTopoGraph()
        g._nodes = dict(self._nodes)
        g._adj = {k: dict(v) for k, v in self._adj.items()}
        return g

    def components(self) -> list[list[int]]:
        seen: set[int] = set()
        comps = []
        for s in sorted(self._nodes):
            if s in seen:
                continue
            stack, comp = [s], []
            seen.add(s)
            while stack:
                u = stack.pop()
                comp.append(u)
                for v in self._adj[u]:
                    if v not in seen:
                        seen.add(v)
                        stack.append(v)
            comps.append(sorted(comp))
        return comps

    def validate(self) -> None:
        for nid, nbrs in self._adj.items():
            for v, e in nbrs.items():
                if v == nid or v not in self._nodes:
                    raise ValueError(f"bad edge {nid}-{v}")
                if self._adj[v].get(nid) is not e:
                    raise ValueError(f"asymmetric adjacency {nid}-{v}")
                if e.certainty is Certainty.DETERMINISTIC and not (
                    self._nodes[e.u].kind is NodeKind.GV and self._nodes[e.v].kind is NodeKind.GV
                ):
                    raise ValueError(f"deterministic edge {e.key} touches a non-GV node")

    def nearest_node(self, pos: Sequence[float], kinds: Iterable[NodeKind] | None = None) -> int | None:
        allowed = None if kinds is None else set(kinds)
        best, best_key = None, None
        for n in self._nodes.values():
            if allowed is not None and n.kind not in allowed:
                continue
            key = (_dist(n.pos, (pos[0], pos[1])), n.id)
            if best_key is None or key < best_key:
                best, best_key = n.id, key
        return best

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, HybridTopoGraph):
            return NotImplemented
        return self._nodes == other._nodes and self.edges() == other.edges()

    def __repr__(self) -> str:
        return f"HybridTopoGraph(nodes={len(self._nodes)}, edges={self.num_edges()})"


# -- distances --------------------------------------------------------------

def dijkstra(
    g: HybridTopoGraph,
    src: int,
    weight=None,
    allowed: set[int] | None = None,
) -> tuple[dict[int, float], dict[int, int]]:
    """Single-source shortest paths.

    Heap entries are keyed (distance, predecessor id, node id), so among equal
    distance predecessors the smallest id becomes the parent.
    ``weight`` maps an edge to its cost (default: its length); ``allowed``
    restricts the search to an induced subgraph.
    """
    dist: dict[int, float] = {}
    parent: dict[int, int] = {}
    heap: list[tuple[float, int, int]] = [(0.0, -1, src)]
    best: dict[int, float] = {src: 0.0}
    while heap:
        d, p, u = heapq.heappop(heap)
        if u in dist:
            continue
        dist[u] = d
        parent[u] = p
        for v, e in g._adj[u].items():
            if v in dist or (allowed is not None and v not in allowed):
                continue
            nd = d + (e.length if weight is None else weight(e))
            if nd <= best.get(v, math.inf):
                best[v] = nd
                heapq.heappush(heap, (nd, u, v))
    return dist, parent


def shortest_path(g: HybridTopoGraph, src: int, dst: int) -> tuple[float, list[TopoEdge]] | None:
    """Minimal-length edge sequence from src to dst, or None when unreachable."""
    if src not in g or dst not in g:
        raise KeyError(f"unknown node {src if src not in g else dst}")
    if src == dst:
        return 0.0, []
    dist, parent = dijkstra(g, src)
    if dst not in dist:
        return None
    path = []
    v = dst
    while v != src:
        p = parent[v]
        path.append(g.edge(p, v))
        v = p
    path.reverse()
    return dist[dst], path


# -- merging ----------------------------------------------------------------

def merge_graphs(
    mine: HybridTopoGraph,
    theirs: Sequence[HybridTopoGraph],
    merge_radius: float = 0.3,
) -> HybridTopoGraph:
    """Fuse graphs expressed in a shared frame.

    Nodes with equal ids are the same node. GV nodes merge only when they
    coincide exactly. Non-GV nodes are clustered greedily in id order: each
    joins the lowest-id representative within ``merge_radius`` and takes its
    position. The result depends only on the set of input graphs.
    """
    if not theirs:
        return mine.copy()

    nodes: dict[int, TopoNode] = {}
    for g in (mine, *theirs):
        for n in g._nodes.values():
            nodes.setdefault(n.id, n)

    remap: dict[int, int] = {}
    out = HybridTopoGraph()
    gv_at: dict[tuple[float, float], int] = {}
    reps: list[TopoNode] = []
    for nid in sorted(nodes):
        n = nodes[nid]
        if n.kind is NodeKind.GV:
            hit = gv_at.get(n.pos)
            if hit is not None:
                remap[nid] = hit
                continue
            gv_at[n.pos] = nid
        else:
            target = None
            for r in reps:
                if _dist(r.pos, n.pos) <= merge_radius:
                    target = r.id
                    break
            if target is not None:
                remap[nid] = target
                continue
            reps.append(n)
        remap[nid] = nid
        out.add_node(nid, n.kind, n.pos)

    for g in (mine, *theirs):
        for u, nbrs in g._adj.items():
            for v, e in nbrs.items():
                if u > v:
                    continue
                a, b = remap[u], remap[v]
                if a == b or out.has_edge(a, b):
                    continue
                if e.certainty is Certainty.DETERMINISTIC or (a, b) == (u, v):
                    out.add_edge(a, b, e.length)
                else:
                    # Uncertain edges follow their (possibly moved) endpoints.
                    length = _dist(out.node(a).pos, out.node(b).pos)
                    out.add_edge(a, b, length if length > 0 else e.length)
    return out


# -- snapshot text ----------------------------------------------------------

class SnapshotError(ValueError):
    pass


def format_snapshot(g: HybridTopoGraph, labels: dict[int, int] | None = None) -> str:
    lines = []
    for n in g.nodes():
        row = f"N {n.id} {n.kind.value} {n.pos[0]!r} {n.pos[1]!r}"
        if labels is not None:
            lab = labels.get(n.id)
            row += f" {'-' if lab is None else lab}"
        lines.append(row)
    for e in g.edges():
        lines.append(f"E {e.u} {e.v} {e.length!r} {e.certainty.value}")
    return "\n".join(lines) + "\n"


def parse_snapshot(text: str) -> HybridTopoGraph:
    """Parse ``N id kind x y [label]`` / ``E id1 id2 length certainty`` lines.

    Blank lines and ``#`` comments are ignored. Node lines must precede the
    edges that use them. A stated certainty must agree with the endpoint kinds.
    """
    g = HybridTopoGraph()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        try:
            if tok[0] == "N" and len(tok) in (5, 6):
                g.add_node(int(tok[1]), NodeKind(tok[2]), (float(tok[3]), float(tok[4])))
            elif tok[0] == "E" and len(tok) == 5:
                e = g.add_edge(int(tok[1]), int(tok[2]), float(tok[3]))
                if e.certainty is not Certainty(tok[4]):
                    raise ValueError(f"certainty {tok[4]} contradicts node kinds")
            else:
                raise ValueError(f"unrecognised record {tok[0]!r}")
        except (ValueError, KeyError) as exc:
            raise SnapshotError(f"line {lineno}: {exc}") from None
    return g
