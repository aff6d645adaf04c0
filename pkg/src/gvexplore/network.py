"""Range-limited broadcast, wire format and per-round map fusion."""

from __future__ import annotations

import logging
import math
import struct
import zlib
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .partition import PowerPointSet
from .topo_graph import Certainty, HybridTopoGraph, NodeKind, merge_graphs
from .world import UNKNOWN, OccupancyGrid

log = logging.getLogger(__name__)

MAGIC = b"GVXM"
VERSION = 1

_KINDS = [NodeKind.GV, NodeKind.FRONTIER, NodeKind.COVERAGE]
_CERTS = [Certainty.DETERMINISTIC, Certainty.UNCERTAIN]

_HEADER = struct.Struct("<4sHIIH")
_RECORD = struct.Struct("<cI")
_NODE = struct.Struct("<QBdd")
_EDGE = struct.Struct("<QQdB")


class MessageError(ValueError):
    pass


def neighbors(
    poses: Sequence[Sequence[float]],
    comm_range: float,
    multi_hop: bool = False,
) -> dict[int, list[int]]:
    """Robots within ``comm_range`` of each other; with ``multi_hop`` every
    robot is linked to its whole connected component (relay)."""
    n = len(poses)
    adj = {i: [] for i in range(n)}
    for i in range(n):
        for j in range(i + 1, n):
            d = math.hypot(poses[i][0] - poses[j][0], poses[i][1] - poses[j][1])
            if d <= comm_range:
                adj[i].append(j)
                adj[j].append(i)
    if not multi_hop:
        return adj
    comp = {}
    for s in range(n):
        if s in comp:
            continue
        stack, members = [s], []
        comp[s] = s
        while stack:
            u = stack.pop()
            members.append(u)
            for v in adj[u]:
                if v not in comp:
                    comp[v] = s
                    stack.append(v)
        for u in members:
            adj[u] = sorted(v for v in members if v != u)
    return adj


# -- wire format ------------------------------------------------------------------

@dataclass
class Message:
    sender: int
    tick: int
    belief: OccupancyGrid | None = None
    graph: HybridTopoGraph | None = None
    power_points: PowerPointSet | None = None
    load: float | None = None
    tour: float | None = None

    def encode(self) -> bytes:
        records = []
        if self.belief is not None:
            b = self.belief
            body = struct.pack("<IId", b.height, b.width, b.resolution)
            body += zlib.compress(b.cells.astype(np.int8).tobytes(), 6)
            records.append((b"B", body))
        if self.graph is not None:
            nodes = self.graph.node_ids()
            body = struct.pack("<I", len(nodes))
            body += b"".join(
                _NODE.pack(n.id, _KINDS.index(n.kind), n.pos[0], n.pos[1])
                for n in map(self.graph.node, nodes)
            )
            records.append((b"N", body))
            edges = self.graph.edges()
            body = struct.pack("<I", len(edges))
            body += b"".join(_EDGE.pack(e.u, e.v, e.length, _CERTS.index(e.certainty)) for e in edges)
            records.append((b"E", body))
        if self.power_points is not None:
            pp = self.power_points
            n = len(pp)
            body = struct.pack("<I", n)
            body += b"".join(struct.pack("<iQ", r, v) for r, v in pp.centers)
            body += pp.weights.astype("<f8").tobytes()
            records.append((b"W", body))
        if self.load is not None or self.tour is not None:
            records.append((b"L", struct.pack("<dd", self.load or 0.0, self.tour or 0.0)))
        out = [_HEADER.pack(MAGIC, VERSION, self.sender, self.tick, len(records))]
        for tag, body in records:
            out.append(_RECORD.pack(tag, len(body)))
            out.append(body)
        return b"".join(out)

    @classmethod
    def decode(cls, data: bytes) -> Message:
        try:
            return cls._decode(data)
        except (struct.error, zlib.error, IndexError, ValueError) as exc:
            raise MessageError(f"malformed message: {exc}") from None

    @classmethod
    def _decode(cls, data: bytes) -> Message:
        magic, version, sender, tick, count = _HEADER.unpack_from(data, 0)
        if magic != MAGIC:
            raise MessageError("bad magic")
        if version != VERSION:
            raise MessageError(f"unsupported version {version}")
        msg = cls(sender, tick)
        off = _HEADER.size
        nodes: list[tuple[int, NodeKind, tuple[float, float]]] | None = None
        edges = []
        for _ in range(count):
            tag, length = _RECORD.unpack_from(data, off)
            off += _RECORD.size
            body = data[off : off + length]
            if len(body) != length:
                raise MessageError("truncated record")
            off += length
            if tag == b"B":
                h, w, res = struct.unpack_from("<IId", body, 0)
                raw = zlib.decompress(body[16:])
                cells = np.frombuffer(raw, dtype=np.int8).reshape(h, w).copy()
                msg.belief = OccupancyGrid(cells, res)
            elif tag == b"N":
                (k,) = struct.unpack_from("<I", body, 0)
                nodes = []
                for i in range(k):
                    nid, kind, x, y = _NODE.unpack_from(body, 4 + i * _NODE.size)
                    nodes.append((nid, _KINDS[kind], (x, y)))
            elif tag == b"E":
                (k,) = struct.unpack_from("<I", body, 0)
                for i in range(k):
                    u, v, length_, cert = _EDGE.unpack_from(body, 4 + i * _EDGE.size)
                    edges.append((u, v, length_, _CERTS[cert]))
            elif tag == b"W":
                (n,) = struct.unpack_from("<I", body, 0)
                centers = [struct.unpack_from("<iQ", body, 4 + 12 * i) for i in range(n)]
                start = 4 + 12 * n
                weights = np.frombuffer(body[start : start + 8 * n * n], dtype="<f8").reshape(n, n)
                msg.power_points = PowerPointSet([(int(r), int(v)) for r, v in centers], weights.copy())
            elif tag == b"L":
                msg.load, msg.tour = struct.unpack("<dd", body)
            else:
                log.warning("skipping unknown record %r", tag)
        if off != len(data):
            raise MessageError("trailing bytes")
        if nodes is not None:
            g = HybridTopoGraph()
            for nid, kind, pos in nodes:
                g.add_node(nid, kind, pos)
            for u, v, length_, cert in edges:
                e = g.add_edge(u, v, length_)
                if e.certainty is not cert:
                    raise MessageError(f"edge ({u}, {v}) certainty disagrees with node kinds")
            msg.graph = g
        return msg


# -- fusion ---------------------------------------------------------------------------

def fuse_beliefs(beliefs: Sequence[OccupancyGrid]) -> OccupancyGrid:
    """Cell-wise union of knowledge: any Known value beats Unknown.

    Known values never conflict in a noise-free world; on a conflict the
    lowest-index belief wins.
    """
    out = beliefs[0].copy()
    for b in beliefs[1:]:
        take = (out.cells == UNKNOWN) & (b.cells != UNKNOWN)
        out.cells[take] = b.cells[take]
    return out


@dataclass
class ExchangeResult:
    beliefs: list[OccupancyGrid]
    graphs: list[HybridTopoGraph]
    received: list[dict[int, Message]]
    bytes_sent: int = 0
    dropped: int = 0
    errors: list[str] = field(default_factory=list)


def exchange_and_fuse(
    beliefs: Sequence[OccupancyGrid],
    graphs: Sequence[HybridTopoGraph],
    comm: Mapping[int, Sequence[int]],
    tick: int = 0,
    extras: Sequence[Mapping[str, object]] | None = None,
    drop_prob: float = 0.0,
    rng: np.random.Generator | None = None,
    merge_radius: float = 0.3,
) -> ExchangeResult:
    """One synchronous broadcast round followed by fusion.

    Every robot serialises its state first; then each robot decodes what its
    neighbours sent and folds its own and the received maps in robot-id
    order, so the result does not depend on neighbour ordering.
    """
    n = len(beliefs)
    extras = extras or [{} for _ in range(n)]
    wire = [
        Message(i, tick, beliefs[i], graphs[i], **dict(extras[i])).encode()
        for i in range(n)
    ]
    senders = [sorted(set(comm.get(i, ()))) for i in range(n)]
    bytes_sent = sum(len(wire[i]) for i in range(n) if senders[i])
    if drop_prob > 0 and rng is None:
        rng = np.random.default_rng(tick)
    out = ExchangeResult([], [], [], bytes_sent)
    for i in range(n):
        got: dict[int, Message] = {}
        for j in senders[i]:
            if drop_prob > 0 and rng.random() < drop_prob:
                out.dropped += 1
                continue
            try:
                got[j] = Message.decode(wire[j])
            except MessageError as exc:
                log.warning("robot %d dropped message from %d: %s", i, j, exc)
                out.errors.append(str(exc))
        ids = sorted({i, *got})
        bel = [beliefs[k] if k == i else got[k].belief for k in ids]
        gra = [graphs[k] if k == i else got[k].graph for k in ids]
        out.beliefs.append(fuse_beliefs(bel) if len(bel) > 1 else beliefs[i].copy())
        out.graphs.append(merge_graphs(gra[0], gra[1:], merge_radius))
        out.received.append(got)
    return out
