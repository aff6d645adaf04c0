"""Occupancy worlds, scenario files, ray-cast sensing and unicycle motion."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

FREE = 0
OCCUPIED = 1
UNKNOWN = -1

ALIGN_TOL = 1e-9
REACHED_TOL = 1e-3


@dataclass
class OccupancyGrid:
    """Ternary grid; ``cells[r, c]`` covers x in [c, c+1)*res, y in [r, r+1)*res."""

    cells: np.ndarray
    resolution: float

    def __post_init__(self) -> None:
        self.cells = np.asarray(self.cells, dtype=np.int8)
        if self.cells.ndim != 2:
            raise ValueError("grid must be 2-D")
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")

    @classmethod
    def unknown(cls, height: int, width: int, resolution: float) -> OccupancyGrid:
        return cls(np.full((height, width), UNKNOWN, dtype=np.int8), resolution)

    @classmethod
    def from_ascii(cls, rows: Sequence[str], resolution: float) -> OccupancyGrid:
        """Row 0 of ``rows`` is the y = 0 row; ``#`` occupied, ``.`` free."""
        if not rows:
            raise ValueError("empty grid")
        width = len(rows[0])
        cells = np.zeros((len(rows), width), dtype=np.int8)
        for r, row in enumerate(rows):
            if len(row) != width:
                raise ValueError(f"grid row {r} has length {len(row)}, expected {width}")
            for c, ch in enumerate(row):
                if ch == "#":
                    cells[r, c] = OCCUPIED
                elif ch != ".":
                    raise ValueError(f"bad grid character {ch!r} at row {r}")
        return cls(cells, resolution)

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def extent(self) -> tuple[float, float]:
        return self.width * self.resolution, self.height * self.resolution

    def copy(self) -> OccupancyGrid:
        return OccupancyGrid(self.cells.copy(), self.resolution)

    def world_to_cell(self, x: float, y: float) -> tuple[int, int]:
        return int(math.floor(y / self.resolution)), int(math.floor(x / self.resolution))

    def cell_center(self, r: int, c: int) -> tuple[float, float]:
        return ((c + 0.5) * self.resolution, (r + 0.5) * self.resolution)

    def in_bounds(self, r: int, c: int) -> bool:
        return 0 <= r < self.height and 0 <= c < self.width

    def value_at(self, x: float, y: float) -> int:
        r, c = self.world_to_cell(x, y)
        if not self.in_bounds(r, c):
            return OCCUPIED
        return int(self.cells[r, c])

    def is_free(self, x: float, y: float) -> bool:
        return self.value_at(x, y) == FREE

    def known(self) -> np.ndarray:
        return self.cells != UNKNOWN

    def to_ascii(self) -> list[str]:
        chars = {FREE: ".", OCCUPIED: "#", UNKNOWN: "?"}
        return ["".join(chars[int(v)] for v in row) for row in self.cells]


# -- scenarios ----------------------------------------------------------------

class ScenarioError(ValueError):
    pass


@dataclass
class Scenario:
    name: str
    world: OccupancyGrid
    starts: list[tuple[float, float, float]]
    robots: int
    sensor_range: float | None = None

    def reachable_free(self) -> np.ndarray:
        """Free cells 4-connected to any start cell."""
        from scipy import ndimage

        free = self.world.cells == FREE
        lab, _ = ndimage.label(free)
        keep = set()
        for x, y, _ in self.starts[: self.robots]:
            r, c = self.world.world_to_cell(x, y)
            if lab[r, c]:
                keep.add(int(lab[r, c]))
        return np.isin(lab, sorted(keep))


BUILTIN_SCENARIOS = ("maze", "office", "octa", "tunnel")


def parse_scenario(text: str, name: str = "scenario") -> Scenario:
    resolution = None
    robots = None
    sensor = None
    starts: dict[int, tuple[float, float, float]] = {}
    grid: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.rstrip()
        if not grid:
            stripped = line.split("//", 1)[0].strip()
            if not stripped or stripped.startswith(";"):
                continue
            tok = stripped.split()
            key = tok[0]
            if key[0] in "#.":
                grid.append(stripped)
                continue
            try:
                if key == "resolution" and len(tok) == 2:
                    resolution = float(tok[1])
                elif key == "robots" and len(tok) == 2:
                    robots = int(tok[1])
                elif key == "sensor_range" and len(tok) == 2:
                    sensor = float(tok[1])
                elif key == "start" and len(tok) == 5:
                    rid = int(tok[1])
                    if rid in starts:
                        raise ValueError(f"duplicate start for robot {rid}")
                    starts[rid] = (float(tok[2]), float(tok[3]), float(tok[4]))
                else:
                    raise ValueError(f"unrecognised header {stripped!r}")
            except ValueError as exc:
                raise ScenarioError(f"{name}:{lineno}: {exc}") from None
        elif line.strip():
            grid.append(line.strip())
    if resolution is None:
        raise ScenarioError(f"{name}: missing 'resolution'")
    if not grid:
        raise ScenarioError(f"{name}: missing grid")
    if sorted(starts) != list(range(len(starts))):
        raise ScenarioError(f"{name}: start ids must be 0..n-1")
    robots = len(starts) if robots is None else robots
    if not 1 <= robots <= len(starts):
        raise ScenarioError(f"{name}: robots={robots} but {len(starts)} start poses")
    try:
        world = OccupancyGrid.from_ascii(grid, resolution)
    except ValueError as exc:
        raise ScenarioError(f"{name}: {exc}") from None
    ordered = [starts[i] for i in range(len(starts))]
    for i, (x, y, _) in enumerate(ordered):
        if not world.is_free(x, y):
            raise ScenarioError(f"{name}: start {i} at ({x}, {y}) is not in free space")
    return Scenario(name, world, ordered, robots, sensor)


def load_scenario(spec: str | Path) -> Scenario:
    """Load a scenario file, or a built-in fixture by name."""
    path = Path(spec)
    if not path.exists() and str(spec) in BUILTIN_SCENARIOS:
        text = resources.files("gvexplore").joinpath("scenarios").joinpath(f"{spec}.txt").read_text()
        return parse_scenario(text, str(spec))
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {spec}: {exc}") from None
    return parse_scenario(text, path.stem)


# -- sensing ------------------------------------------------------------------

def sense(
    world: OccupancyGrid,
    belief: OccupancyGrid,
    pose: Sequence[float],
    max_range: float,
    n_rays: int = 360,
) -> np.ndarray:
    """Ray-cast from ``pose`` and write observations into ``belief`` in place.

    Bearings are 2πk/n in the world frame. Each ray is sampled at a quarter
    cell; cells before the first occupied sample become Free and the hit cell
    Occupied. Returns the mask of cells that were Unknown and are now Known.
    """
    res = world.resolution
    step = res / 4.0
    s = np.arange(0.0, max_range + 1e-9, step)
    th = 2.0 * np.pi * np.arange(n_rays) / n_rays
    xs = pose[0] + np.outer(np.cos(th), s)
    ys = pose[1] + np.outer(np.sin(th), s)
    rr = np.floor(ys / res).astype(np.int64)
    cc = np.floor(xs / res).astype(np.int64)
    inb = (rr >= 0) & (rr < world.height) & (cc >= 0) & (cc < world.width)
    rr_c = np.clip(rr, 0, world.height - 1)
    cc_c = np.clip(cc, 0, world.width - 1)
    occ = (world.cells[rr_c, cc_c] == OCCUPIED) & inb
    blocked = occ | ~inb
    n_s = s.size
    stop = np.where(blocked.any(axis=1), blocked.argmax(axis=1), n_s)
    idx = np.arange(n_s)[None, :]
    free_mask = idx < stop[:, None]
    hit_rows = np.nonzero(stop < n_s)[0]
    hit_rows = hit_rows[occ[hit_rows, stop[hit_rows]]]

    before = belief.cells == UNKNOWN
    belief.cells[rr[free_mask], cc[free_mask]] = FREE
    belief.cells[rr[hit_rows, stop[hit_rows]], cc[hit_rows, stop[hit_rows]]] = OCCUPIED
    return before & (belief.cells != UNKNOWN)


# -- robots -------------------------------------------------------------------

@dataclass(frozen=True)
class RobotState:
    id: int
    x: float
    y: float
    heading: float
    v_max: float = 1.2
    omega_max: float = 1.57
    tour_distance: float = 0.0
    collided: bool = False

    @property
    def pos(self) -> tuple[float, float]:
        return (self.x, self.y)


def wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def _first_contact(world: OccupancyGrid, p: tuple[float, float], q: tuple[float, float]) -> float | None:
    """Fraction along p→q of the first sample inside an occupied cell."""
    n = max(1, int(math.ceil(math.hypot(q[0] - p[0], q[1] - p[1]) / (world.resolution / 4.0))))
    for k in range(1, n + 1):
        t = k / n
        if world.value_at(p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])) == OCCUPIED:
            return (k - 1) / n
    return None


def step_robot(
    state: RobotState,
    waypoints: Sequence[tuple[float, float]],
    dt: float,
    world: OccupancyGrid | None = None,
) -> tuple[RobotState, list[tuple[float, float]]]:
    """Advance one tick toward the first waypoint; returns (state, remaining waypoints).

    The robot turns at most omega_max·dt and translates at v_max only once this
    tick's turn has closed the heading error (well inside the 30° allowance),
    so it never leaves the segment toward the waypoint. A waypoint within reach this tick is snapped onto and
    consumed. With ``world`` given, motion stops at the first occupied cell and
    the state is flagged as collided.
    """
    wps = list(waypoints)
    if dt <= 0 or not wps:
        return state, wps
    x, y, h = state.x, state.y, state.heading
    while wps and math.hypot(wps[0][0] - x, wps[0][1] - y) < REACHED_TOL:
        wps.pop(0)
    if not wps:
        return state, wps
    tx, ty = wps[0]
    want = math.atan2(ty - y, tx - x)
    err = wrap_angle(want - h)
    turn = max(-state.omega_max * dt, min(state.omega_max * dt, err))
    h = wrap_angle(h + turn)
    err = wrap_angle(want - h)
    nx, ny = x, y
    reached = False
    if abs(err) < ALIGN_TOL:
        # Straight at the waypoint, so the swept path is the planned segment.
        dist = math.hypot(tx - x, ty - y)
        reach = state.v_max * dt
        if reach >= dist:
            nx, ny, reached = tx, ty, True
        else:
            nx, ny = x + reach * (tx - x) / dist, y + reach * (ty - y) / dist
    collided = state.collided
    if world is not None and (nx, ny) != (x, y):
        frac = _first_contact(world, (x, y), (nx, ny))
        if frac is not None:
            nx, ny = x + frac * (nx - x), y + frac * (ny - y)
            collided, reached = True, False
    if reached:
        wps.pop(0)
    moved = math.hypot(nx - x, ny - y)
    return replace(state, x=nx, y=ny, heading=h, tour_distance=state.tour_distance + moved, collided=collided), wps


@dataclass
class SimClock:
    dt: float = 0.1
    replan_period: float = 1.0
    comm_period: float = 1.0
    step: int = 0
    _ratios: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        for name in ("replan_period", "comm_period"):
            ratio = getattr(self, name) / self.dt
            if ratio < 1 - 1e-9 or abs(ratio - round(ratio)) > 1e-9:
                raise ValueError(f"dt={self.dt} does not divide {name}={getattr(self, name)}")
            self._ratios[name] = int(round(ratio))

    @property
    def t(self) -> float:
        return self.step * self.dt

    def due(self, name: str) -> bool:
        return self.step % self._ratios[name] == 0

    def tick(self) -> None:
        self.step += 1
