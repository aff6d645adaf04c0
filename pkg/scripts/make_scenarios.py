"""Regenerate the built-in scenario fixtures under src/gvexplore/scenarios/."""

from __future__ import annotations

import argparse
import math
from pathlib import Path

import numpy as np

RES = 0.1


def _write(path: Path, grid: np.ndarray, starts, comment: str, sensor: float | None = None) -> None:
    lines = [f"; {comment}", f"resolution {RES}", f"robots {len(starts)}"]
    if sensor is not None:
        lines.append(f"sensor_range {sensor}")
    for i, (x, y, h) in enumerate(starts):
        lines.append(f"start {i} {x} {y} {h}")
    for row in grid:
        lines.append("".join("#" if v else "." for v in row))
    path.write_text("\n".join(lines) + "\n")


def _border(grid: np.ndarray, t: int = 2) -> None:
    grid[:t, :] = grid[-t:, :] = True
    grid[:, :t] = grid[:, -t:] = True


def maze(seed: int = 3, n: int = 5, pitch: int = 16, wall: int = 2, loops: int = 4) -> np.ndarray:
    """Perfect maze by randomized depth-first search, plus a few extra openings."""
    rng = np.random.default_rng(seed)
    size = n * pitch + wall
    grid = np.ones((size, size), dtype=bool)
    for r in range(n):
        for c in range(n):
            grid[r * pitch + wall : (r + 1) * pitch, c * pitch + wall : (c + 1) * pitch] = False

    def open_wall(a, b):
        (r0, c0), (r1, c1) = sorted((a, b))
        if r0 == r1:
            x = (c0 + 1) * pitch
            grid[r0 * pitch + wall : (r0 + 1) * pitch, x : x + wall] = False
        else:
            y = (r0 + 1) * pitch
            grid[y : y + wall, c0 * pitch + wall : (c0 + 1) * pitch] = False

    seen = {(0, 0)}
    stack = [(0, 0)]
    closed = []
    while stack:
        r, c = stack[-1]
        nxt = [(r + dr, c + dc) for dr, dc in ((0, 1), (1, 0), (0, -1), (-1, 0))
               if 0 <= r + dr < n and 0 <= c + dc < n and (r + dr, c + dc) not in seen]
        if not nxt:
            stack.pop()
            continue
        k = int(rng.integers(len(nxt)))
        cell = nxt[k]
        open_wall((r, c), cell)
        seen.add(cell)
        stack.append(cell)
    for r in range(n):
        for c in range(n):
            for dr, dc in ((0, 1), (1, 0)):
                rr, cc = r + dr, c + dc
                if rr < n and cc < n:
                    closed.append(((r, c), (rr, cc)))
    order = rng.permutation(len(closed))
    for k in order[:loops]:
        open_wall(*closed[k])
    return grid


def office() -> np.ndarray:
    """Central corridor with rooms on both sides, 12 m x 8 m."""
    h, w = 80, 120
    g = np.zeros((h, w), dtype=bool)
    _border(g)
    g[30:32, :] = True
    g[48:50, :] = True
    for x in (30, 60, 90):
        g[:30, x : x + 2] = True
        g[50:, x : x + 2] = True
    for x0 in (2, 32, 62, 92):
        g[30:32, x0 + 10 : x0 + 19] = False
        g[48:50, x0 + 8 : x0 + 17] = False
    g[10:12, 40:52] = True  # a desk block in one room
    g[62:70, 100:104] = True
    return g


def octa() -> np.ndarray:
    """Nested octagonal walls with staggered gaps, 10 m across."""
    size = 100
    g = np.zeros((size, size), dtype=bool)
    _border(g)
    yy, xx = np.mgrid[0:size, 0:size]
    cx = cy = size / 2 - 0.5
    dx, dy = np.abs(xx - cx), np.abs(yy - cy)
    octn = np.maximum(np.maximum(dx, dy), (dx + dy) / math.sqrt(2))
    ang = np.degrees(np.arctan2(yy - cy, xx - cx)) % 360
    for radius, gap in ((36, 90.0), (24, 270.0), (12, 45.0)):
        ring = (octn >= radius) & (octn < radius + 2)
        gap_mask = np.abs(((ang - gap) + 180) % 360 - 180) < 12
        g |= ring & ~gap_mask
    return g


def tunnel() -> np.ndarray:
    """Serpentine 1.2 m tunnel with a side branch, 12 m x 8 m."""
    h, w = 80, 120
    g = np.ones((h, w), dtype=bool)
    g[4:16, 4:116] = False
    g[16:34, 104:116] = False
    g[34:46, 4:116] = False
    g[46:64, 4:16] = False
    g[64:76, 4:116] = False
    g[16:34, 56:66] = False  # branch back up to the first leg
    return g


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parents[1] / "src/gvexplore/scenarios")
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    _write(args.out / "maze.txt", maze(),
           [(0.7, 0.7, 0.0), (1.1, 0.7, 1.5708), (0.9, 1.1, 3.1416)],
           "5x5 cell maze, 1.6 m pitch, 0.2 m walls, a few loops")
    _write(args.out / "office.txt", office(),
           [(1.0, 4.0, 0.0), (1.0, 3.6, 0.0), (1.0, 4.4, 0.0)],
           "office: corridor with six rooms")
    _write(args.out / "octa.txt", octa(),
           [(5.0, 0.6, 1.5708), (4.6, 0.6, 1.5708), (5.4, 0.6, 1.5708)],
           "nested octagons with staggered gaps")
    _write(args.out / "tunnel.txt", tunnel(),
           [(1.0, 1.0, 0.0), (0.7, 1.0, 0.0), (1.3, 1.0, 0.0)],
           "serpentine tunnel; short-range sensor", sensor=1.5)


if __name__ == "__main__":
    main()
