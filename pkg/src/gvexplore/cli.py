"""Command line entry point: ``gvexplore explore`` and ``gvexplore partition``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .balancer import BalanceConfig, balance
from .partition import LoadMetric, PowerPointSet, graph_voronoi
from .sim import ExploreParams, Variant, run_episode, write_outputs
from .topo_graph import SnapshotError, parse_snapshot
from .world import ScenarioError, load_scenario

log = logging.getLogger("gvexplore")

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_FAILED = 3

# Planner parameters exposed as individual flags (name, type, help).
TUNABLES = [
    ("gamma", float, "weight step gain"),
    ("b_lambda", float, "balance threshold on pairwise load difference"),
    ("beta_c", float, "priority weight of path cost"),
    ("beta_s", float, "priority weight of the stay-in-partition flag"),
    ("d_c", float, "coverage-sample window, metres"),
    ("horizon", int, "targets sequenced per cycle"),
    ("gamma_d", float, "scale of the tour feedback added to each load"),
    ("v_max", float, "max linear speed, m/s"),
    ("omega_max", float, "max turn rate, rad/s"),
    ("sensor_range", float, "lidar range, m (a scenario may override)"),
    ("resolution", float, "grid resolution, m"),
    ("safe_distance", float, "obstacle inflation radius, m"),
    ("comm_range", float, "radio range, m"),
    ("dt", float, "simulation step, s"),
    ("replan_period", float, "seconds between planning cycles"),
    ("comm_period", float, "seconds between exchanges"),
]


class ConfigError(ValueError):
    pass


def load_config(path: Path) -> dict:
    """Read a JSON object of ExploreParams overrides; unknown keys are errors."""
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    known = {f.name for f in dataclasses.fields(ExploreParams)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return data


def build_params(args: argparse.Namespace) -> ExploreParams:
    values: dict = {}
    if args.config is not None:
        values.update(load_config(args.config))
    for name, _, _ in TUNABLES:
        v = getattr(args, name)
        if v is not None:
            values[name] = v
    if args.max_time is not None:
        values["max_time"] = args.max_time
    if args.multi_hop:
        values["multi_hop"] = True
    if args.drop_prob is not None:
        values["drop_prob"] = args.drop_prob
    return ExploreParams(**values)


def cmd_explore(args: argparse.Namespace) -> int:
    try:
        scenario = load_scenario(args.scenario)
        params = build_params(args)
    except (ScenarioError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except TypeError as exc:
        print(f"error: bad config value: {exc}", file=sys.stderr)
        return EXIT_PARSE
    status = EXIT_OK
    for k in range(args.repeat):
        seed = args.seed + k
        out = args.out if args.repeat == 1 else args.out / f"seed_{seed}"
        try:
            m = run_episode(scenario, params, args.variant, seed, args.robots)
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_PARSE
        write_outputs(m, out)
        print(f"seed {seed}: {m.reason} coverage={m.coverage:.4f} time={m.exploration_time:.1f}s "
              f"tours={' '.join(f'{d:.2f}' for d in m.tour_distances)} gap={m.gap:.2f} "
              f"collisions={m.collisions} -> {out}")
        if not m.success:
            status = EXIT_FAILED
    return status


def _parse_ids(text: str) -> list[int]:
    return [int(x) for x in text.replace(",", " ").split()]


def _parse_weights(text: str, n: int) -> np.ndarray:
    """Rows separated by ';', entries by ','; or a path to such a file."""
    p = Path(text)
    if p.exists():
        text = p.read_text().strip().replace("\n", ";")
    rows = [r for r in text.split(";") if r.strip()]
    w = np.array([[float(x) for x in r.replace(",", " ").split()] for r in rows])
    if w.shape != (n, n):
        raise ValueError(f"weights must be {n}x{n}, got {w.shape}")
    return w


def cmd_partition(args: argparse.Namespace) -> int:
    try:
        g = parse_snapshot(args.graph.read_text())
        centers = _parse_ids(args.centers)
        missing = [c for c in centers if c not in g]
        if missing:
            raise ValueError(f"centers not in graph: {missing}")
        if len(set(centers)) != len(centers):
            raise ValueError("centers must be distinct")
        w = _parse_weights(args.weights, len(centers)) if args.weights else np.zeros((len(centers),) * 2)
        pp = PowerPointSet([(i, c) for i, c in enumerate(centers)], w)
    except OSError as exc:
        print(f"error: cannot read {args.graph}: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (SnapshotError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE

    metric = LoadMetric(args.metric)
    if args.balance:
        cfg = BalanceConfig(gamma=args.gamma, b_lambda=args.b_lambda, max_iters=args.max_iters)
        out = balance(g, pp, cfg, metric)
        res = out.final_partition
        print("iter M_lambda m_lambda D_lambda")
        for it, (hi, lo, gap) in enumerate(out.load_trace):
            print(f"{it} {hi:.6f} {lo:.6f} {gap:.6f}")
        print(f"converged {str(out.converged).lower()} after {out.iterations} iterations")
    else:
        res = graph_voronoi(g, pp, metric)
    print("node label")
    for v in sorted(res.label):
        print(f"{v} {res.label[v]}")
    print("center node load size")
    sizes = res.sizes()
    for i, c in enumerate(res.centers):
        print(f"{i} {c} {res.load[i]:.6f} {sizes[i]}")
    if res.orphans:
        print(f"orphans: {len(res.orphans)} node(s) unreachable from every center: "
              f"{' '.join(map(str, res.orphans))}", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gvexplore", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    ex = sub.add_parser("explore", help="run exploration episodes and write metrics")
    ex.add_argument("--scenario", required=True, help="scenario file or built-in name (maze, office, octa, tunnel)")
    ex.add_argument("--seed", type=int, default=0)
    ex.add_argument("--robots", type=int, default=None, help="defaults to the scenario's robot count")
    ex.add_argument("--variant", choices=[v.value for v in Variant], default=Variant.FULL.value)
    ex.add_argument("--max-time", type=float, default=None, help="simulated seconds before giving up")
    ex.add_argument("--out", type=Path, default=Path("out"))
    ex.add_argument("--repeat", type=int, default=1, help="run seeds seed..seed+N-1")
    ex.add_argument("--config", type=Path, default=None, help="JSON object of parameter overrides")
    ex.add_argument("--multi-hop", action="store_true", help="relay messages across the radio component")
    ex.add_argument("--drop-prob", type=float, default=None, help="per-message drop probability")
    for name, typ, text in TUNABLES:
        ex.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None, help=text)
    ex.set_defaults(func=cmd_explore)

    pa = sub.add_parser("partition", help="weighted graph Voronoi partition of a graph file")
    pa.add_argument("graph", type=Path, help="graph snapshot (N/E lines)")
    pa.add_argument("--centers", required=True, help="comma-separated center node ids")
    pa.add_argument("--weights", default=None, help="matrix as 'a,b;c,d' or a file with one row per line")
    pa.add_argument("--metric", choices=[m.value for m in LoadMetric], default=LoadMetric.PLAIN.value)
    pa.add_argument("--balance", action="store_true", help="iterate weights until balanced")
    pa.add_argument("--b-lambda", type=float, default=10.0)
    pa.add_argument("--gamma", type=float, default=0.5)
    pa.add_argument("--max-iters", type=int, default=200)
    pa.set_defaults(func=cmd_partition)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "repeat", 1) < 1:
        print("error: --repeat must be at least 1", file=sys.stderr)
        return EXIT_PARSE
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
