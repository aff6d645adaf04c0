"""Multi-robot exploration with load-balanced weighted graph Voronoi partitions."""

from .partition import LoadMetric, PowerPointSet, graph_voronoi
from .balancer import BalanceConfig, balance
from .topo_graph import HybridTopoGraph, NodeKind, Certainty
from .world import OccupancyGrid, load_scenario
from .sim import ExploreParams, Variant, run_episode

__all__ = [
    "BalanceConfig",
    "Certainty",
    "ExploreParams",
    "HybridTopoGraph",
    "LoadMetric",
    "NodeKind",
    "OccupancyGrid",
    "PowerPointSet",
    "Variant",
    "balance",
    "graph_voronoi",
    "load_scenario",
    "run_episode",
]

__version__ = "0.1.0"
