"""Shortest routes on a RoadNetwork.

Routes minimise total ``length_m``. Among equal-length routes the one whose
node-id sequence is lexicographically smallest wins, so CLI output is stable.
"""

import heapq
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from roadgraph.graph import RoadNetwork, oriented_paths, polyline_length
from roadgraph.models import ParameterError, UnreachableError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Route:
    node_sequence: list[int]
    geometry: np.ndarray = field(repr=False)
    total_length_m: float

    @property
    def geometry_length_m(self) -> float:
        return polyline_length(self.geometry)


def nearest_node(g: RoadNetwork, p) -> int:
    """Node closest to geo point ``p``; ties go to the lowest id.

    Raises:
        ParameterError: if ``g`` has no nodes.
    """
    if g.n_nodes == 0:
        raise ParameterError("cannot find the nearest node of an empty graph")
    ids = g.node_ids()
    coords = np.array([g.geo_of(n) for n in ids], dtype=np.float64)
    d = np.hypot(coords[:, 0] - p[0], coords[:, 1] - p[1])
    return ids[int(np.flatnonzero(d == d.min())[0])]


def _best_edge(g: RoadNetwork, a: int, b: int) -> dict:
    edges = g.graph.get_edge_data(a, b)
    return min(edges.values(), key=lambda d: (d["length_m"], d["start"]))


def shortest_route(g: RoadNetwork, src: int, dst: int) -> Route:
    """Minimum-length route from ``src`` to ``dst``.

    Raises:
        ParameterError: if either node is missing.
        UnreachableError: if no path joins them.
    """
    graph = g.graph
    for node in (src, dst):
        if node not in graph:
            raise ParameterError(f"node {node} is not in the graph")
    if src == dst:
        return Route([src], np.array([g.geo_of(src)], dtype=np.float64), 0.0)

    # Labels are (distance, node-id path); tuple order gives the lexicographic tie-break.
    best: dict[int, tuple[float, tuple[int, ...]]] = {src: (0.0, (src,))}
    heap = [(0.0, (src,))]
    done = set()
    while heap:
        dist, path = heapq.heappop(heap)
        node = path[-1]
        if node in done:
            continue
        done.add(node)
        if node == dst:
            break
        for nbr, edges in graph.adj[node].items():
            if nbr in done:
                continue
            label = (dist + min(e["length_m"] for e in edges.values()), path + (nbr,))
            if nbr not in best or label < best[nbr]:
                best[nbr] = label
                heapq.heappush(heap, label)

    if dst not in done:
        raise UnreachableError(f"no route from node {src} to node {dst}")

    _, nodes = best[dst]
    pieces = []
    lengths = []
    for a, b in zip(nodes, nodes[1:]):
        data = _best_edge(g, a, b)
        _, geo = oriented_paths(data, a)
        pieces.append(geo if not pieces else geo[1:])
        lengths.append(data["length_m"])
    route = Route(list(nodes), np.vstack(pieces), math.fsum(lengths))
    logger.info("Route %d → %d: %d nodes, %.1f m", src, dst, len(nodes), route.total_length_m)
    return route
