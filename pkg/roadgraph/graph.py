"""Spatial road graphs: skeleton → graph extraction and refinement.

A ``RoadNetwork`` wraps an undirected ``networkx.MultiGraph`` plus the
``GeoTransform`` that registers its pixel coordinates. Node attributes:

    pixel   (row, col) floats of the node's representative pixel
    geo     (x, y) floats, ``transform.pixel_to_geo`` of ``pixel``
    members (row, col) skeleton pixels the node stands for (skeleton extraction only)

Edge attributes:

    path       (N, 2) float array of (row, col) points, from ``start`` to the other end
    geo_path   (N, 2) float array of (x, y) points, same orientation
    length_px  Σ Euclidean steps along ``path``
    length_m   Σ Euclidean steps along ``geo_path``
    start      node id at which both paths begin

Edges are identified by ``(u, v, key)`` with ``u <= v``; sorting those
triples gives the canonical edge order used for every tie-break.

Networks are treated as immutable: every operation copies before editing.
"""

import logging
import math
from collections import Counter, deque
from dataclasses import dataclass

import networkx as nx
import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from roadgraph.models import GeoTransform, PreconditionError, RefineParams
from roadgraph.raster import NEIGHBOUR_OFFSETS, RasterGrid, VectorRoadSet, require_binary

logger = logging.getLogger(__name__)

EdgeRef = tuple[int, int, int]
"""Canonical edge identifier ``(u, v, key)`` with ``u <= v``."""

# ---------------------------------------------------------------------------
# Polyline helpers
# ---------------------------------------------------------------------------


def polyline_length(points: np.ndarray) -> float:
    """Sum of Euclidean step lengths of an ``(N, 2)`` polyline."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) < 2:
        return 0.0
    steps = np.diff(points, axis=0)
    return math.fsum(np.hypot(steps[:, 0], steps[:, 1]).tolist())


def cut_polyline(points: np.ndarray, distance: float) -> tuple[np.ndarray, np.ndarray]:
    """Split a polyline at arc length ``distance`` (strictly inside the line).

    Returns the two pieces; the cut point is the last point of the first and
    the first point of the second.
    """
    points = np.asarray(points, dtype=np.float64)
    steps = np.hypot(*np.diff(points, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(steps)])
    idx = int(np.searchsorted(cum, distance, side="right")) - 1
    idx = min(max(idx, 0), len(steps) - 1)
    if cum[idx] == distance and idx > 0:
        # Cut falls exactly on an interior vertex.
        return points[: idx + 1].copy(), points[idx:].copy()
    frac = (distance - cum[idx]) / steps[idx]
    cut = points[idx] + frac * (points[idx + 1] - points[idx])
    first = np.vstack([points[: idx + 1], cut])
    second = np.vstack([cut, points[idx + 1 :]])
    if (second[0] == second[1]).all():
        second = second[1:]
        first[-1] = second[0]
    return first, second


# ---------------------------------------------------------------------------
# RoadNetwork
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RoadNetwork:
    """Geo-registered undirected road multigraph (see module docstring)."""

    graph: nx.MultiGraph
    transform: GeoTransform

    @classmethod
    def empty(cls, transform: GeoTransform | None = None) -> "RoadNetwork":
        return cls(nx.MultiGraph(), transform or GeoTransform.identity())

    @property
    def n_nodes(self) -> int:
        return self.graph.number_of_nodes()

    @property
    def n_edges(self) -> int:
        return self.graph.number_of_edges()

    def node_ids(self) -> list[int]:
        return sorted(self.graph.nodes)

    def geo_of(self, node: int) -> tuple[float, float]:
        return self.graph.nodes[node]["geo"]

    def pixel_of(self, node: int) -> tuple[float, float]:
        return self.graph.nodes[node]["pixel"]

    def edges(self) -> list[tuple[int, int, int, dict]]:
        """All edges as ``(u, v, key, data)`` with ``u <= v``, in canonical order."""
        out = []
        for u, v, k, d in self.graph.edges(keys=True, data=True):
            if u > v:
                u, v = v, u
            out.append((u, v, k, d))
        out.sort(key=lambda e: (e[0], e[1], e[2]))
        return out

    def edge_data(self, ref: EdgeRef) -> dict:
        u, v, k = ref
        return self.graph.edges[u, v, k]

    def total_length_m(self) -> float:
        return math.fsum(d["length_m"] for _, _, d in self.graph.edges(data=True))

    def degree_multiset(self) -> list[int]:
        return sorted(d for _, d in self.graph.degree())

    def next_node_id(self) -> int:
        return max(self.graph.nodes, default=-1) + 1

    def copy(self) -> "RoadNetwork":
        return RoadNetwork(self.graph.copy(), self.transform)


def oriented_paths(data: dict, from_node: int) -> tuple[np.ndarray, np.ndarray]:
    """``(path, geo_path)`` of an edge, reversed if needed to begin at ``from_node``."""
    if data["start"] == from_node:
        return data["path"], data["geo_path"]
    return data["path"][::-1], data["geo_path"][::-1]


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64).reshape(-1, 2)
    arr.flags.writeable = False
    return arr


def add_node(graph: nx.MultiGraph, node: int, pixel, transform: GeoTransform) -> None:
    row, col = float(pixel[0]), float(pixel[1])
    x, y = transform.pixel_to_geo(col, row)
    graph.add_node(node, pixel=(row, col), geo=(float(x), float(y)))


def add_node_geo(
    graph: nx.MultiGraph, node: int, geo, transform: GeoTransform, pixel_decimals: int | None = None
) -> None:
    """Add a node at ``geo``; its pixel position is derived, optionally rounded."""
    x, y = float(geo[0]), float(geo[1])
    col, row = transform.geo_to_pixel(x, y)
    if pixel_decimals is not None:
        row, col = round(float(row), pixel_decimals), round(float(col), pixel_decimals)
    graph.add_node(node, pixel=(float(row), float(col)), geo=(x, y))


def add_edge_from_pixels(
    graph: nx.MultiGraph, u: int, v: int, path: np.ndarray, transform: GeoTransform
) -> int:
    """Add an edge whose pixel ``path`` runs from ``u`` to ``v``; returns the key."""
    path = _freeze(path)
    return _add_edge(graph, u, v, path, _freeze(transform.pixel_path_to_geo(path)))


def add_edge_from_geo(
    graph: nx.MultiGraph,
    u: int,
    v: int,
    geo_path: np.ndarray,
    transform: GeoTransform,
    length_px: float | None = None,
    pixel_decimals: int | None = None,
) -> int:
    """Add an edge whose ``geo_path`` runs from ``u`` to ``v``; returns the key.

    ``pixel_decimals`` rounds the derived pixel path, which recovers exact
    pixel centres from geo coordinates that went through a transform.
    """
    geo_path = _freeze(geo_path)
    path = transform.geo_path_to_pixel(geo_path)
    if pixel_decimals is not None:
        path = np.round(path, pixel_decimals)
    path = _freeze(path)
    return _add_edge(graph, u, v, path, geo_path, length_px=length_px)


def _add_edge(
    graph: nx.MultiGraph,
    u: int,
    v: int,
    path: np.ndarray,
    geo_path: np.ndarray,
    length_px: float | None = None,
) -> int:
    if u > v:
        u, v = v, u
        path, geo_path = path[::-1], geo_path[::-1]
    return graph.add_edge(
        u,
        v,
        path=path,
        geo_path=geo_path,
        length_px=polyline_length(path) if length_px is None else float(length_px),
        length_m=polyline_length(geo_path),
        start=u,
    )


def check_invariants(net: RoadNetwork, tol: float = 1e-6) -> list[str]:
    """Return human-readable violations of the RoadNetwork invariants (empty if valid)."""
    problems = []
    g = net.graph
    for u, v, k, d in net.edges():
        if u not in g or v not in g:
            problems.append(f"edge {(u, v, k)} references a missing node")
            continue
        path, _ = oriented_paths(d, u)
        if not np.allclose(path[0], g.nodes[u]["pixel"], atol=tol) or not np.allclose(
            path[-1], g.nodes[v]["pixel"], atol=tol
        ):
            problems.append(f"edge {(u, v, k)} path does not join its endpoints")
        if not math.isclose(d["length_px"], polyline_length(d["path"]), rel_tol=tol, abs_tol=tol):
            problems.append(f"edge {(u, v, k)} length_px mismatch")
        if not math.isclose(d["length_m"], polyline_length(d["geo_path"]), rel_tol=tol, abs_tol=tol):
            problems.append(f"edge {(u, v, k)} length_m mismatch")
        if d["length_m"] <= 0.0:
            problems.append(f"edge {(u, v, k)} has zero length")
    return problems


# ---------------------------------------------------------------------------
# Skeleton → graph
# ---------------------------------------------------------------------------

_NEIGHBOUR_KERNEL = np.array([[1, 1, 1], [1, 0, 1], [1, 1, 1]], dtype=np.uint8)


def _check_thin(sk: np.ndarray) -> None:
    blocks = sk[:-1, :-1] & sk[1:, :-1] & sk[:-1, 1:] & sk[1:, 1:]
    if blocks.any():
        row, col = (int(v) for v in np.argwhere(blocks)[0])
        raise PreconditionError(
            f"skeleton is not thin: 2x2 foreground block at pixel ({row}, {col})",
            pixel=(row, col),
        )


def _junction_clusters(junction: np.ndarray) -> list[list[tuple[int, int]]]:
    labels, n = ndimage.label(junction, structure=np.ones((3, 3), dtype=bool))
    if n == 0:
        return []
    rows, cols = np.nonzero(labels)
    lab = labels[rows, cols]
    order = np.argsort(lab, kind="stable")
    rows, cols, lab = rows[order], cols[order], lab[order]
    bounds = np.flatnonzero(np.diff(lab)) + 1
    return [
        list(zip(r.tolist(), c.tolist()))
        for r, c in zip(np.split(rows, bounds), np.split(cols, bounds))
    ]


def _representative(members: list[tuple[int, int]]) -> tuple[int, int]:
    """Member pixel nearest the cluster centroid; ties go to the lowest (row, col)."""
    pts = np.array(sorted(members), dtype=np.float64)
    centroid = pts.mean(axis=0)
    d2 = ((pts - centroid) ** 2).sum(axis=1)
    r, c = pts[int(np.argmin(d2))]
    return int(r), int(c)


def _cluster_routes(
    rep: tuple[int, int], members: list[tuple[int, int]]
) -> dict[tuple[int, int], list[tuple[int, int]]]:
    """Shortest 8-connected pixel route from the representative to every member."""
    member_set = set(members)
    routes = {rep: [rep]}
    queue = deque([rep])
    while queue:
        p = queue.popleft()
        for dr, dc in NEIGHBOUR_OFFSETS:
            q = (p[0] + dr, p[1] + dc)
            if q in member_set and q not in routes:
                routes[q] = routes[p] + [q]
                queue.append(q)
    return routes


def skeleton_to_graph(
    skeleton: RasterGrid, transform: GeoTransform | None = None
) -> RoadNetwork:
    """Convert a thin skeleton raster into a RoadNetwork.

    Nodes sit at skeleton pixels whose 8-neighbour count is not 2: endpoints
    (≤ 1 neighbour) and junctions (≥ 3, 8-adjacent junction pixels merged
    into one node at the member nearest their centroid). Edges are the
    maximal pixel chains between nodes. A cycle with no node becomes one node
    at its lowest ``(row, col)`` pixel carrying a self-loop. Node ids follow
    ascending ``(row, col)`` of the representative pixel.

    Edge paths leave and enter a junction cluster along a shortest route
    through its member pixels, so consecutive path pixels are always
    8-adjacent. Each node records its cluster in a ``members`` attribute;
    edge paths plus node members cover the skeleton exactly.

    Raises:
        PreconditionError: if the input contains a 2×2 foreground block.
    """
    require_binary(skeleton, "skeleton_to_graph")
    transform = transform or skeleton.transform
    sk = skeleton.values.astype(bool)
    _check_thin(sk)

    fg = np.pad(sk, 1)
    counts = ndimage.convolve(fg.astype(np.uint8), _NEIGHBOUR_KERNEL, mode="constant")

    # Temporary node records: (representative pixel, member pixels), padded coords.
    nodes: list[tuple[tuple[int, int], list[tuple[int, int]]]] = []
    for members in _junction_clusters(fg & (counts >= 3)):
        nodes.append((_representative(members), members))
    for r, c in zip(*np.nonzero(fg & (counts <= 1))):
        p = (int(r), int(c))
        nodes.append((p, [p]))
    owner = {p: idx for idx, (_, members) in enumerate(nodes) for p in members}
    routes = [_cluster_routes(rep, members) for rep, members in nodes]

    visited: set[tuple[int, int]] = set()
    raw_edges: list[tuple[int, int, list[tuple[int, int]]]] = []
    direct_pairs: set[tuple[int, int]] = set()

    def neighbours(p):
        for dr, dc in NEIGHBOUR_OFFSETS:
            q = (p[0] + dr, p[1] + dc)
            if fg[q]:
                yield q

    def close_path(path, last, end_idx):
        path.extend(reversed(routes[end_idx][last]))
        return path

    for idx, (rep, members) in enumerate(nodes):
        member_set = set(members)
        for m in members:
            for q in neighbours(m):
                if q in member_set:
                    continue
                head = list(routes[idx][m])
                other = owner.get(q)
                if other is not None:
                    pair = (min(idx, other), max(idx, other))
                    if pair in direct_pairs:
                        continue
                    direct_pairs.add(pair)
                    raw_edges.append((idx, other, close_path(head, q, other)))
                    continue
                if q in visited:
                    continue
                path, prev, cur = head, m, q
                while True:
                    end = owner.get(cur)
                    if end is not None:
                        raw_edges.append((idx, end, close_path(path, cur, end)))
                        break
                    visited.add(cur)
                    path.append(cur)
                    nxt = next(
                        (n for n in neighbours(cur) if n != prev and n not in visited), None
                    )
                    if nxt is None:
                        raise PreconditionError(
                            f"skeleton chain does not terminate at pixel "
                            f"({cur[0] - 1}, {cur[1] - 1})",
                            pixel=(cur[0] - 1, cur[1] - 1),
                        )
                    prev, cur = cur, nxt

    # Whatever chain pixels remain belong to node-free cycles.
    for r, c in zip(*np.nonzero(fg & (counts == 2))):
        start = (int(r), int(c))
        if start in visited:
            continue
        visited.add(start)
        idx = len(nodes)
        nodes.append((start, [start]))
        path, prev = [start], start
        cur = next(neighbours(start))
        while cur != start:
            visited.add(cur)
            path.append(cur)
            prev, cur = cur, next(n for n in neighbours(cur) if n != prev)
        path.append(start)
        raw_edges.append((idx, idx, path))

    order = sorted(range(len(nodes)), key=lambda i: nodes[i][0])
    new_id = {old: new for new, old in enumerate(order)}
    graph = nx.MultiGraph()
    for old in order:
        r, c = nodes[old][0]
        add_node(graph, new_id[old], (r - 1, c - 1), transform)
        members = sorted((mr - 1, mc - 1) for mr, mc in nodes[old][1])
        graph.nodes[new_id[old]]["members"] = tuple(members)
    for a, b, path in sorted(
        raw_edges, key=lambda e: (min(new_id[e[0]], new_id[e[1]]), max(new_id[e[0]], new_id[e[1]]), e[2])
    ):
        pts = np.array(path, dtype=np.float64) - 1.0
        add_edge_from_pixels(graph, new_id[a], new_id[b], pts, transform)

    net = RoadNetwork(graph, transform)
    logger.info("Extracted graph: %d nodes, %d edges", net.n_nodes, net.n_edges)
    return net


# ---------------------------------------------------------------------------
# Refinement
# ---------------------------------------------------------------------------


def remove_small_subgraphs(g: RoadNetwork, min_subgraph_m: float) -> RoadNetwork:
    """Delete connected components whose total edge length is < ``min_subgraph_m``."""
    out = g.copy()
    doomed = []
    for comp in nx.connected_components(out.graph):
        total = math.fsum(d for _, _, d in out.graph.edges(comp, data="length_m"))
        if total < min_subgraph_m:
            doomed.extend(comp)
    out.graph.remove_nodes_from(doomed)
    logger.debug("remove_small_subgraphs: dropped %d nodes", len(doomed))
    return out


def dissolve_node(graph: nx.MultiGraph, node: int) -> bool:
    """Merge the two edges of a degree-2 node into one and drop the node.

    Self-loops are left alone. Returns whether the node was dissolved.
    """
    if graph.degree(node) != 2 or graph.has_edge(node, node):
        return False
    (_, a, _, da), (_, b, _, db) = sorted(
        graph.edges(node, keys=True, data=True), key=lambda e: (e[1], e[2])
    )
    path_a, geo_a = oriented_paths(da, a)
    path_b, geo_b = oriented_paths(db, node)
    merged = np.concatenate([path_a, path_b[1:]])
    merged_geo = np.concatenate([geo_a, geo_b[1:]])
    graph.remove_node(node)
    _add_edge(graph, a, b, _freeze(merged), _freeze(merged_geo))
    return True


def prune_short_spurs(
    g: RoadNetwork, max_spur_px: float, fixed_point: bool = True
) -> RoadNetwork:
    """Remove degree-1 nodes whose only edge is shorter than ``max_spur_px``.

    Each sweep removes every qualifying terminal of the graph as it stood at
    the start of the sweep; sweeps repeat until nothing changes unless
    ``fixed_point`` is False. A neighbour left with degree 2 by a sweep is
    dissolved into one pass-through edge.
    """
    out = g.copy()
    graph = out.graph
    total = dissolved = 0
    while True:
        doomed = []
        for node in sorted(graph.nodes):
            if graph.degree(node) != 1:
                continue
            (_, _, length), = graph.edges(node, data="length_px")
            if length < max_spur_px:
                doomed.append(node)
        touched = {n for d in doomed for n in graph.neighbors(d)} - set(doomed)
        graph.remove_nodes_from(doomed)
        dissolved += sum(dissolve_node(graph, n) for n in sorted(touched))
        total += len(doomed)
        if not doomed or not fixed_point:
            break
    logger.debug(
        "prune_short_spurs: removed %d terminals, dissolved %d pass-through nodes",
        total, dissolved,
    )
    return out


def connect_terminals(g: RoadNetwork, max_gap_px: float, passes: int = 1) -> RoadNetwork:
    """Bridge each terminal to its nearest non-adjacent node closer than ``max_gap_px``.

    Terminals are visited in ascending id; candidate ties go to the lowest
    id. A terminal that already gained an edge in the current pass neither
    initiates nor receives another one.
    """
    out = g.copy()
    graph = out.graph
    added = 0
    for _ in range(passes):
        ids = sorted(graph.nodes)
        if len(ids) < 2:
            break
        coords = np.array([graph.nodes[n]["pixel"] for n in ids], dtype=np.float64)
        tree = cKDTree(coords)
        terminals = [n for n in ids if graph.degree(n) == 1]
        terminal_set = set(terminals)
        gained: set[int] = set()
        pass_added = 0
        for t in terminals:
            if t in gained:
                continue
            p = np.array(graph.nodes[t]["pixel"])
            best = None
            for j in tree.query_ball_point(p, r=max_gap_px):
                n = ids[j]
                if n == t or graph.has_edge(t, n) or (n in terminal_set and n in gained):
                    continue
                dist = float(np.hypot(*(coords[j] - p)))
                if dist < max_gap_px and (best is None or (dist, n) < best):
                    best = (dist, n)
            if best is None:
                continue
            n = best[1]
            path = np.array([graph.nodes[t]["pixel"], graph.nodes[n]["pixel"]])
            add_edge_from_pixels(graph, t, n, path, out.transform)
            gained.update((t, n))
            pass_added += 1
        added += pass_added
        if pass_added == 0:
            break
    logger.debug("connect_terminals: added %d edges", added)
    return out


def refine(g: RoadNetwork, p: RefineParams | None = None) -> RoadNetwork:
    """Apply spur pruning, gap closing and small-subgraph removal in ``p.order``."""
    p = p or RefineParams()
    out = g
    for step in p.order:
        if step == "spurs":
            out = prune_short_spurs(out, p.max_spur_px, fixed_point=p.spur_fixed_point)
        elif step == "gaps":
            out = connect_terminals(out, p.max_gap_px, passes=p.gap_passes)
        else:
            out = remove_small_subgraphs(out, p.min_subgraph_m)
    logger.info(
        "Refined graph: %d nodes, %d edges (from %d, %d)",
        out.n_nodes, out.n_edges, g.n_nodes, g.n_edges,
    )
    return out


# ---------------------------------------------------------------------------
# Vector labels → graph
# ---------------------------------------------------------------------------


def roads_to_network(labels: VectorRoadSet, transform: GeoTransform) -> RoadNetwork:
    """Build a RoadNetwork from centerlines.

    Nodes are placed at polyline endpoints and at vertices shared by more
    than one polyline (or repeated within one); polylines are split at those
    vertices. A closed polyline yields one node with a self-loop. Node ids
    follow raster order of the node location (descending y, then x).
    """
    seen = Counter()
    for line in labels.lines:
        seen.update(map(tuple, line.tolist()))
    node_pts = {pt for pt, n in seen.items() if n > 1}
    for line in labels.lines:
        node_pts.add(tuple(line[0].tolist()))
        node_pts.add(tuple(line[-1].tolist()))

    ids = {pt: i for i, pt in enumerate(sorted(node_pts, key=lambda p: (-p[1], p[0])))}
    graph = nx.MultiGraph()
    for pt, i in sorted(ids.items(), key=lambda kv: kv[1]):
        add_node_geo(graph, i, pt, transform)

    for line in labels.lines:
        pts = [tuple(p) for p in line.tolist()]
        start = 0
        for i in range(1, len(pts)):
            if pts[i] in ids:
                add_edge_from_geo(graph, ids[pts[start]], ids[pts[i]], line[start : i + 1], transform)
                start = i
    return RoadNetwork(graph, transform)


# ---------------------------------------------------------------------------
# Edge splitting (shared by snapping, midpoint injection and TOPO)
# ---------------------------------------------------------------------------


def split_edge(
    net: RoadNetwork, ref: EdgeRef, offsets_m: list[float], first_id: int
) -> list[int]:
    """Split edge ``ref`` in place at increasing arc-length offsets from ``ref[0]``.

    Offsets must lie strictly inside the edge. New nodes get consecutive ids
    from ``first_id``; their ids are returned in offset order. Callers own
    ``net`` (normally a copy).
    """
    graph = net.graph
    u, v, key = ref
    data = graph.edges[u, v, key]
    _, geo = oriented_paths(data, u)
    graph.remove_edge(u, v, key)

    new_ids = []
    prev_node, prev_offset, rest = u, 0.0, np.array(geo)
    for i, offset in enumerate(offsets_m):
        first, rest = cut_polyline(rest, offset - prev_offset)
        node = first_id + i
        add_node_geo(graph, node, first[-1], net.transform)
        add_edge_from_geo(graph, prev_node, node, first, net.transform)
        new_ids.append(node)
        prev_node, prev_offset = node, offset
    add_edge_from_geo(graph, prev_node, v, rest, net.transform)
    return new_ids
