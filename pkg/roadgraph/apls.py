"""APLS — Average Path Length Similarity between two road graphs.

Control nodes are sampled on the source graph and snapped into the target
graph. For every unordered control pair ``(a, b)`` joined by a path of length
``L`` in the source, the pair costs

    C = min(1, |L' − L| / L)

where ``L'`` is the shortest-path length between the snapped nodes in the
target; a pair with an unsnapped endpoint or no target path costs 1. The
directional score is ``1 − mean(C)``; the symmetric score averages the
ground-truth → proposal and proposal → ground-truth directions.
"""

import logging
import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import networkx as nx
import numpy as np
from scipy.spatial import cKDTree

from roadgraph.graph import EdgeRef, RoadNetwork, oriented_paths, split_edge
from roadgraph.models import AplsParams, AplsReport, MetricUndefinedError, ParameterError
from roadgraph.rng import Xorshift64Star

logger = logging.getLogger(__name__)

# Offsets this close to an edge end snap onto the existing end node.
_END_TOLERANCE_M = 1e-9

# ---------------------------------------------------------------------------
# Snapping
# ---------------------------------------------------------------------------


class SegmentIndex:
    """Nearest-point queries against every segment of a network's geo paths.

    Segments are stored in canonical edge order; a KD-tree over segment
    midpoints narrows each query to segments that can lie within the buffer.
    """

    def __init__(self, net: RoadNetwork) -> None:
        self.refs: list[EdgeRef] = []
        self.lengths: list[float] = []
        starts, ends, owner, base = [], [], [], []
        for i, (u, v, k, data) in enumerate(net.edges()):
            _, geo = oriented_paths(data, u)
            steps = np.hypot(*np.diff(geo, axis=0).T)
            starts.append(geo[:-1])
            ends.append(geo[1:])
            owner.append(np.full(len(steps), i, dtype=np.int64))
            base.append(np.concatenate([[0.0], np.cumsum(steps)[:-1]]))
            self.refs.append((u, v, k))
            self.lengths.append(data["length_m"])
        if not self.refs:
            self._tree = None
            return
        self._p0 = np.vstack(starts)
        self._p1 = np.vstack(ends)
        self._owner = np.concatenate(owner)
        self._base = np.concatenate(base)
        self._seg = self._p1 - self._p0
        self._seg_len2 = (self._seg * self._seg).sum(axis=1)
        self._seg_len = np.sqrt(self._seg_len2)
        self._reach = float(self._seg_len.max()) / 2.0
        self._tree = cKDTree((self._p0 + self._p1) / 2.0)

    def nearest(self, point, buffer_m: float) -> tuple[int, float, float] | None:
        """``(edge index, arc-length offset, distance)`` of the nearest point within ``buffer_m``.

        Ties go to the lowest edge index, then the smallest offset.
        """
        if self._tree is None:
            return None
        p = np.asarray(point, dtype=np.float64)
        cand = self._tree.query_ball_point(p, buffer_m + self._reach + 1e-9)
        if not cand:
            return None
        idx = np.array(sorted(cand), dtype=np.int64)
        a = self._p0[idx]
        ab = self._seg[idx]
        t = np.clip(((p - a) * ab).sum(axis=1) / self._seg_len2[idx], 0.0, 1.0)
        proj = a + t[:, None] * ab
        dist = np.hypot(p[0] - proj[:, 0], p[1] - proj[:, 1])
        offset = self._base[idx] + t * self._seg_len[idx]
        edge = self._owner[idx]
        best = np.lexsort((offset, edge, dist))[0]
        if dist[best] > buffer_m:
            return None
        return int(edge[best]), float(offset[best]), float(dist[best])


@dataclass(frozen=True)
class SnapResult:
    edge: EdgeRef
    offset_m: float
    node: int
    network: RoadNetwork


def snap_points(
    net: RoadNetwork, points: Sequence, buffer_m: float
) -> tuple[RoadNetwork, list[int | None]]:
    """Snap many geo points into ``net`` at once.

    Returns a copy of ``net`` with a node inserted at every snapped location
    that is not already an edge end, plus the node id per point (None when no
    geometry lies within ``buffer_m``). Points landing on the same location
    share a node.
    """
    if buffer_m <= 0:
        raise ParameterError(f"buffer_m must be > 0, got {buffer_m}")
    index = SegmentIndex(net)
    out = net.copy()
    result: list[int | None] = [None] * len(points)
    pending: dict[int, list[tuple[float, int]]] = defaultdict(list)
    for i, p in enumerate(points):
        hit = index.nearest(p, buffer_m)
        if hit is None:
            continue
        e, offset, _ = hit
        u, v, _ = index.refs[e]
        if offset <= _END_TOLERANCE_M:
            result[i] = u
        elif offset >= index.lengths[e] - _END_TOLERANCE_M:
            result[i] = v
        else:
            pending[e].append((offset, i))

    next_id = out.next_node_id()
    for e in sorted(pending):
        cuts: list[float] = []
        cut_of: dict[int, int] = {}
        for offset, i in sorted(pending[e]):
            if not cuts or offset - cuts[-1] > _END_TOLERANCE_M:
                cuts.append(offset)
            cut_of[i] = len(cuts) - 1
        ids = split_edge(out, index.refs[e], cuts, next_id)
        next_id += len(ids)
        for i, c in cut_of.items():
            result[i] = ids[c]
    return out, result


def snap_point(p, g: RoadNetwork, buffer_m: float) -> SnapResult | None:
    """Snap one geo point onto the nearest edge of ``g`` within ``buffer_m``.

    Returns the edge id, arc-length offset from its lower-id end, the node at
    the snapped location and the network holding it, or None.
    """
    index = SegmentIndex(g)
    hit = index.nearest(p, buffer_m)
    if hit is None:
        return None
    net, (node,) = snap_points(g, [p], buffer_m)
    e, offset, _ = hit
    return SnapResult(edge=index.refs[e], offset_m=offset, node=node, network=net)


# ---------------------------------------------------------------------------
# Control nodes and midpoints
# ---------------------------------------------------------------------------


def sample_control_nodes(g: RoadNetwork, n: int, seed: int) -> list[int]:
    """Draw ``min(n, |nodes|)`` distinct node ids uniformly with the seeded PRNG.

    Raises:
        ParameterError: if ``n < 2``.
        MetricUndefinedError: if ``g`` has fewer than two nodes.
    """
    if n < 2:
        raise ParameterError(f"n must be >= 2, got {n}")
    if g.n_nodes < 2:
        raise MetricUndefinedError(f"need at least 2 nodes to sample controls, got {g.n_nodes}")
    return sorted(Xorshift64Star(seed).sample(g.node_ids(), n))


def inject_midpoints(g: RoadNetwork) -> RoadNetwork:
    """Split every edge at its arc-length midpoint."""
    out = g.copy()
    next_id = out.next_node_id()
    for u, v, k, data in g.edges():
        split_edge(out, (u, v, k), [data["length_m"] / 2.0], next_id)
        next_id += 1
    logger.debug("Injected %d midpoints", g.n_edges)
    return out


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------


def path_length_contribution(l_gt: float, l_prop: float | None) -> float:
    """Cost of one control pair: ``min(1, |l_prop − l_gt| / l_gt)``, 1 when missing."""
    if l_prop is None:
        return 1.0
    if l_gt == 0.0:
        return 0.0 if l_prop == 0.0 else 1.0
    return min(1.0, abs(l_prop - l_gt) / l_gt)


@dataclass(frozen=True)
class DirectionalScore:
    score: float
    n_pairs: int
    n_unsnapped: int
    n_control: int


def _path_lengths(graph: nx.MultiGraph, sources: Sequence[int], threads: int) -> list[dict]:
    def run(source: int) -> dict:
        return nx.single_source_dijkstra_path_length(graph, source, weight="length_m")

    with ThreadPoolExecutor(max_workers=threads, thread_name_prefix="worker") as executor:
        return list(executor.map(run, sources))


def directional_score(
    src: RoadNetwork, dst: RoadNetwork, params: AplsParams, threads: int = 1
) -> DirectionalScore:
    """Score how well ``dst`` reproduces the control-pair path lengths of ``src``."""
    controls = sample_control_nodes(src, params.n_control, params.rng_seed)
    points = [src.geo_of(c) for c in controls]
    snapped_net, snapped = snap_points(dst, points, params.snap_buffer_m)

    src_lengths = _path_lengths(src.graph, controls, threads)
    targets = sorted({s for s in snapped if s is not None})
    dst_lengths = dict(zip(targets, _path_lengths(snapped_net.graph, targets, threads)))

    costs = []
    for i, a in enumerate(snapped):
        for j in range(i + 1, len(controls)):
            l_gt = src_lengths[i].get(controls[j])
            if l_gt is None:
                continue
            b = snapped[j]
            l_prop = None if a is None or b is None else dst_lengths[a].get(b)
            costs.append(path_length_contribution(l_gt, l_prop))

    n_unsnapped = sum(s is None for s in snapped)
    score = 1.0 - math.fsum(costs) / len(costs) if costs else 0.0
    logger.debug(
        "Directional APLS: %d controls, %d unsnapped, %d pairs, score %.4f",
        len(controls), n_unsnapped, len(costs), score,
    )
    return DirectionalScore(score, len(costs), n_unsnapped, len(controls))


def apls(
    gt: RoadNetwork,
    prop: RoadNetwork,
    params: AplsParams | None = None,
    threads: int = 1,
) -> AplsReport:
    """Compute APLS of ``prop`` against ``gt``.

    A ground truth made of a single node carrying loops is split at its
    edge midpoints (both graphs alike) before scoring.

    Raises:
        MetricUndefinedError: if ``gt`` has fewer than two nodes or no pair of
            its control nodes is connected.
    """
    params = params or AplsParams()
    # A lone loop has a single node; its midpoint gives it a second one.
    loop_only = gt.n_nodes == 1 and gt.n_edges > 0
    if params.inject_midpoints or loop_only:
        gt, prop = inject_midpoints(gt), inject_midpoints(prop)
    if gt.n_nodes < 2:
        raise MetricUndefinedError(f"APLS needs at least 2 ground-truth nodes, got {gt.n_nodes}")

    forward = directional_score(gt, prop, params, threads)
    if forward.n_pairs == 0:
        raise MetricUndefinedError("no connected control-node pair in the ground truth")

    reverse = None
    if params.symmetric:
        reverse = DirectionalScore(0.0, 0, 0, prop.n_nodes)
        if prop.n_nodes >= 2:
            reverse = directional_score(prop, gt, params, threads)
        score = (forward.score + reverse.score) / 2.0
    else:
        score = forward.score

    report = AplsReport(
        score=score,
        score_gt_to_prop=forward.score,
        score_prop_to_gt=reverse.score if reverse else None,
        n_pairs_evaluated=forward.n_pairs + (reverse.n_pairs if reverse else 0),
        n_nodes_unsnapped=forward.n_unsnapped + (reverse.n_unsnapped if reverse else 0),
        n_control_gt=forward.n_control,
        n_control_prop=reverse.n_control if reverse else 0,
        params=params,
    )
    logger.info(
        "APLS %.4f (gt→prop %.4f, prop→gt %s)",
        report.score,
        report.score_gt_to_prop,
        "n/a" if reverse is None else f"{reverse.score:.4f}",
    )
    return report
