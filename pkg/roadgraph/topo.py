"""TOPO — local reachability comparison of two road graphs.

Seeds are placed along the ground-truth edges. Around each seed both graphs
are explored up to ``radius_m`` of along-road distance and sampled every
``sample_spacing_m``; the sample sets are matched one-to-one, nearest pairs
first, within ``hole_size_m``. Matches count as true positives, leftover
proposal samples as false positives and leftover ground-truth samples as
false negatives.

Sample positions are fixed per edge (cell centres of ``ceil(L / spacing)``
equal cells), so identical geometry always yields identical samples.
"""

import heapq
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import shapely
from scipy.spatial import cKDTree

from roadgraph.apls import SegmentIndex
from roadgraph.graph import EdgeRef, RoadNetwork, oriented_paths
from roadgraph.models import MetricUndefinedError, TopoParams, TopoReport
from roadgraph.rng import Xorshift64Star

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class _EdgeSamples:
    ref: EdgeRef
    length: float
    offsets: np.ndarray
    points: np.ndarray


def _cell_offsets(length: float, spacing: float) -> np.ndarray:
    n = max(1, math.ceil(length / spacing))
    return (np.arange(n, dtype=np.float64) + 0.5) * (length / n)


class _SampledNetwork:
    """A network with per-edge sample points and a snapping index."""

    def __init__(self, net: RoadNetwork, spacing: float) -> None:
        self.net = net
        self.index = SegmentIndex(net)
        self.edges: list[_EdgeSamples] = []
        for u, v, k, data in net.edges():
            _, geo = oriented_paths(data, u)
            line = shapely.LineString(geo)
            offsets = _cell_offsets(data["length_m"], spacing)
            points = shapely.get_coordinates(shapely.line_interpolate_point(line, offsets))
            self.edges.append(_EdgeSamples((u, v, k), data["length_m"], offsets, points))
        self.position = {e.ref: i for i, e in enumerate(self.edges)}

    def distances_from(self, ref: EdgeRef, offset: float, radius: float) -> dict[int, float]:
        """Along-road distance to every node within ``radius`` of a point on edge ``ref``."""
        graph = self.net.graph
        u, v, _ = ref
        length = self.edges[self.position[ref]].length
        dist: dict[int, float] = {}
        heap = [(offset, u), (length - offset, v)]
        heapq.heapify(heap)
        while heap:
            d, node = heapq.heappop(heap)
            if node in dist or d > radius:
                continue
            dist[node] = d
            for nbr, edges in graph.adj[node].items():
                if nbr in dist:
                    continue
                step = min(e["length_m"] for e in edges.values())
                if d + step <= radius:
                    heapq.heappush(heap, (d + step, nbr))
        return dist

    def reachable_samples(self, ref: EdgeRef, offset: float, radius: float) -> np.ndarray:
        """Sample points whose along-road distance from the start is ≤ ``radius``."""
        dist = self.distances_from(ref, offset, radius)
        chunks = []
        for edge in self.edges:
            u, v, _ = edge.ref
            du = dist.get(u, math.inf)
            dv = dist.get(v, math.inf)
            reach = np.minimum(du + edge.offsets, dv + (edge.length - edge.offsets))
            if edge.ref == ref:
                reach = np.minimum(reach, np.abs(edge.offsets - offset))
            elif min(du, dv) > radius:
                continue
            keep = reach <= radius
            if keep.any():
                chunks.append(edge.points[keep])
        if not chunks:
            return np.empty((0, 2))
        return np.vstack(chunks)


def match_samples(gt: np.ndarray, prop: np.ndarray, hole_m: float) -> int:
    """Greedy one-to-one matching by ascending distance; returns the match count.

    Ties are broken by ground-truth index, then proposal index.
    """
    if len(gt) == 0 or len(prop) == 0:
        return 0
    pairs = cKDTree(gt).sparse_distance_matrix(cKDTree(prop), hole_m, output_type="ndarray")
    if len(pairs) == 0:
        return 0
    order = np.lexsort((pairs["j"], pairs["i"], pairs["v"]))
    used_gt = np.zeros(len(gt), dtype=bool)
    used_prop = np.zeros(len(prop), dtype=bool)
    matched = 0
    for i, j, d in zip(pairs["i"][order], pairs["j"][order], pairs["v"][order]):
        if d > hole_m or used_gt[i] or used_prop[j]:
            continue
        used_gt[i] = used_prop[j] = True
        matched += 1
    return matched


def seed_locations(gt: RoadNetwork, spacing_m: float) -> list[tuple[EdgeRef, float, np.ndarray]]:
    """Seeds at the cell centres of each ground-truth edge, in canonical edge order."""
    seeds = []
    for u, v, k, data in gt.edges():
        _, geo = oriented_paths(data, u)
        line = shapely.LineString(geo)
        offsets = _cell_offsets(data["length_m"], spacing_m)
        points = shapely.get_coordinates(shapely.line_interpolate_point(line, offsets))
        seeds.extend(((u, v, k), float(o), p) for o, p in zip(offsets, points))
    return seeds


def topo(
    gt: RoadNetwork,
    prop: RoadNetwork,
    params: TopoParams | None = None,
    threads: int = 1,
) -> TopoReport:
    """Compute TOPO precision / recall / F1 of ``prop`` against ``gt``.

    Raises:
        MetricUndefinedError: if ``gt`` has no edges.
    """
    params = params or TopoParams()
    if gt.n_edges == 0:
        raise MetricUndefinedError("TOPO needs a ground-truth graph with at least one edge")

    gt_s = _SampledNetwork(gt, params.sample_spacing_m)
    prop_s = _SampledNetwork(prop, params.sample_spacing_m)
    seeds = seed_locations(gt, params.seed_spacing_m)
    if params.max_seeds is not None and len(seeds) > params.max_seeds:
        chosen = Xorshift64Star(params.rng_seed).sample(range(len(seeds)), params.max_seeds)
        seeds = [seeds[i] for i in sorted(chosen)]

    def score_seed(seed) -> tuple[int, int, int]:
        ref, offset, point = seed
        gt_samples = gt_s.reachable_samples(ref, offset, params.radius_m)
        hit = prop_s.index.nearest(point, params.hole_size_m)
        if hit is None:
            return 0, 0, len(gt_samples)
        e, prop_offset, _ = hit
        prop_samples = prop_s.reachable_samples(prop_s.index.refs[e], prop_offset, params.radius_m)
        tp = match_samples(gt_samples, prop_samples, params.hole_size_m)
        return tp, len(prop_samples) - tp, len(gt_samples) - tp

    with ThreadPoolExecutor(max_workers=threads, thread_name_prefix="worker") as executor:
        counts = list(executor.map(score_seed, seeds))

    tp = sum(c[0] for c in counts)
    fp = sum(c[1] for c in counts)
    fn = sum(c[2] for c in counts)
    report = TopoReport.from_counts(tp, fp, fn, n_seeds=len(seeds), params=params)
    logger.info(
        "TOPO f1 %.4f (precision %.4f, recall %.4f, %d seeds)",
        report.f1, report.precision, report.recall, len(seeds),
    )
    return report
