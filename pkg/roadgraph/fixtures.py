"""Synthetic road scenes with analytically known graphs.

Every fixture is a mutually consistent triple: vector centerlines, their
rasterization, and the ground-truth RoadNetwork built from the vectors.

    grid_city     n horizontal × n vertical streets crossing edge to edge;
                  n² junctions + 4n street ends, 2n(n+1) edges
    ring          one closed circular road: one node carrying a self-loop
    spur_forest   a straight main road with perpendicular dead-end spurs
    random_tree   a seeded random tree of straight branches kept
                  ``clearance_m`` apart
"""

import logging
import math
from typing import Literal, NamedTuple

import numpy as np
import shapely
from pydantic import BaseModel, ConfigDict, Field

from roadgraph.graph import RoadNetwork, roads_to_network
from roadgraph.models import GeoTransform, ParameterError
from roadgraph.raster import RasterGrid, VectorRoadSet, rasterize_centerlines
from roadgraph.rng import Xorshift64Star

logger = logging.getLogger(__name__)

FixtureKind = Literal["grid_city", "ring", "spur_forest", "random_tree"]
FIXTURE_KINDS: tuple[str, ...] = ("grid_city", "ring", "spur_forest", "random_tree")


class FixtureParams(BaseModel):
    """Geometry knobs for every fixture kind (unused fields are ignored)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    pixel_size_m: float = Field(default=0.3, gt=0.0)
    halfwidth_m: float = Field(default=2.0, gt=0.0)
    margin_m: float = Field(default=50.0, ge=0.0)
    # grid_city
    n_streets: int = Field(default=3, ge=1)
    street_spacing_m: float = Field(default=100.0, gt=0.0)
    # ring
    ring_radius_m: float = Field(default=100.0, gt=0.0)
    ring_vertices: int = Field(default=360, ge=3)
    # spur_forest
    road_length_m: float = Field(default=300.0, gt=0.0)
    n_spurs: int = Field(default=4, ge=0)
    spur_length_m: float = Field(default=30.0, gt=0.0)
    # random_tree
    extent_m: float = Field(default=400.0, gt=0.0)
    n_branches: int = Field(default=12, ge=1)
    branch_min_m: float = Field(default=40.0, gt=0.0)
    branch_max_m: float = Field(default=80.0, gt=0.0)
    clearance_m: float = Field(default=10.0, ge=0.0)


class Fixture(NamedTuple):
    mask: RasterGrid
    roads: VectorRoadSet
    graph: RoadNetwork


# ---------------------------------------------------------------------------
# Geometry builders (return polylines + square extent in metres)
# ---------------------------------------------------------------------------


def _grid_city(p: FixtureParams, rng: Xorshift64Star) -> tuple[list[np.ndarray], float]:
    extent = 2 * p.margin_m + (p.n_streets - 1) * p.street_spacing_m
    stops = [p.margin_m + i * p.street_spacing_m for i in range(p.n_streets)]
    along = [0.0, *stops, extent]
    lines = []
    for s in stops:
        lines.append(np.array([(s, t) for t in along]))
        lines.append(np.array([(t, s) for t in along]))
    return lines, extent


def _ring(p: FixtureParams, rng: Xorshift64Star) -> tuple[list[np.ndarray], float]:
    centre = p.margin_m + p.ring_radius_m
    angles = 2.0 * math.pi * np.arange(p.ring_vertices) / p.ring_vertices
    pts = np.column_stack(
        [centre + p.ring_radius_m * np.cos(angles), centre + p.ring_radius_m * np.sin(angles)]
    )
    return [np.vstack([pts, pts[:1]])], 2.0 * centre


def _spur_forest(p: FixtureParams, rng: Xorshift64Star) -> tuple[list[np.ndarray], float]:
    extent = p.road_length_m + 2.0 * p.margin_m
    y = extent / 2.0
    x0, x1 = p.margin_m, p.margin_m + p.road_length_m
    attach = [x0 + (i + 1) * p.road_length_m / (p.n_spurs + 1) for i in range(p.n_spurs)]
    lines = [np.array([(x0, y), *((x, y) for x in attach), (x1, y)])]
    for i, x in enumerate(attach):
        direction = 1.0 if i % 2 == 0 else -1.0
        lines.append(np.array([(x, y), (x, y + direction * p.spur_length_m)]))
    return lines, max(extent, 2.0 * (p.spur_length_m + p.margin_m))


def _random_tree(p: FixtureParams, rng: Xorshift64Star) -> tuple[list[np.ndarray], float]:
    if p.branch_max_m < p.branch_min_m:
        raise ParameterError("branch_max_m must be >= branch_min_m")
    lo, hi = p.margin_m, p.extent_m - p.margin_m
    nodes = [(p.extent_m / 2.0, p.extent_m / 2.0)]
    segments: list[tuple[int, int]] = []
    attempts = 0
    while len(segments) < p.n_branches and attempts < 200 * p.n_branches:
        attempts += 1
        parent = rng.below(len(nodes))
        angle = rng.uniform(0.0, 2.0 * math.pi)
        length = rng.uniform(p.branch_min_m, p.branch_max_m)
        px, py = nodes[parent]
        tip = (px + length * math.cos(angle), py + length * math.sin(angle))
        if not (lo <= tip[0] <= hi and lo <= tip[1] <= hi):
            continue
        if _too_close(nodes, segments, parent, tip, p.clearance_m):
            continue
        nodes.append(tip)
        segments.append((parent, len(nodes) - 1))
    if len(segments) < p.n_branches:
        logger.warning("random_tree placed %d of %d branches", len(segments), p.n_branches)
    return [np.array([nodes[a], nodes[b]]) for a, b in segments], p.extent_m


def _too_close(nodes, segments, parent: int, tip, clearance: float) -> bool:
    if not segments:
        return False
    tip_pt = shapely.Point(tip)
    branch = shapely.LineString([nodes[parent], tip])
    lines = shapely.linestrings([[nodes[a], nodes[b]] for a, b in segments])
    touches_parent = np.array([parent in seg for seg in segments])
    # The new tip must keep clear of everything; the branch body only of
    # segments that do not share its parent node.
    if (shapely.distance(tip_pt, lines) < clearance).any():
        return True
    return bool((shapely.distance(branch, lines[~touches_parent]) < clearance).any())


_BUILDERS = {
    "grid_city": _grid_city,
    "ring": _ring,
    "spur_forest": _spur_forest,
    "random_tree": _random_tree,
}


# ---------------------------------------------------------------------------
# Public API
# ---------------------------------------------------------------------------


def make_fixture(
    kind: FixtureKind, params: FixtureParams | None = None, seed: int = 0
) -> Fixture:
    """Build the ``(mask, roads, graph)`` triple for one fixture kind.

    The raster is north-up with its top-left corner at ``(0, extent)``.

    Raises:
        ParameterError: for an unknown ``kind`` or inconsistent params.
    """
    if kind not in _BUILDERS:
        raise ParameterError(f"unknown fixture kind {kind!r}; expected one of {FIXTURE_KINDS}")
    params = params or FixtureParams()
    lines, extent = _BUILDERS[kind](params, Xorshift64Star(seed))
    size = max(1, math.ceil(extent / params.pixel_size_m))
    transform = GeoTransform.north_up(params.pixel_size_m, 0.0, size * params.pixel_size_m)
    roads = VectorRoadSet(lines=tuple(lines))
    mask = rasterize_centerlines(roads, size, size, transform, params.halfwidth_m)
    graph = roads_to_network(roads, transform)
    logger.info(
        "Fixture %s: %dx%d px, %d lines, %d nodes, %d edges",
        kind, size, size, len(roads), graph.n_nodes, graph.n_edges,
    )
    return Fixture(mask, roads, graph)


def add_salt_and_pepper(grid: RasterGrid, fraction: float, seed: int = 0) -> RasterGrid:
    """Corrupt a binary grid: ``fraction / 2`` of pixels forced on, as many forced off.

    Noise uses numpy's seeded generator; it only feeds test scenes, never a metric.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ParameterError(f"fraction must lie in [0, 1], got {fraction}")
    draw = np.random.default_rng(seed).random(grid.shape)
    values = grid.values.copy()
    values[draw < fraction / 2.0] = 1
    values[(draw >= fraction / 2.0) & (draw < fraction)] = 0
    return grid.with_values(values)
