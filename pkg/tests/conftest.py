"""Shared pytest fixtures for the roadgraph test suite."""

import logging

import numpy as np
import pytest

from roadgraph.graph import RoadNetwork, add_edge_from_geo, add_node_geo
from roadgraph.models import GeoTransform
from roadgraph.raster import RasterGrid


# ---------------------------------------------------------------------------
# Logger isolation
# ---------------------------------------------------------------------------


@pytest.fixture(autouse=True)
def _reset_roadgraph_logger():
    """Clear the roadgraph logger between tests.

    Tests that call ``main()`` trigger ``setup_logging()``, which attaches
    handlers and sets ``propagate=False``.  Without this fixture the state
    leaks into subsequent tests and breaks ``caplog`` capture.
    """
    logger = logging.getLogger("roadgraph")
    for h in logger.handlers[:]:
        try:
            h.close()
        except Exception:
            pass
        logger.removeHandler(h)
    logger.propagate = True
    yield
    for h in logger.handlers[:]:
        try:
            h.close()
        except Exception:
            pass
        logger.removeHandler(h)
    logger.propagate = True


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------


def binary_grid(rows, transform: GeoTransform | None = None) -> RasterGrid:
    """Binary grid from a list of strings ('#' = road) or a 0/1 array."""
    if isinstance(rows, (list, tuple)) and rows and isinstance(rows[0], str):
        rows = [[1 if ch == "#" else 0 for ch in row] for row in rows]
    return RasterGrid(np.asarray(rows, dtype=np.uint8), transform or GeoTransform.identity(), "binary")


def network(nodes: dict[int, tuple[float, float]], edges: list) -> RoadNetwork:
    """Identity-registered network; edges are ``(u, v)`` or ``(u, v, [interior points])``."""
    net = RoadNetwork.empty(GeoTransform.identity())
    for node, xy in nodes.items():
        add_node_geo(net.graph, node, xy, net.transform)
    for edge in edges:
        u, v = edge[0], edge[1]
        interior = list(edge[2]) if len(edge) > 2 else []
        path = np.array([nodes[u], *interior, nodes[v]], dtype=np.float64)
        add_edge_from_geo(net.graph, u, v, path, net.transform)
    return net


def blob_mask(seed: int, size: int = 64) -> RasterGrid:
    """Random union of discs and thick bars at arbitrary angles, seeded."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[:size, :size].astype(np.float64)
    img = np.zeros((size, size), dtype=bool)
    for _ in range(int(rng.integers(1, 7))):
        if rng.random() < 0.4:
            cy, cx = rng.uniform(0, size, 2)
            img |= np.hypot(yy - cy, xx - cx) <= rng.uniform(2.0, 10.0)
        else:
            (y0, x0), (y1, x1) = rng.uniform(0, size, (2, 2))
            dy, dx = y1 - y0, x1 - x0
            t = np.clip(((yy - y0) * dy + (xx - x0) * dx) / max(dy * dy + dx * dx, 1e-9), 0, 1)
            img |= np.hypot(yy - y0 - t * dy, xx - x0 - t * dx) <= rng.uniform(1.0, 4.0)
    return binary_grid(img.astype(np.uint8))


@pytest.fixture
def identity() -> GeoTransform:
    return GeoTransform.identity()


@pytest.fixture
def square_network() -> RoadNetwork:
    """Four nodes on a 100 m square with one diagonal."""
    return network(
        {0: (0.0, 0.0), 1: (100.0, 0.0), 2: (100.0, 100.0), 3: (0.0, 100.0)},
        [(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)],
    )
