"""Large-image processing — tile planning, mask stitching and the full pipeline.

A large probability mask arrives as overlapping windows, each predicted by
one or more models. Per window the model grids are averaged; the global mask
is the per-pixel mean over every window covering that pixel, accumulated as
``(sum, count)`` planes. The stitched mask then goes through the small-image
post-processing chain (clean → skeletonize → graph → refine).

Tile loading and per-tile model merging run in a worker pool; accumulation
happens on the calling thread in tile-plan order, so the stitched mask is
bit-identical for any number of workers.
"""

import logging
import re
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np
from tqdm.auto import tqdm

from roadgraph.graph import RoadNetwork, refine, skeleton_to_graph
from roadgraph.gridio import read_grid, resolve_transform
from roadgraph.models import (
    BenchReport,
    CleanParams,
    DimensionError,
    GeoTransform,
    ParameterError,
    PlanningError,
    RefineParams,
    TileError,
    TileParams,
)
from roadgraph.raster import RasterGrid, clean_mask, skeletonize

logger = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# Tile plan
# ---------------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class Tile:
    """One window of the plan, in global pixel coordinates."""

    row0: int
    col0: int
    rows: int
    cols: int

    @property
    def slices(self) -> tuple[slice, slice]:
        return slice(self.row0, self.row0 + self.rows), slice(self.col0, self.col0 + self.cols)

    def __str__(self) -> str:
        return f"(row0={self.row0}, col0={self.col0}, {self.rows}x{self.cols})"


@dataclass(frozen=True)
class TileScheme:
    width: int
    height: int
    window_px: int
    overlap_px: int
    tiles: tuple[Tile, ...]

    @property
    def stride(self) -> int:
        return self.window_px - self.overlap_px

    def coverage(self) -> np.ndarray:
        """Per-pixel count of tiles containing the pixel."""
        count = np.zeros((self.height, self.width), dtype=np.uint16)
        for tile in self.tiles:
            count[tile.slices] += 1
        return count


def _axis_origins(extent: int, window: int, stride: int) -> list[int]:
    # Origins step by ``stride``; the last window is pulled back to end at the edge.
    origins = []
    origin = 0
    while origin + window < extent:
        origins.append(origin)
        origin += stride
    last = extent - window
    if not origins or origins[-1] != last:
        origins.append(last)
    return origins


def plan_tiles(
    width: int, height: int, window_px: int = 1300, overlap_px: int = 260
) -> TileScheme:
    """Plan overlapping windows covering a ``width × height`` raster.

    A window larger than the raster is clamped to the raster, giving a
    single tile along that axis.

    Raises:
        ParameterError: if ``window_px < 1``, ``overlap_px`` is outside
            ``[0, window_px)``, or the extent is empty.
    """
    if width < 1 or height < 1:
        raise ParameterError(f"extent must be at least 1x1, got {width}x{height}")
    if window_px < 1:
        raise ParameterError(f"window_px must be >= 1, got {window_px}")
    if not 0 <= overlap_px < window_px:
        raise ParameterError(
            f"overlap_px must satisfy 0 <= overlap_px < window_px, got {overlap_px}"
        )
    stride = window_px - overlap_px
    rows = min(window_px, height)
    cols = min(window_px, width)
    tiles = tuple(
        Tile(row0, col0, rows, cols)
        for row0 in _axis_origins(height, rows, stride)
        for col0 in _axis_origins(width, cols, stride)
    )
    logger.info(
        "Planned %d tiles (%dx%d extent, window %d, overlap %d)",
        len(tiles), width, height, window_px, overlap_px,
    )
    return TileScheme(width, height, window_px, overlap_px, tiles)


# ---------------------------------------------------------------------------
# Merging
# ---------------------------------------------------------------------------


def merge_models(grids: Sequence[RasterGrid], tile: Tile | None = None) -> np.ndarray:
    """Arithmetic mean of one tile's model predictions.

    Values are sorted along the model axis before summing, so the result does
    not depend on model order.
    """
    if not grids:
        raise ParameterError("at least one model grid is required")
    shape = grids[0].shape
    for grid in grids:
        if grid.shape != shape or (tile is not None and grid.shape != (tile.rows, tile.cols)):
            expected = (tile.rows, tile.cols) if tile is not None else shape
            raise DimensionError(f"tile grid shape {grid.shape} does not match {expected}")
    if len(grids) == 1:
        return grids[0].values.astype(np.float64)
    stack = np.sort(np.stack([g.values.astype(np.float64) for g in grids]), axis=0)
    return stack.sum(axis=0) / len(grids)


class MaskAccumulator:
    """Streaming ``(sum, count)`` planes for the stitched mask."""

    def __init__(self, height: int, width: int) -> None:
        self.total = np.zeros((height, width), dtype=np.float64)
        self.count = np.zeros((height, width), dtype=np.uint16)

    def add(self, tile: Tile, values: np.ndarray) -> None:
        if values.shape != (tile.rows, tile.cols):
            raise DimensionError(
                f"tile {tile} values have shape {values.shape}, expected {(tile.rows, tile.cols)}"
            )
        rows, cols = tile.slices
        self.total[rows, cols] += values
        self.count[rows, cols] += 1

    def result(self, transform: GeoTransform) -> RasterGrid:
        """Normalized mask; raises PlanningError if any pixel was never covered."""
        uncovered = self.count == 0
        if uncovered.any():
            row, col = (int(v) for v in np.argwhere(uncovered)[0])
            raise PlanningError(f"pixel ({row}, {col}) is not covered by any tile")
        mean = self.total / self.count
        return RasterGrid(np.clip(mean, 0.0, 1.0).astype(np.float32), transform, "probability")


def merge_tiles(
    tile_masks: Iterable[tuple[Tile, Sequence[RasterGrid]]],
    scheme: TileScheme,
    n_models: int,
    transform: GeoTransform | None = None,
) -> RasterGrid:
    """Stitch per-tile model predictions into one normalized probability mask.

    Tiles are accumulated in plan order whatever order they arrive in.

    Raises:
        DimensionError: if a grid's shape differs from its tile.
        PlanningError: if a tile is not in the plan, is missing, or does not
            carry ``n_models`` grids.
    """
    by_tile = {}
    planned = set(scheme.tiles)
    for tile, grids in tile_masks:
        if tile not in planned:
            raise PlanningError(f"tile {tile} is not part of the plan")
        if len(grids) != n_models:
            raise PlanningError(f"tile {tile} has {len(grids)} model grids, expected {n_models}")
        by_tile[tile] = grids
    acc = MaskAccumulator(scheme.height, scheme.width)
    for tile in scheme.tiles:
        if tile not in by_tile:
            raise PlanningError(f"no mask supplied for tile {tile}")
        acc.add(tile, merge_models(by_tile[tile], tile))
    return acc.result(transform or GeoTransform.identity())


# ---------------------------------------------------------------------------
# Tile providers
# ---------------------------------------------------------------------------


class TileProvider(Protocol):
    """Source of per-tile model predictions for ``extract_large``."""

    width: int
    height: int
    n_models: int

    def load(self, tile: Tile) -> list[RasterGrid]: ...


class ArrayTileProvider:
    """Serve windows cut from in-memory full-extent model grids."""

    def __init__(self, grids: Sequence[RasterGrid]) -> None:
        if not grids:
            raise ParameterError("ArrayTileProvider needs at least one grid")
        shapes = {g.shape for g in grids}
        if len(shapes) != 1:
            raise DimensionError(f"model grids differ in shape: {sorted(shapes)}")
        self._grids = [g.as_probability() for g in grids]
        self.height, self.width = grids[0].shape
        self.n_models = len(grids)
        self.transform = grids[0].transform

    def load(self, tile: Tile) -> list[RasterGrid]:
        rows, cols = tile.slices
        return [
            RasterGrid(g.values[rows, cols], g.transform.shifted(tile.row0, tile.col0))
            for g in self._grids
        ]


_TILE_NAME = re.compile(r"^tile_(\d+)_(\d+)_([A-Za-z0-9.-]+)\.(rgf|pgm)$")


class DirectoryTileProvider:
    """Tiles stored as ``tile_{row0}_{col0}_{model}.rgf`` (or ``.pgm``) files.

    The extent is inferred from the bottom-right tiles; the global transform
    comes from the world file of the ``(0, 0)`` tile, else identity.
    """

    def __init__(self, directory: Path) -> None:
        self.directory = Path(directory)
        self._files: dict[tuple[int, int], dict[str, Path]] = {}
        for path in sorted(self.directory.iterdir()):
            match = _TILE_NAME.match(path.name)
            if match:
                key = (int(match.group(1)), int(match.group(2)))
                self._files.setdefault(key, {})[match.group(3)] = path
        if not self._files:
            raise PlanningError(f"no tile files found in {self.directory}")
        models = {tuple(sorted(m)) for m in self._files.values()}
        if len(models) != 1:
            raise PlanningError(f"tiles in {self.directory} disagree on model names")
        self.models = list(next(iter(models)))
        self.n_models = len(self.models)
        self.height, self.width = self._infer_extent()
        origin = self._files.get((0, 0))
        if origin is None:
            raise PlanningError(f"no tile with origin (0, 0) in {self.directory}")
        self.transform = resolve_transform(origin[self.models[0]], None)
        logger.info(
            "Tile directory %s: %d windows, %d model(s), extent %dx%d",
            self.directory, len(self._files), self.n_models, self.width, self.height,
        )

    def _infer_extent(self) -> tuple[int, int]:
        max_row = max(r for r, _ in self._files)
        max_col = max(c for _, c in self._files)
        bottom = next(k for k in sorted(self._files) if k[0] == max_row)
        right = next(k for k in sorted(self._files) if k[1] == max_col)
        rows = read_grid(self._files[bottom][self.models[0]]).height
        cols = read_grid(self._files[right][self.models[0]]).width
        return max_row + rows, max_col + cols

    def load(self, tile: Tile) -> list[RasterGrid]:
        files = self._files.get((tile.row0, tile.col0))
        if files is None:
            raise PlanningError(f"no files for tile {tile} in {self.directory}")
        return [read_grid(files[m]) for m in self.models]


# ---------------------------------------------------------------------------
# Pipelines
# ---------------------------------------------------------------------------


def _timed(timings: dict[str, float] | None, stage: str, start: float) -> float:
    now = time.perf_counter()
    if timings is not None:
        timings[stage] = timings.get(stage, 0.0) + (now - start)
    return now


def extract_graph(
    mask: RasterGrid,
    clean: CleanParams | None = None,
    refine_params: RefineParams | None = None,
    timings: dict[str, float] | None = None,
) -> RoadNetwork:
    """Small-image pipeline: clean → skeletonize → skeleton_to_graph → refine."""
    with tqdm(
        total=4, desc="Extract", unit="stage", disable=not sys.stderr.isatty(), leave=False
    ) as bar:
        t = time.perf_counter()
        binary = clean_mask(mask, clean)
        t = _timed(timings, "clean", t)
        bar.update()
        skeleton = skeletonize(binary)
        t = _timed(timings, "skeletonize", t)
        bar.update()
        raw = skeleton_to_graph(skeleton)
        t = _timed(timings, "graph", t)
        bar.update()
        net = refine(raw, refine_params)
        _timed(timings, "refine", t)
        bar.update()
    return net


def _load_tile(provider: TileProvider, tile: Tile) -> np.ndarray:
    return merge_models(provider.load(tile), tile)


def stitch(
    provider: TileProvider,
    tile_params: TileParams | None = None,
    transform: GeoTransform | None = None,
    threads: int = 1,
) -> RasterGrid:
    """Plan tiles over the provider's extent and build the normalized global mask.

    Raises:
        TileError: wrapping any failure while loading or merging one tile.
    """
    tile_params = tile_params or TileParams()
    scheme = plan_tiles(provider.width, provider.height, tile_params.window_px, tile_params.overlap_px)
    acc = MaskAccumulator(scheme.height, scheme.width)
    with ThreadPoolExecutor(max_workers=threads, thread_name_prefix="worker") as executor:
        futures = [executor.submit(_load_tile, provider, tile) for tile in scheme.tiles]
        for tile, future in tqdm(
            zip(scheme.tiles, futures),
            total=len(futures),
            desc="Stitch",
            unit="tile",
            disable=not sys.stderr.isatty(),
            leave=False,
        ):
            try:
                acc.add(tile, future.result())
            except Exception as exc:
                for pending in futures:
                    pending.cancel()
                raise TileError(tile, exc) from exc
            logger.debug("Accumulated tile %s", tile)
    return acc.result(transform or getattr(provider, "transform", None) or GeoTransform.identity())


def extract_large(
    provider: TileProvider,
    transform: GeoTransform | None = None,
    clean: CleanParams | None = None,
    refine_params: RefineParams | None = None,
    tile_params: TileParams | None = None,
    threads: int = 1,
    timings: dict[str, float] | None = None,
) -> RoadNetwork:
    """Full large-image pipeline: plan → stitch → clean → skeletonize → graph → refine."""
    t = time.perf_counter()
    mask = stitch(provider, tile_params, transform=transform, threads=threads)
    _timed(timings, "stitch", t)
    return extract_graph(mask, clean, refine_params, timings=timings)


# ---------------------------------------------------------------------------
# Throughput benchmark
# ---------------------------------------------------------------------------


def synthetic_city_mask(
    size_px: int, street_spacing_px: int = 100, street_width_px: int = 9,
    transform: GeoTransform | None = None,
) -> RasterGrid:
    """Probability mask with full-length horizontal and vertical streets.

    Street centres sit at ``street_spacing_px / 2 + k · street_spacing_px``.
    """
    values = np.zeros((size_px, size_px), dtype=np.float32)
    half = street_width_px // 2
    for centre in range(street_spacing_px // 2, size_px, street_spacing_px):
        lo, hi = max(centre - half, 0), min(centre + half + 1, size_px)
        values[lo:hi, :] = 1.0
        values[:, lo:hi] = 1.0
    return RasterGrid(values, transform or GeoTransform.north_up(0.3, 0.0, size_px * 0.3))


def run_benchmark(
    size_px: int = 10000,
    pixel_size_m: float = 0.3,
    street_spacing_px: int = 100,
    tile_params: TileParams | None = None,
    clean: CleanParams | None = None,
    refine_params: RefineParams | None = None,
    threads: int = 1,
) -> BenchReport:
    """Time the post-processing stages on a synthetic city mask.

    The figure excludes model inference, which this package does not run.
    """
    transform = GeoTransform.north_up(pixel_size_m, 0.0, size_px * pixel_size_m)
    mask = synthetic_city_mask(size_px, street_spacing_px, transform=transform)
    provider = ArrayTileProvider([mask])
    timings: dict[str, float] = {}
    start = time.perf_counter()
    net = extract_large(
        provider, transform, clean, refine_params, tile_params, threads=threads, timings=timings
    )
    total = time.perf_counter() - start
    tile_params = tile_params or TileParams()
    n_tiles = len(plan_tiles(size_px, size_px, tile_params.window_px, tile_params.overlap_px).tiles)
    area_km2 = (size_px * pixel_size_m) ** 2 / 1e6
    rate = area_km2 / total * 3600.0 if total > 0 else 0.0
    logger.info("Benchmark: %.3f km² in %.2f s (%.1f km²/h)", area_km2, total, rate)
    return BenchReport(
        width=size_px,
        height=size_px,
        pixel_size_m=pixel_size_m,
        area_km2=area_km2,
        n_tiles=n_tiles,
        n_nodes=net.n_nodes,
        n_edges=net.n_edges,
        stage_seconds=timings,
        total_seconds=total,
        km2_per_hour=rate,
    )
