"""Pydantic parameter/report models, GeoTransform, runtime Config, and exceptions.

The algorithmic modules (``raster``, ``graph``, ``tiling``, ``apls``, ``topo``,
``routing``) take their tunables from the frozen parameter models defined
here. ``PipelineConfig`` is the flat, JSON-serializable union of all of them
that the CLI reads from ``--config`` files; the per-module parameter objects
are derived from it so defaults live in exactly one place.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

# ---------------------------------------------------------------------------
# Type aliases
# ---------------------------------------------------------------------------

GridKind = Literal["probability", "binary"]
"""Raster value semantics: soft road probability or hard 0/1 mask."""

MorphOp = Literal["open", "close"]

MorphOrder = Literal["close_open", "open_close"]
"""Order of the two morphology passes inside ``clean_mask``."""

RefineStep = Literal["spurs", "gaps", "subgraphs"]

# ---------------------------------------------------------------------------
# Exceptions
# ---------------------------------------------------------------------------


class RoadGraphError(Exception):
    """Base class for every error raised by the roadgraph package."""


class ConfigurationError(RoadGraphError):
    """Raised for unusable configuration: singular transforms, bad config files."""


class ParameterError(RoadGraphError, ValueError):
    """Raised when an operation parameter is outside its precondition."""


class GridKindError(RoadGraphError, TypeError):
    """Raised when a probability grid is passed where a binary grid is required."""


class DimensionError(RoadGraphError, ValueError):
    """Raised when two grids (or a tile and its window) disagree in shape."""


class PreconditionError(RoadGraphError):
    """Raised when a skeleton is not thin.

    Attributes:
        pixel: ``(row, col)`` of the top-left pixel of the offending 2×2 block.
    """

    def __init__(self, message: str, pixel: tuple[int, int]) -> None:
        self.pixel = pixel
        super().__init__(message)


class GeoJSONParseError(RoadGraphError):
    """Raised when GeoJSON input is not valid JSON or has unusable coordinates.

    Attributes:
        offset: Byte offset of the error in the input, or ``None`` when the
                problem is semantic (e.g. a NaN coordinate) rather than lexical.
    """

    def __init__(self, message: str, offset: int | None = None) -> None:
        self.offset = offset
        super().__init__(message)


class CoordinateUnitsError(RoadGraphError):
    """Raised when GeoJSON coordinates look geographic (degrees) rather than metric."""


class GridFormatError(RoadGraphError):
    """Raised when a PGM, RGF1 or world file cannot be decoded."""


class MetricUndefinedError(RoadGraphError):
    """Raised when a metric cannot be computed (too few nodes, no valid pairs)."""


class UnreachableError(RoadGraphError):
    """Raised when no route connects the requested endpoints."""


class PlanningError(RoadGraphError):
    """Raised when a tile plan leaves pixels uncovered or a tile is missing."""


class TileError(RoadGraphError):
    """Wraps any sub-error raised while processing one tile.

    Attributes:
        tile:  The ``Tile`` whose processing failed.
        cause: The original exception.
    """

    def __init__(self, tile: object, cause: Exception) -> None:
        self.tile = tile
        self.cause = cause
        super().__init__(f"Tile {tile} failed: {cause}")


# ---------------------------------------------------------------------------
# GeoTransform
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GeoTransform:
    """Affine map from pixel centres ``(col, row)`` to geo ``(x, y)``.

    ``x = a·col + b·row + c`` and ``y = d·col + e·row + f``. Pixel indices
    refer to pixel centres, so pixel ``(0, 0)`` maps to ``(c, f)``.

    Raises:
        ConfigurationError: if any coefficient is non-finite or the
            transform is not invertible.
    """

    a: float
    b: float
    c: float
    d: float
    e: float
    f: float

    def __post_init__(self) -> None:
        coeffs = (self.a, self.b, self.c, self.d, self.e, self.f)
        if not all(math.isfinite(v) for v in coeffs):
            raise ConfigurationError(f"GeoTransform coefficients must be finite: {coeffs}")
        if self.determinant == 0.0:
            raise ConfigurationError(
                f"GeoTransform is not invertible (a·e − b·d = 0): {coeffs}"
            )

    @classmethod
    def identity(cls) -> "GeoTransform":
        """Pixel == geo transform; used for graphs loaded without registration."""
        return cls(1.0, 0.0, 0.0, 0.0, 1.0, 0.0)

    @classmethod
    def north_up(cls, pixel_size_m: float, x0: float, y_top: float) -> "GeoTransform":
        """North-up transform whose raster's top-left corner sits at ``(x0, y_top)``."""
        half = pixel_size_m / 2.0
        return cls(pixel_size_m, 0.0, x0 + half, 0.0, -pixel_size_m, y_top - half)

    @property
    def determinant(self) -> float:
        return self.a * self.e - self.b * self.d

    @property
    def pixel_size_m(self) -> float:
        return math.sqrt(abs(self.determinant))

    def pixel_to_geo(self, col, row):
        """Map pixel-centre indices (scalars or arrays) to geo coordinates."""
        x = self.a * col + self.b * row + self.c
        y = self.d * col + self.e * row + self.f
        return x, y

    def geo_to_pixel(self, x, y):
        """Inverse of ``pixel_to_geo``; returns fractional ``(col, row)``."""
        det = self.determinant
        dx = x - self.c
        dy = y - self.f
        col = (self.e * dx - self.b * dy) / det
        row = (-self.d * dx + self.a * dy) / det
        return col, row

    def pixel_path_to_geo(self, path: np.ndarray) -> np.ndarray:
        """Map an ``(N, 2)`` array of ``(row, col)`` points to ``(N, 2)`` ``(x, y)``."""
        path = np.asarray(path, dtype=np.float64).reshape(-1, 2)
        x, y = self.pixel_to_geo(path[:, 1], path[:, 0])
        return np.column_stack([x, y])

    def geo_path_to_pixel(self, geo_path: np.ndarray) -> np.ndarray:
        """Map an ``(N, 2)`` array of ``(x, y)`` points to ``(N, 2)`` ``(row, col)``."""
        geo_path = np.asarray(geo_path, dtype=np.float64).reshape(-1, 2)
        col, row = self.geo_to_pixel(geo_path[:, 0], geo_path[:, 1])
        return np.column_stack([row, col])

    def shifted(self, row0: int, col0: int) -> "GeoTransform":
        """Transform of a window whose pixel ``(0, 0)`` is this raster's ``(row0, col0)``."""
        c, f = self.pixel_to_geo(col0, row0)
        return GeoTransform(self.a, self.b, float(c), self.d, self.e, float(f))

    def scaled(self, factor: int) -> "GeoTransform":
        """Transform of the raster block-averaged by ``factor`` along both axes."""
        # Centre of output pixel (0, 0) is the centre of the input block.
        offset = (factor - 1) / 2.0
        c, f = self.pixel_to_geo(offset, offset)
        return GeoTransform(
            self.a * factor, self.b * factor, float(c),
            self.d * factor, self.e * factor, float(f),
        )


# ---------------------------------------------------------------------------
# Per-module parameter models
# ---------------------------------------------------------------------------

_FROZEN = ConfigDict(frozen=True, extra="forbid")


class CleanParams(BaseModel):
    """Mask-cleaning tunables (threshold, morphology, smoothing)."""

    model_config = _FROZEN

    threshold: float = Field(default=0.3, ge=0.0, le=1.0)
    open_radius_px: int = Field(default=2, ge=1)
    close_radius_px: int = Field(default=2, ge=1)
    smooth_radius_px: int = Field(default=1, ge=1)
    morph_order: MorphOrder = "close_open"


class RefineParams(BaseModel):
    """Graph refinement thresholds.

    ``order`` lists the three refinement steps in execution order; it must be
    a permutation of ``("spurs", "gaps", "subgraphs")``.
    """

    model_config = _FROZEN

    min_subgraph_m: float = Field(default=80.0, gt=0.0)
    max_spur_px: float = Field(default=10.0, gt=0.0)
    max_gap_px: float = Field(default=20.0, gt=0.0)
    order: tuple[RefineStep, ...] = ("spurs", "gaps", "subgraphs")
    spur_fixed_point: bool = True
    gap_passes: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _validate_order(self) -> "RefineParams":
        if sorted(self.order) != sorted(("spurs", "gaps", "subgraphs")):
            raise ValueError(
                f"order must be a permutation of spurs, gaps, subgraphs: {self.order}"
            )
        return self


class TileParams(BaseModel):
    model_config = _FROZEN

    window_px: int = Field(default=1300, ge=1)
    overlap_px: int = Field(default=260, ge=0)

    @model_validator(mode="after")
    def _validate_overlap(self) -> "TileParams":
        if self.overlap_px >= self.window_px:
            raise ValueError("overlap_px must be smaller than window_px")
        return self


class AplsParams(BaseModel):
    """APLS tunables; defaults follow the large-image evaluation setup."""

    model_config = _FROZEN

    n_control: int = Field(default=500, ge=2)
    snap_buffer_m: float = Field(default=4.0, gt=0.0)
    inject_midpoints: bool = False
    rng_seed: int = 42
    symmetric: bool = True


class TopoParams(BaseModel):
    """TOPO tunables; ``hole_size_m`` is the sample matching tolerance."""

    model_config = _FROZEN

    hole_size_m: float = Field(default=4.0, gt=0.0)
    radius_m: float = Field(default=300.0, gt=0.0)
    sample_spacing_m: float = Field(default=5.0, gt=0.0)
    seed_spacing_m: float = Field(default=50.0, gt=0.0)
    rng_seed: int = 42
    max_seeds: int | None = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _validate_hole(self) -> "TopoParams":
        if self.hole_size_m >= self.radius_m:
            raise ValueError("hole_size_m must be smaller than radius_m")
        return self


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


class AplsReport(BaseModel):
    """APLS result; ``score_prop_to_gt`` is None for one-way evaluation."""

    score: float
    score_gt_to_prop: float
    score_prop_to_gt: float | None = None
    n_pairs_evaluated: int
    n_nodes_unsnapped: int
    n_control_gt: int = 0
    n_control_prop: int = 0
    params: AplsParams | None = None


class TopoReport(BaseModel):
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    n_seeds: int = 0
    params: TopoParams | None = None

    @classmethod
    def from_counts(
        cls, tp: int, fp: int, fn: int, n_seeds: int = 0, params: TopoParams | None = None
    ) -> "TopoReport":
        """Build a report from raw counts; zero denominators give zero scores."""
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        return cls(
            precision=precision, recall=recall, f1=f1,
            tp=tp, fp=fp, fn=fn, n_seeds=n_seeds, params=params,
        )


class BenchReport(BaseModel):
    """Throughput of the post-processing stages on one synthetic mask."""

    width: int
    height: int
    pixel_size_m: float
    area_km2: float
    n_tiles: int
    n_nodes: int
    n_edges: int
    stage_seconds: dict[str, float]
    total_seconds: float
    km2_per_hour: float


# ---------------------------------------------------------------------------
# PipelineConfig (flat JSON config shared by all subcommands)
# ---------------------------------------------------------------------------


class PipelineConfig(BaseModel):
    """Every tunable of the pipeline as one flat object of scalars.

    Unknown keys are rejected. The per-module parameter models are derived
    via the ``*_params`` helpers so each default is defined once.
    """

    model_config = ConfigDict(extra="forbid")

    # rasterization
    halfwidth_m: float = Field(default=2.0, gt=0.0)
    # cleaning
    threshold: float = Field(default=0.3, ge=0.0, le=1.0)
    open_radius_px: int = Field(default=2, ge=1)
    close_radius_px: int = Field(default=2, ge=1)
    smooth_radius_px: int = Field(default=1, ge=1)
    morph_order: MorphOrder = "close_open"
    # refinement
    min_subgraph_m: float = Field(default=80.0, gt=0.0)
    max_spur_px: float = Field(default=10.0, gt=0.0)
    max_gap_px: float = Field(default=20.0, gt=0.0)
    refine_order: str = "spurs,gaps,subgraphs"
    spur_fixed_point: bool = True
    gap_passes: int = Field(default=1, ge=1)
    # tiling
    window_px: int = Field(default=1300, ge=1)
    overlap_px: int = Field(default=260, ge=0)
    # APLS
    n_control: int = Field(default=500, ge=2)
    snap_buffer_m: float = Field(default=4.0, gt=0.0)
    inject_midpoints: bool = False
    symmetric: bool = True
    rng_seed: int = 42
    # TOPO
    hole_size_m: float = Field(default=4.0, gt=0.0)
    radius_m: float = Field(default=300.0, gt=0.0)
    sample_spacing_m: float = Field(default=5.0, gt=0.0)
    seed_spacing_m: float = Field(default=50.0, gt=0.0)
    max_seeds: int | None = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _validate_cross_fields(self) -> "PipelineConfig":
        # Building the sub-models runs their cross-field validators.
        self.refine_params()
        self.tile_params()
        self.topo_params()
        return self

    @classmethod
    def from_file(cls, path: Path) -> "PipelineConfig":
        """Load a config from a JSON object file.

        Raises:
            ConfigurationError: if the file is missing or not a JSON object.
            pydantic.ValidationError: on unknown keys or out-of-range values.
        """
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"Cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigurationError(f"Config {path} must contain a JSON object")
        return cls(**data)

    def clean_params(self) -> CleanParams:
        return CleanParams(
            threshold=self.threshold,
            open_radius_px=self.open_radius_px,
            close_radius_px=self.close_radius_px,
            smooth_radius_px=self.smooth_radius_px,
            morph_order=self.morph_order,
        )

    def refine_params(self) -> RefineParams:
        order = tuple(step.strip() for step in self.refine_order.split(",") if step.strip())
        return RefineParams(
            min_subgraph_m=self.min_subgraph_m,
            max_spur_px=self.max_spur_px,
            max_gap_px=self.max_gap_px,
            order=order,
            spur_fixed_point=self.spur_fixed_point,
            gap_passes=self.gap_passes,
        )

    def tile_params(self) -> TileParams:
        return TileParams(window_px=self.window_px, overlap_px=self.overlap_px)

    def apls_params(self) -> AplsParams:
        return AplsParams(
            n_control=self.n_control,
            snap_buffer_m=self.snap_buffer_m,
            inject_midpoints=self.inject_midpoints,
            rng_seed=self.rng_seed,
            symmetric=self.symmetric,
        )

    def topo_params(self) -> TopoParams:
        return TopoParams(
            hole_size_m=self.hole_size_m,
            radius_m=self.radius_m,
            sample_spacing_m=self.sample_spacing_m,
            seed_spacing_m=self.seed_spacing_m,
            rng_seed=self.rng_seed,
            max_seeds=self.max_seeds,
        )


# ---------------------------------------------------------------------------
# Process settings (plain dataclass, resolved from CLI, env and config file)
# ---------------------------------------------------------------------------


@dataclass
class RuntimeConfig:
    """Process-level settings that never change results.

    Attributes:
        threads:       Worker threads for tile loading, APLS sources and TOPO
                       seeds. Results are identical for every value.
        verbose:       DEBUG-level logging when True.
        log_file:      Optional file receiving a copy of the log.
        assume_meters: Accept GeoJSON that looks geographic (degrees).
    """

    threads: int = 1
    verbose: bool = False
    log_file: Path | None = None
    assume_meters: bool = False
