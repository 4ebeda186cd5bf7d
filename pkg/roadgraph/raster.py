"""Raster representation and mask operations.

``RasterGrid`` is an immutable, geo-registered 2-D field of values in
``[0, 1]``. Probability grids store ``float32``; binary grids store ``uint8``
0/1. Every operation here is a pure function returning a new grid with the
input's ``GeoTransform`` carried over unchanged.

Border policy: for erosion and dilation everything outside the image is
background. Smoothing uses the truncated in-image neighbourhood.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from roadgraph.models import (
    CleanParams,
    DimensionError,
    GeoTransform,
    GridKind,
    GridKindError,
    MorphOp,
    ParameterError,
)

logger = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RasterGrid:
    """A geo-registered scalar field of shape ``(height, width)``.

    Attributes:
        values:    Row-major array; made read-only on construction.
        transform: Pixel-centre → geo mapping.
        kind:      ``"probability"`` (float32 in [0, 1]) or ``"binary"``
                   (uint8 in {0, 1}).
    """

    values: np.ndarray
    transform: GeoTransform
    kind: GridKind = "probability"

    def __post_init__(self) -> None:
        arr = np.asarray(self.values)
        if arr.ndim != 2:
            raise DimensionError(f"RasterGrid values must be 2-D, got shape {arr.shape}")
        if self.kind == "binary":
            if arr.dtype == bool:
                arr = arr.astype(np.uint8)
            elif arr.size and not np.isin(arr, (0, 1)).all():
                raise ParameterError("binary RasterGrid values must be 0 or 1")
            arr = np.array(arr, dtype=np.uint8)
        elif self.kind == "probability":
            arr = np.array(arr, dtype=np.float32)
            if arr.size and not np.isfinite(arr).all():
                raise ParameterError("RasterGrid values must be finite")
            if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
                raise ParameterError("probability RasterGrid values must lie in [0, 1]")
        else:
            raise ParameterError(f"unknown grid kind {self.kind!r}")
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def height(self) -> int:
        return int(self.values.shape[0])

    @property
    def width(self) -> int:
        return int(self.values.shape[1])

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    def with_values(self, values: np.ndarray, kind: GridKind | None = None) -> "RasterGrid":
        """Return a grid with new values and the same transform."""
        return RasterGrid(values, self.transform, kind or self.kind)

    def as_probability(self) -> "RasterGrid":
        return RasterGrid(self.values.astype(np.float32), self.transform, "probability")


@dataclass(frozen=True)
class VectorRoadSet:
    """Road centerlines in geo coordinates.

    Attributes:
        lines:      One ``(N, 2)`` float64 array of ``(x, y)`` per polyline,
                    ``N >= 2``, no two consecutive points identical.
        attributes: Optional string map per line (same length as ``lines``).
    """

    lines: tuple[np.ndarray, ...] = ()
    attributes: tuple[dict[str, str], ...] = field(default=())

    def __post_init__(self) -> None:
        lines = []
        for idx, line in enumerate(self.lines):
            arr = np.array(line, dtype=np.float64).reshape(-1, 2)
            if len(arr) < 2:
                raise ParameterError(f"polyline {idx} has fewer than 2 points")
            if not np.isfinite(arr).all():
                raise ParameterError(f"polyline {idx} has non-finite coordinates")
            if (np.diff(arr, axis=0) == 0).all(axis=1).any():
                raise ParameterError(f"polyline {idx} repeats a point consecutively")
            arr.flags.writeable = False
            lines.append(arr)
        attrs = tuple(self.attributes) or tuple({} for _ in lines)
        if len(attrs) != len(lines):
            raise DimensionError("attributes must have one entry per polyline")
        object.__setattr__(self, "lines", tuple(lines))
        object.__setattr__(self, "attributes", attrs)

    def __len__(self) -> int:
        return len(self.lines)


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def disk(radius_px: int) -> np.ndarray:
    """Boolean disk structuring element: offsets with Euclidean norm ≤ radius."""
    yy, xx = np.mgrid[-radius_px : radius_px + 1, -radius_px : radius_px + 1]
    return (yy * yy + xx * xx) <= radius_px * radius_px


def require_binary(grid: RasterGrid, op: str) -> None:
    if grid.kind != "binary":
        raise GridKindError(f"{op} requires a binary grid, got {grid.kind!r}")


def _require_radius(radius_px: int, op: str) -> None:
    if int(radius_px) != radius_px or radius_px < 1:
        raise ParameterError(f"{op} radius_px must be an integer >= 1, got {radius_px!r}")


# ---------------------------------------------------------------------------
# Rasterization
# ---------------------------------------------------------------------------


def rasterize_centerlines(
    labels: VectorRoadSet,
    width: int,
    height: int,
    transform: GeoTransform,
    halfwidth_m: float = 2.0,
) -> RasterGrid:
    """Burn road centerlines into a binary mask.

    A pixel is set iff the geo distance from its centre to the nearest point
    of any polyline is ≤ ``halfwidth_m``. An empty label set gives an
    all-zero grid.

    Raises:
        ParameterError: if ``halfwidth_m`` is not positive or the extent is empty.
    """
    if not halfwidth_m > 0:
        raise ParameterError(f"halfwidth_m must be > 0, got {halfwidth_m}")
    if width < 1 or height < 1:
        raise ParameterError(f"raster extent must be positive, got {width}x{height}")

    mask = np.zeros((height, width), dtype=np.uint8)
    if not len(labels):
        logger.warning("Rasterizing an empty label set; mask is all zero")
    for line in labels.lines:
        for p0, p1 in zip(line[:-1], line[1:]):
            _burn_segment(mask, p0, p1, transform, halfwidth_m)
    return RasterGrid(mask, transform, "binary")


def _burn_segment(
    mask: np.ndarray,
    p0: np.ndarray,
    p1: np.ndarray,
    transform: GeoTransform,
    halfwidth_m: float,
) -> None:
    height, width = mask.shape
    xs = (min(p0[0], p1[0]) - halfwidth_m, max(p0[0], p1[0]) + halfwidth_m)
    ys = (min(p0[1], p1[1]) - halfwidth_m, max(p0[1], p1[1]) + halfwidth_m)
    corners = np.array([(x, y) for x in xs for y in ys])
    cols, rows = transform.geo_to_pixel(corners[:, 0], corners[:, 1])
    c0 = max(int(math.floor(cols.min())) - 1, 0)
    c1 = min(int(math.ceil(cols.max())) + 1, width - 1)
    r0 = max(int(math.floor(rows.min())) - 1, 0)
    r1 = min(int(math.ceil(rows.max())) + 1, height - 1)
    if c0 > c1 or r0 > r1:
        return

    rr, cc = np.mgrid[r0 : r1 + 1, c0 : c1 + 1]
    px, py = transform.pixel_to_geo(cc.astype(np.float64), rr.astype(np.float64))
    dist = point_segment_distance(px, py, p0, p1)
    mask[r0 : r1 + 1, c0 : c1 + 1] |= (dist <= halfwidth_m).astype(np.uint8)


def point_segment_distance(px, py, p0, p1):
    """Euclidean distance from points ``(px, py)`` to segment ``p0–p1``."""
    x0, y0 = float(p0[0]), float(p0[1])
    dx = float(p1[0]) - x0
    dy = float(p1[1]) - y0
    length2 = dx * dx + dy * dy
    t = ((px - x0) * dx + (py - y0) * dy) / length2
    t = np.clip(t, 0.0, 1.0)
    return np.hypot(px - (x0 + t * dx), py - (y0 + t * dy))


# ---------------------------------------------------------------------------
# Mask cleaning
# ---------------------------------------------------------------------------


def threshold(grid: RasterGrid, t: float) -> RasterGrid:
    """Binary mask of pixels with value ≥ ``t`` (boundary inclusive)."""
    if not 0.0 <= t <= 1.0:
        raise ParameterError(f"threshold must lie in [0, 1], got {t}")
    return RasterGrid((grid.values >= t).astype(np.uint8), grid.transform, "binary")


def morph(binary: RasterGrid, op: MorphOp, radius_px: int) -> RasterGrid:
    """Binary opening or closing with a disk of ``radius_px``.

    ``open`` is erosion then dilation, ``close`` dilation then erosion.
    Outside the image counts as background.
    """
    require_binary(binary, "morph")
    _require_radius(radius_px, "morph")
    se = disk(radius_px)
    img = binary.values.astype(bool)
    if op == "open":
        out = ndimage.binary_dilation(ndimage.binary_erosion(img, se, border_value=0), se)
    elif op == "close":
        # Pad so the erosion sees the dilated background beyond the edge.
        r = radius_px
        padded = np.pad(img, r)
        out = ndimage.binary_erosion(ndimage.binary_dilation(padded, se), se, border_value=0)
        out = out[r:-r, r:-r]
    else:
        raise ParameterError(f"morph op must be 'open' or 'close', got {op!r}")
    return binary.with_values(out.astype(np.uint8))


def smooth(binary: RasterGrid, radius_px: int) -> RasterGrid:
    """Median filter over the disk neighbourhood; even-count ties go to 1."""
    require_binary(binary, "smooth")
    _require_radius(radius_px, "smooth")
    kernel = disk(radius_px).astype(np.uint16)
    ones = ndimage.convolve(binary.values.astype(np.uint16), kernel, mode="constant", cval=0)
    # Neighbourhood size shrinks at the border (truncated disk).
    support = ndimage.convolve(
        np.ones(binary.shape, dtype=np.uint16), kernel, mode="constant", cval=0
    )
    out = ones >= (support + 1) // 2
    return binary.with_values(out.astype(np.uint8))


def clean_mask(grid: RasterGrid, params: CleanParams | None = None) -> RasterGrid:
    """Threshold a probability mask, then close/open it and smooth the result."""
    params = params or CleanParams()
    binary = threshold(grid, params.threshold)
    if params.morph_order == "close_open":
        binary = morph(binary, "close", params.close_radius_px)
        binary = morph(binary, "open", params.open_radius_px)
    else:
        binary = morph(binary, "open", params.open_radius_px)
        binary = morph(binary, "close", params.close_radius_px)
    binary = smooth(binary, params.smooth_radius_px)
    logger.debug(
        "Cleaned mask: %d road pixels of %d", int(binary.values.sum()), binary.values.size
    )
    return binary


def downsample(grid: RasterGrid, factor: int) -> RasterGrid:
    """Block-mean resample by an integer ``factor`` (trailing partial blocks dropped).

    Binary grids are re-binarized at 0.5 after averaging.
    """
    if int(factor) != factor or factor < 1:
        raise ParameterError(f"downsample factor must be an integer >= 1, got {factor!r}")
    if factor == 1:
        return grid
    h, w = grid.height // factor, grid.width // factor
    if h == 0 or w == 0:
        raise ParameterError(f"factor {factor} exceeds grid extent {grid.shape}")
    blocks = grid.values[: h * factor, : w * factor].astype(np.float64)
    means = blocks.reshape(h, factor, w, factor).mean(axis=(1, 3))
    transform = grid.transform.scaled(factor)
    if grid.kind == "binary":
        return RasterGrid((means >= 0.5).astype(np.uint8), transform, "binary")
    return RasterGrid(means.astype(np.float32), transform, "probability")


# ---------------------------------------------------------------------------
# Skeletonization
# ---------------------------------------------------------------------------

# Neighbour offsets (drow, dcol) in bit order N, NE, E, SE, S, SW, W, NW.
NEIGHBOUR_OFFSETS: tuple[tuple[int, int], ...] = (
    (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1),
)


def _build_simple_lut() -> np.ndarray:
    """Simple iff the foreground neighbours form one 8-component and exactly one
    4-component of background neighbours touches a 4-neighbour."""
    lut = np.zeros(256, dtype=bool)
    eight = np.ones((3, 3), dtype=bool)
    four = ndimage.generate_binary_structure(2, 1)
    for code in range(256):
        window = np.zeros((3, 3), dtype=bool)
        for k, (dr, dc) in enumerate(NEIGHBOUR_OFFSETS):
            window[1 + dr, 1 + dc] = bool(code >> k & 1)
        _, n_fg = ndimage.label(window, structure=eight)
        ring = ~window
        ring[1, 1] = False
        bg_labels, _ = ndimage.label(ring, structure=four)
        touching = {int(bg_labels[1 + dr, 1 + dc]) for dr, dc in ((-1, 0), (0, 1), (1, 0), (0, -1))}
        touching.discard(0)
        lut[code] = n_fg == 1 and len(touching) == 1
    return lut


_SIMPLE = _build_simple_lut()

# Endpoints (fewer than two foreground neighbours) are kept.
_DELETABLE = _SIMPLE & (np.array([bin(code).count("1") for code in range(256)]) >= 2)

_SUBFIELDS = ((0, 0), (0, 1), (1, 0), (1, 1))

# (first, second) 4-neighbour that must be background for a subiteration to
# consider a pixel: south/east border first, then north/west.
_SUBITERATIONS = (((1, 0), (0, 1)), ((-1, 0), (0, -1)))


def _codes(img: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    code = np.zeros(rows.shape, dtype=np.int32)
    for bit, (dr, dc) in enumerate(NEIGHBOUR_OFFSETS):
        code |= img[rows + dr, cols + dc].astype(np.int32) << bit
    return code


def _border_pixels(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    core = img[1:-1, 1:-1]
    exposed = (
        (img[:-2, 1:-1] == 0)
        | (img[2:, 1:-1] == 0)
        | (img[1:-1, :-2] == 0)
        | (img[1:-1, 2:] == 0)
    )
    rows, cols = np.nonzero((core == 1) & exposed)
    return rows + 1, cols + 1


def deletable_pixels(binary: RasterGrid) -> np.ndarray:
    """Boolean mask of foreground pixels the thinning rule would still remove.

    Empty for every output of ``skeletonize`` (fixed point).
    """
    img = np.pad(binary.values.astype(np.uint8), 1)
    rows, cols = np.nonzero(img)
    out = np.zeros(img.shape, dtype=bool)
    out[rows, cols] = _DELETABLE[_codes(img, rows, cols)]
    return out[1:-1, 1:-1]


def _thinning_pass(img: np.ndarray) -> int:
    """One pass of both subiterations over the padded image; returns pixels removed."""
    rows, cols = _border_pixels(img)
    if rows.size == 0:
        return 0
    parity = ((rows - 1) % 2) * 2 + (cols - 1) % 2
    removed = 0
    for (dr1, dc1), (dr2, dc2) in _SUBITERATIONS:
        for pr, pc in _SUBFIELDS:
            sel = parity == pr * 2 + pc
            r, c = rows[sel], cols[sel]
            alive = (img[r, c] == 1) & (
                (img[r + dr1, c + dc1] == 0) | (img[r + dr2, c + dc2] == 0)
            )
            r, c = r[alive], c[alive]
            kill = _DELETABLE[_codes(img, r, c)]
            img[r[kill], c[kill]] = 0
            removed += int(kill.sum())
    return removed


def _block_corners(img: np.ndarray) -> np.ndarray:
    """Top-left (row, col) of every 2×2 all-foreground block."""
    full = img[:-1, :-1] & img[1:, :-1] & img[:-1, 1:] & img[1:, 1:]
    return np.argwhere(full == 1)


def _in_block(img: np.ndarray, r: int, c: int) -> bool:
    return any(
        img[r0:r0 + 2, c0:c0 + 2].all()
        for r0 in (r - 1, r) for c0 in (c - 1, c)
    )


def _is_simple(img: np.ndarray, r: int, c: int) -> bool:
    return bool(_SIMPLE[_codes(img, np.array([r]), np.array([c]))[0]])


def _break_block(img: np.ndarray, mask: np.ndarray, r0: int, c0: int) -> bool:
    """Remove one pixel of the block at (r0, c0) without changing topology.

    A block pixel that is not simple (for instance the core of an X crossing
    whose arms leave diagonally) first gets a simple background neighbour
    added, after which it becomes simple itself. The pair of moves is kept
    only if the added pixel ends up in no 2×2 block, so the block count
    strictly drops. Added pixels are taken from the input mask when possible.
    """
    height, width = img.shape[0] - 2, img.shape[1] - 2
    for q in ((r0, c0), (r0, c0 + 1), (r0 + 1, c0), (r0 + 1, c0 + 1)):
        if _is_simple(img, *q):
            img[q] = 0
            return True
        candidates = [(q[0] + dr, q[1] + dc) for dr, dc in NEIGHBOUR_OFFSETS]
        for o in sorted(candidates, key=lambda p: not mask[p]):
            if img[o] or not (1 <= o[0] <= height and 1 <= o[1] <= width):
                continue
            if not _is_simple(img, *o):
                continue
            img[o] = 1
            if _is_simple(img, *q):
                img[q] = 0
                if not _in_block(img, *o):
                    return True
                img[q] = 1
            img[o] = 0
    return False


def skeletonize(binary: RasterGrid) -> RasterGrid:
    """Thin a binary mask to a one-pixel-wide, connectivity-preserving skeleton.

    Two subiterations per pass (south/east border pixels, then north/west),
    each split into the four (row mod 2, col mod 2) subfields. Only 8-simple,
    non-endpoint pixels are deleted, and pixels of one subfield are never
    adjacent, so each parallel step equals some sequential deletion order and
    the 8-connected component count is preserved. Passes repeat until no pixel
    is deleted.

    Thinning alone can stall on 2×2 blocks (X crossings whose arms meet on
    the diagonals). Those are broken one at a time by simple-point moves and
    thinning resumes; deletions never create a block, so this terminates.
    """
    require_binary(binary, "skeletonize")
    img = np.pad(binary.values.astype(np.uint8), 1)
    mask = img.copy()
    n_pass = n_broken = 0
    while True:
        while True:
            n_pass += 1
            if _thinning_pass(img) == 0:
                break
        broken = 0
        for r0, c0 in _block_corners(img):
            if img[r0:r0 + 2, c0:c0 + 2].all() and _break_block(img, mask, int(r0), int(c0)):
                broken += 1
        n_broken += broken
        if broken == 0:
            break
    left = _block_corners(img)
    if len(left):
        logger.warning("Skeleton keeps %d 2×2 block(s), first at %s", len(left), tuple(left[0] - 1))
    logger.debug("Skeletonized in %d passes, %d block(s) broken", n_pass, n_broken)
    return binary.with_values(img[1:-1, 1:-1].copy())


# ---------------------------------------------------------------------------
# Training loss
# ---------------------------------------------------------------------------


def combined_loss(
    pred: RasterGrid,
    target: RasterGrid,
    w_bce: float = 0.8,
    w_dice: float = 0.2,
    eps: float = 1e-7,
) -> float:
    """Weighted BCE + (1 − soft Dice) between a prediction and a binary target.

    BCE clamps predictions to ``[eps, 1 − eps]`` before taking logs; Dice is
    ``(2·Σ(p·t) + eps) / (Σp + Σt + eps)`` on the unclamped predictions.

    Raises:
        DimensionError: if the two grids differ in shape.
    """
    if pred.shape != target.shape:
        raise DimensionError(f"pred shape {pred.shape} != target shape {target.shape}")
    require_binary(target, "combined_loss target")
    p = pred.values.astype(np.float64)
    t = target.values.astype(np.float64)
    pc = np.clip(p, eps, 1.0 - eps)
    bce = -float(np.mean(t * np.log(pc) + (1.0 - t) * np.log(1.0 - pc)))
    dice = (2.0 * float(np.sum(p * t)) + eps) / (float(p.sum()) + float(t.sum()) + eps)
    return w_bce * bce + w_dice * (1.0 - dice)
