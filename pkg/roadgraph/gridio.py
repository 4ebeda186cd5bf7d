"""Mask file IO — PGM (P5), RGF1 float grids, and ``.wld`` world-file sidecars.

PGM masks hold 8-bit values: probability = value / 255, binary = value ≥ 128.
RGF1 is a minimal little-endian float32 container:

    b"RGF1" | u32 width | u32 height | width·height float32, row-major

Geo-registration travels in a world file next to the grid (same basename,
``.wld`` suffix): six ASCII lines ``a, d, b, e, c, f``. Without a sidecar the
identity transform is used.
"""

import logging
import struct
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from roadgraph.models import (
    GeoTransform,
    GridFormatError,
    GridKind,
    ParameterError,
)
from roadgraph.raster import RasterGrid

logger = logging.getLogger(__name__)

_RGF_MAGIC = b"RGF1"
_RGF_HEADER = struct.Struct("<4sII")

# ---------------------------------------------------------------------------
# World files
# ---------------------------------------------------------------------------


def world_file_path(grid_path: Path) -> Path:
    """Sidecar path for ``grid_path``: same basename, ``.wld`` suffix."""
    return Path(grid_path).with_suffix(".wld")


def read_world_file(path: Path) -> GeoTransform:
    """Parse a six-line world file (``a, d, b, e, c, f``).

    Raises:
        GridFormatError: if the file does not hold exactly six numbers.
        ConfigurationError: if the transform is not invertible.
    """
    try:
        tokens = Path(path).read_text(encoding="utf-8").split()
        a, d, b, e, c, f = (float(tok) for tok in tokens)
    except (OSError, ValueError) as exc:
        raise GridFormatError(f"Invalid world file {path}: {exc}") from exc
    return GeoTransform(a=a, b=b, c=c, d=d, e=e, f=f)


def write_world_file(path: Path, transform: GeoTransform) -> None:
    t = transform
    lines = [repr(float(v)) for v in (t.a, t.d, t.b, t.e, t.c, t.f)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def resolve_transform(grid_path: Path, transform: GeoTransform | None) -> GeoTransform:
    if transform is not None:
        return transform
    sidecar = world_file_path(grid_path)
    if sidecar.exists():
        return read_world_file(sidecar)
    logger.debug("No world file for %s; using identity transform", Path(grid_path).name)
    return GeoTransform.identity()


# ---------------------------------------------------------------------------
# PGM
# ---------------------------------------------------------------------------


def read_pgm(
    path: Path, kind: GridKind = "probability", transform: GeoTransform | None = None
) -> RasterGrid:
    """Read an 8-bit binary PGM (P5, maxval 255) mask.

    Raises:
        GridFormatError: if the file is not an 8-bit greyscale PGM.
    """
    try:
        with Image.open(path) as img:
            if img.format != "PPM" or img.mode != "L":
                raise GridFormatError(
                    f"{path} is not an 8-bit greyscale PGM ({img.format}, {img.mode})"
                )
            raw = np.asarray(img, dtype=np.uint8)
    except (OSError, UnidentifiedImageError) as exc:
        raise GridFormatError(f"Cannot read PGM {path}: {exc}") from exc

    geo = resolve_transform(path, transform)
    if kind == "binary":
        return RasterGrid((raw >= 128).astype(np.uint8), geo, "binary")
    return RasterGrid(raw.astype(np.float32) / np.float32(255.0), geo, "probability")


def write_pgm(path: Path, grid: RasterGrid, world_file: bool = True) -> None:
    """Write ``grid`` as P5 PGM (binary → 0/255, probability → round(v·255))."""
    if grid.kind == "binary":
        raw = grid.values * np.uint8(255)
    else:
        raw = np.rint(grid.values.astype(np.float64) * 255.0).astype(np.uint8)
    Image.fromarray(np.ascontiguousarray(raw)).save(path, format="PPM")
    if world_file:
        write_world_file(world_file_path(path), grid.transform)


# ---------------------------------------------------------------------------
# RGF1
# ---------------------------------------------------------------------------


def decode_rgf(data: bytes, transform: GeoTransform) -> RasterGrid:
    """Decode an in-memory RGF1 payload to a probability grid."""
    if len(data) < _RGF_HEADER.size:
        raise GridFormatError("RGF1 payload shorter than its header")
    magic, width, height = _RGF_HEADER.unpack_from(data)
    if magic != _RGF_MAGIC:
        raise GridFormatError(f"bad RGF1 magic {magic!r}")
    expected = _RGF_HEADER.size + 4 * width * height
    if len(data) != expected:
        raise GridFormatError(
            f"RGF1 payload has {len(data)} bytes, expected {expected} for {width}x{height}"
        )
    values = np.frombuffer(data, dtype="<f4", offset=_RGF_HEADER.size).reshape(height, width)
    try:
        return RasterGrid(values.astype(np.float32), transform, "probability")
    except ParameterError as exc:
        raise GridFormatError(f"RGF1 values invalid: {exc}") from exc


def encode_rgf(grid: RasterGrid) -> bytes:
    header = _RGF_HEADER.pack(_RGF_MAGIC, grid.width, grid.height)
    return header + np.ascontiguousarray(grid.values, dtype="<f4").tobytes()


def read_rgf(path: Path, transform: GeoTransform | None = None) -> RasterGrid:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise GridFormatError(f"Cannot read RGF1 {path}: {exc}") from exc
    try:
        return decode_rgf(data, resolve_transform(path, transform))
    except GridFormatError as exc:
        raise GridFormatError(f"{path}: {exc}") from exc


def write_rgf(path: Path, grid: RasterGrid, world_file: bool = True) -> None:
    Path(path).write_bytes(encode_rgf(grid))
    if world_file:
        write_world_file(world_file_path(path), grid.transform)


# ---------------------------------------------------------------------------
# Suffix dispatch
# ---------------------------------------------------------------------------


def read_grid(
    path: Path, kind: GridKind = "probability", transform: GeoTransform | None = None
) -> RasterGrid:
    """Read a ``.pgm`` or ``.rgf`` grid, choosing the codec by suffix."""
    suffix = Path(path).suffix.lower()
    if suffix == ".pgm":
        return read_pgm(path, kind=kind, transform=transform)
    if suffix == ".rgf":
        grid = read_rgf(path, transform=transform)
        if kind == "binary":
            return RasterGrid((grid.values >= 0.5).astype(np.uint8), grid.transform, "binary")
        return grid
    raise GridFormatError(f"Unsupported grid suffix {suffix!r} for {path}")


def write_grid(path: Path, grid: RasterGrid, world_file: bool = True) -> None:
    suffix = Path(path).suffix.lower()
    if suffix == ".pgm":
        write_pgm(path, grid, world_file=world_file)
    elif suffix == ".rgf":
        write_rgf(path, grid.as_probability(), world_file=world_file)
    else:
        raise GridFormatError(f"Unsupported grid suffix {suffix!r} for {path}")
