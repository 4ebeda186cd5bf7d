"""GeoJSON input and output for road labels, graphs and routes.

Coordinates must be in a projected, metre-based CRS. Input that looks
geographic (a ``crs`` naming EPSG:4326 / CRS84, or no ``crs`` and every
coordinate within lon/lat bounds spanning at most one degree) is rejected
unless ``assume_meters`` is set.

Output is deterministic: coordinates are written with Python's shortest
round-trip ``repr`` so they re-read bit-exactly, and derived numbers
(lengths, scores) with 9 significant digits.
"""

import json
import logging
import math

import numpy as np
from shapely.geometry import shape
from shapely.geometry.base import BaseGeometry

from roadgraph.graph import (
    RoadNetwork,
    add_edge_from_geo,
    add_node_geo,
    oriented_paths,
    roads_to_network,
)
from roadgraph.models import (
    ConfigurationError,
    CoordinateUnitsError,
    GeoJSONParseError,
    GeoTransform,
)
from roadgraph.raster import VectorRoadSet

logger = logging.getLogger(__name__)

_GEOGRAPHIC_CRS_TOKENS = ("4326", "CRS84")
_MAX_DEGREE_SPAN = 1.0
_LINE_TYPES = ("LineString", "MultiLineString")
# Pixel coordinates recovered through a transform are rounded to this many decimals.
PIXEL_DECIMALS = 6

# ---------------------------------------------------------------------------
# Parsing helpers
# ---------------------------------------------------------------------------


def _reject_constant(name: str):
    raise ValueError(f"non-finite number {name} is not allowed")


def load_json(data: bytes) -> dict:
    """Decode a GeoJSON FeatureCollection.

    Raises:
        GeoJSONParseError: on invalid UTF-8 or JSON (with the byte offset), on
            NaN/Infinity literals, or if the document is not a FeatureCollection.
    """
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise GeoJSONParseError(f"invalid UTF-8 at byte {exc.start}", offset=exc.start) from exc
    try:
        doc = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise GeoJSONParseError(f"malformed JSON at byte {offset}: {exc.msg}", offset=offset) from exc
    except ValueError as exc:
        raise GeoJSONParseError(str(exc)) from exc
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise GeoJSONParseError("input is not a GeoJSON FeatureCollection")
    if not isinstance(doc.get("features"), list):
        raise GeoJSONParseError("FeatureCollection has no 'features' array")
    return doc


def _all_positions(doc: dict):
    for feature in doc["features"]:
        geometry = (feature or {}).get("geometry") or {}
        stack = [geometry.get("coordinates")]
        while stack:
            item = stack.pop()
            if isinstance(item, list) and item and all(isinstance(v, (int, float)) for v in item):
                yield item
            elif isinstance(item, list):
                stack.extend(item)


def looks_geographic(doc: dict) -> bool:
    """True if the collection's coordinates are probably lon/lat degrees."""
    crs = doc.get("crs")
    if crs is not None:
        name = str((crs.get("properties") or {}).get("name", "")) if isinstance(crs, dict) else ""
        return any(token in name.upper() for token in _GEOGRAPHIC_CRS_TOKENS)
    positions = list(_all_positions(doc))
    if not positions:
        return False
    xs = [p[0] for p in positions]
    ys = [p[1] for p in positions if len(p) > 1]
    if not ys:
        return False
    in_bounds = all(-180.0 <= x <= 180.0 for x in xs) and all(-90.0 <= y <= 90.0 for y in ys)
    return in_bounds and max(xs) - min(xs) <= _MAX_DEGREE_SPAN and max(ys) - min(ys) <= _MAX_DEGREE_SPAN


def _check_units(doc: dict, assume_meters: bool) -> None:
    if looks_geographic(doc) and not assume_meters:
        raise CoordinateUnitsError(
            "coordinates look geographic (degrees); reproject to a metric CRS "
            "or pass --assume-meters"
        )


def _geometry(feature: dict, index: int) -> BaseGeometry | None:
    geometry = feature.get("geometry") if isinstance(feature, dict) else None
    if not geometry:
        return None
    try:
        return shape(geometry)
    except Exception as exc:
        # shapely refuses lines with a single position
        if isinstance(geometry, dict) and geometry.get("type") in _LINE_TYPES:
            logger.warning("Feature %d: degenerate %s skipped (%s)", index, geometry["type"], exc)
            return None
        raise GeoJSONParseError(f"feature {index}: invalid geometry: {exc}") from exc


def _line_coords(coords: np.ndarray, index: int) -> np.ndarray | None:
    """2-D coordinates with consecutive duplicates dropped; None if degenerate."""
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or len(coords) < 2:
        logger.warning("Feature %d: line with fewer than 2 points skipped", index)
        return None
    coords = coords[:, :2]
    if not np.isfinite(coords).all():
        raise GeoJSONParseError(f"feature {index}: non-finite coordinate")
    if len(coords) > 1:
        keep = np.concatenate([[True], (np.diff(coords, axis=0) != 0).any(axis=1)])
        coords = coords[keep]
    if len(coords) < 2:
        logger.warning("Feature %d: line with fewer than 2 distinct points skipped", index)
        return None
    return coords


# ---------------------------------------------------------------------------
# Road labels
# ---------------------------------------------------------------------------


def read_roads_geojson(data: bytes, assume_meters: bool = False) -> VectorRoadSet:
    """Parse a FeatureCollection of LineString / MultiLineString road centerlines.

    Each LineString becomes one polyline; each MultiLineString part becomes
    one polyline. Other features are skipped and counted in a warning.
    Feature properties are kept per polyline.
    """
    doc = load_json(data)
    _check_units(doc, assume_meters)
    lines, attributes = [], []
    skipped = 0
    for index, feature in enumerate(doc["features"]):
        geom = _geometry(feature, index)
        if geom is None or geom.geom_type not in _LINE_TYPES:
            skipped += 1
            continue
        parts = [geom] if geom.geom_type == "LineString" else list(geom.geoms)
        props = dict(feature.get("properties") or {})
        for part in parts:
            coords = _line_coords(np.asarray(part.coords), index)
            if coords is not None:
                lines.append(coords)
                attributes.append(props)
    if skipped:
        logger.warning("Skipped %d unusable feature(s)", skipped)
    if not lines:
        logger.warning("No usable road lines in input")
    return VectorRoadSet(lines=tuple(lines), attributes=tuple(attributes))


def _position(point) -> list[float]:
    return [float(point[0]), float(point[1])]


def _sig9(value: float) -> float:
    return float(f"{value:.9g}")


def _dump(doc: dict) -> bytes:
    return json.dumps(doc, allow_nan=False, separators=(",", ":")).encode("utf-8")


def write_roads_geojson(roads: VectorRoadSet) -> bytes:
    """Serialize road centerlines as LineString features, coordinates verbatim."""
    features = [
        {
            "type": "Feature",
            "properties": dict(attrs),
            "geometry": {"type": "LineString", "coordinates": [_position(p) for p in line]},
        }
        for line, attrs in zip(roads.lines, roads.attributes)
    ]
    return _dump({"type": "FeatureCollection", "features": features})


# ---------------------------------------------------------------------------
# Graphs
# ---------------------------------------------------------------------------


def graph_to_geojson(g: RoadNetwork) -> dict:
    """Point per node (ascending id), LineString per edge (ascending u, v, length_m).

    A non-identity registration is kept in a top-level ``transform`` member
    (the six affine coefficients) so pixel lengths survive a round trip.
    """
    features = []
    for node in g.node_ids():
        features.append(
            {
                "type": "Feature",
                "properties": {"id": node},
                "geometry": {"type": "Point", "coordinates": _position(g.geo_of(node))},
            }
        )
    edges = sorted(g.edges(), key=lambda e: (e[0], e[1], e[3]["length_m"]))
    for u, v, _, data in edges:
        _, geo = oriented_paths(data, u)
        features.append(
            {
                "type": "Feature",
                "properties": {
                    "u": u,
                    "v": v,
                    "length_m": _sig9(data["length_m"]),
                    "length_px": _sig9(data["length_px"]),
                },
                "geometry": {"type": "LineString", "coordinates": [_position(p) for p in geo]},
            }
        )
    doc = {"type": "FeatureCollection"}
    if g.transform != GeoTransform.identity():
        t = g.transform
        doc["transform"] = [float(v) for v in (t.a, t.b, t.c, t.d, t.e, t.f)]
    doc["features"] = features
    return doc


def _registration(doc: dict) -> GeoTransform | None:
    coeffs = doc.get("transform")
    if coeffs is None:
        return None
    if (
        not isinstance(coeffs, list)
        or len(coeffs) != 6
        or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in coeffs)
    ):
        raise GeoJSONParseError("'transform' must be a list of six numbers")
    try:
        return GeoTransform(*(float(v) for v in coeffs))
    except ConfigurationError as exc:
        raise GeoJSONParseError(f"unusable 'transform': {exc}") from exc


def write_graph_geojson(g: RoadNetwork) -> bytes:
    return _dump(graph_to_geojson(g))


def read_graph_geojson(data: bytes, assume_meters: bool = False) -> RoadNetwork:
    """Rebuild a RoadNetwork from ``write_graph_geojson`` output.

    With a ``transform`` member the network gets that registration back:
    pixel coordinates are recovered from the geo coordinates (rounded to
    ``PIXEL_DECIMALS``) and ``length_px`` is recomputed from them. Without
    one the network uses the identity transform, so pixel coordinates equal
    geo coordinates, and ``length_px`` comes from the edge properties when
    present.

    Raises:
        GeoJSONParseError: if a Point lacks an integer ``id`` or a LineString
            references an unknown node.
    """
    doc = load_json(data)
    _check_units(doc, assume_meters)
    registered = _registration(doc)
    transform = registered or GeoTransform.identity()
    decimals = PIXEL_DECIMALS if registered is not None else None
    net = RoadNetwork.empty(transform)
    lines = []
    for index, feature in enumerate(doc["features"]):
        geom = _geometry(feature, index)
        props = feature.get("properties") or {}
        if geom is None:
            continue
        if geom.geom_type == "Point":
            node = props.get("id")
            if not isinstance(node, int) or isinstance(node, bool):
                raise GeoJSONParseError(f"feature {index}: Point without an integer 'id'")
            coords = np.asarray(geom.coords, dtype=np.float64)[0, :2]
            if not np.isfinite(coords).all():
                raise GeoJSONParseError(f"feature {index}: non-finite coordinate")
            add_node_geo(net.graph, node, coords, transform, pixel_decimals=decimals)
        elif geom.geom_type == "LineString":
            lines.append((index, props, geom))
    for index, props, geom in lines:
        u, v = props.get("u"), props.get("v")
        if u not in net.graph or v not in net.graph:
            raise GeoJSONParseError(f"feature {index}: edge endpoints {u!r}, {v!r} are not nodes")
        coords = _line_coords(np.asarray(geom.coords), index)
        if coords is None:
            continue
        length_px = props.get("length_px") if registered is None else None
        add_edge_from_geo(
            net.graph, u, v, coords, transform,
            length_px=float(length_px) if isinstance(length_px, (int, float)) else None,
            pixel_decimals=decimals,
        )
    logger.info("Loaded graph: %d nodes, %d edges", net.n_nodes, net.n_edges)
    return net


def is_graph_collection(doc: dict) -> bool:
    """True if any LineString feature carries ``u``/``v`` node references."""
    for feature in doc["features"]:
        props = (feature or {}).get("properties") or {}
        if "u" in props and "v" in props:
            return True
    return False


def read_network_geojson(data: bytes, assume_meters: bool = False) -> RoadNetwork:
    """Load either a graph collection or plain road centerlines as a RoadNetwork.

    Centerlines are converted with ``roads_to_network`` under the identity
    transform.
    """
    if is_graph_collection(load_json(data)):
        return read_graph_geojson(data, assume_meters=assume_meters)
    roads = read_roads_geojson(data, assume_meters=assume_meters)
    return roads_to_network(roads, GeoTransform.identity())


# ---------------------------------------------------------------------------
# Routes
# ---------------------------------------------------------------------------


def route_feature(geometry: np.ndarray, length_m: float, n_nodes: int) -> bytes:
    """A single LineString Feature describing a route."""
    coords = [_position(p) for p in geometry]
    if len(coords) == 1:
        coords = coords * 2
    return _dump(
        {
            "type": "Feature",
            "properties": {"length_m": _sig9(length_m), "n_nodes": n_nodes},
            "geometry": {"type": "LineString", "coordinates": coords},
        }
    )


def format_number(value: float) -> float:
    """Round a derived scalar to 9 significant digits (non-finite passes through)."""
    return _sig9(value) if math.isfinite(value) else value
