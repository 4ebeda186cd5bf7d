"""Command-line interface for the road-graph toolkit.

Entry point: ``roadgraph`` (configured in ``pyproject.toml``).

Usage:
    roadgraph rasterize   --roads roads.geojson --out mask.pgm
    roadgraph clean       --mask prob.pgm --out binary.pgm
    roadgraph skeletonize --mask binary.pgm --out skeleton.pgm
    roadgraph extract     --mask prob.pgm --out graph.geojson
    roadgraph stitch      --tiles DIR --window 1300 --overlap 260 --out graph.geojson
    roadgraph refine      --graph raw.geojson --out graph.geojson
    roadgraph eval-apls   --gt gt.geojson --prop prop.geojson [--midpoints] [--one-way]
    roadgraph eval-topo   --gt gt.geojson --prop prop.geojson --hole 4.0
    roadgraph route       --graph graph.geojson --from "x,y" --to "x,y"
    roadgraph bench       --size 10000
    roadgraph fixture     --kind grid_city --out-dir DIR
    roadgraph average     report1.json report2.json ...

Every tunable resolves as: built-in default < ``--config file.json`` <
explicit flag. ``--threads`` (or ROADGRAPH_THREADS, also read from ``.env``)
sets worker parallelism and never changes results.

Reports are JSON on stdout; diagnostics go to stderr. Exit codes: 0 ok,
2 usage or parameter error, 3 data error, 4 unreachable route.
"""

import argparse
import json
import logging
import math
import os
import statistics
import sys
from pathlib import Path
from typing import Callable

from dotenv import load_dotenv
from pydantic import ValidationError

from roadgraph.apls import apls
from roadgraph.fixtures import FIXTURE_KINDS, FixtureParams, make_fixture
from roadgraph.geojson import (
    format_number,
    read_graph_geojson,
    read_network_geojson,
    read_roads_geojson,
    route_feature,
    write_graph_geojson,
    write_roads_geojson,
)
from roadgraph.graph import refine, skeleton_to_graph
from roadgraph.gridio import read_grid, write_grid
from roadgraph.log import setup_logging
from roadgraph.models import (
    ConfigurationError,
    GeoTransform,
    ParameterError,
    PipelineConfig,
    RoadGraphError,
    RuntimeConfig,
    UnreachableError,
)
from roadgraph.raster import clean_mask, rasterize_centerlines, skeletonize
from roadgraph.routing import nearest_node, shortest_route
from roadgraph.tiling import DirectoryTileProvider, extract_graph, run_benchmark, stitch
from roadgraph.topo import topo

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_UNREACHABLE = 4

THREADS_ENV = "ROADGRAPH_THREADS"


def _positive_int(value: str) -> int:
    parsed = int(value)
    if parsed < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return parsed


def _point(value: str) -> tuple[float, float]:
    try:
        x, y = (float(v) for v in value.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected 'x,y', got {value!r}") from exc
    if not (math.isfinite(x) and math.isfinite(y)):
        raise argparse.ArgumentTypeError(f"coordinates must be finite, got {value!r}")
    return x, y


# ---------------------------------------------------------------------------
# Tunable flags (dest == PipelineConfig field, default suppressed)
# ---------------------------------------------------------------------------

_TUNABLES: dict[str, list[tuple[str, str, dict]]] = {
    "raster": [
        ("--halfwidth", "halfwidth_m", {"type": float, "metavar": "M"}),
    ],
    "clean": [
        ("--threshold", "threshold", {"type": float, "metavar": "T"}),
        ("--open-radius", "open_radius_px", {"type": int, "metavar": "PX"}),
        ("--close-radius", "close_radius_px", {"type": int, "metavar": "PX"}),
        ("--smooth-radius", "smooth_radius_px", {"type": int, "metavar": "PX"}),
        ("--morph-order", "morph_order", {"choices": ["close_open", "open_close"]}),
    ],
    "refine": [
        ("--min-subgraph", "min_subgraph_m", {"type": float, "metavar": "M"}),
        ("--max-spur", "max_spur_px", {"type": float, "metavar": "PX"}),
        ("--max-gap", "max_gap_px", {"type": float, "metavar": "PX"}),
        ("--refine-order", "refine_order", {"metavar": "STEPS"}),
        ("--spur-fixed-point", "spur_fixed_point", {"action": argparse.BooleanOptionalAction}),
        ("--gap-passes", "gap_passes", {"type": int, "metavar": "N"}),
    ],
    "tile": [
        ("--window", "window_px", {"type": int, "metavar": "PX"}),
        ("--overlap", "overlap_px", {"type": int, "metavar": "PX"}),
    ],
    "apls": [
        ("--n-control", "n_control", {"type": int, "metavar": "N"}),
        ("--buffer", "snap_buffer_m", {"type": float, "metavar": "M"}),
        ("--midpoints", "inject_midpoints", {"action": "store_const", "const": True}),
        ("--one-way", "symmetric", {"action": "store_const", "const": False}),
        ("--seed", "rng_seed", {"type": int, "metavar": "SEED"}),
    ],
    "topo": [
        ("--hole", "hole_size_m", {"type": float, "metavar": "M"}),
        ("--radius", "radius_m", {"type": float, "metavar": "M"}),
        ("--sample-spacing", "sample_spacing_m", {"type": float, "metavar": "M"}),
        ("--seed-spacing", "seed_spacing_m", {"type": float, "metavar": "M"}),
        ("--seed", "rng_seed", {"type": int, "metavar": "SEED"}),
        ("--max-seeds", "max_seeds", {"type": int, "metavar": "N"}),
    ],
}


def _add_tunables(parser: argparse.ArgumentParser, *groups: str) -> None:
    seen = set()
    for group in groups:
        for flag, dest, kwargs in _TUNABLES[group]:
            if flag in seen:
                continue
            seen.add(flag)
            parser.add_argument(flag, dest=dest, default=argparse.SUPPRESS, **kwargs)


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    """Merge defaults, the optional ``--config`` file and explicit flags."""
    values = {}
    if getattr(args, "config", None):
        values = PipelineConfig.from_file(Path(args.config)).model_dump()
    fields = {dest for group in _TUNABLES.values() for _, dest, _ in group}
    values.update({name: getattr(args, name) for name in fields if hasattr(args, name)})
    return PipelineConfig(**values)


def resolve_runtime(args: argparse.Namespace) -> RuntimeConfig:
    """Build the RuntimeConfig; ``--threads`` wins over ROADGRAPH_THREADS."""
    threads = getattr(args, "threads", None)
    if threads is None:
        raw = os.environ.get(THREADS_ENV, "1")
        try:
            threads = int(raw)
        except ValueError as exc:
            raise ConfigurationError(f"{THREADS_ENV} must be an integer, got {raw!r}") from exc
        if threads < 1:
            raise ConfigurationError(f"{THREADS_ENV} must be >= 1, got {threads}")
    return RuntimeConfig(
        threads=threads,
        verbose=args.verbose,
        log_file=Path(args.log_file) if args.log_file else None,
        assume_meters=args.assume_meters,
    )


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------


def _round_floats(value):
    if isinstance(value, float):
        return format_number(value)
    if isinstance(value, dict):
        return {k: _round_floats(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_round_floats(v) for v in value]
    return value


def _emit_json(payload: dict) -> None:
    sys.stdout.write(json.dumps(_round_floats(payload), indent=2) + "\n")


def _emit_bytes(data: bytes, out: str | None) -> None:
    if out:
        Path(out).write_bytes(data)
        logger.info("Written: %s", out)
    else:
        sys.stdout.write(data.decode("utf-8") + "\n")


def _read_bytes(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise ConfigurationError(f"Cannot read {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_rasterize(args, config: PipelineConfig, runtime: RuntimeConfig) -> None:
    roads = read_roads_geojson(_read_bytes(args.roads), assume_meters=runtime.assume_meters)
    if args.width and args.height and args.origin:
        width, height = args.width, args.height
        x0, y_top = args.origin
    else:
        if not len(roads):
            raise ParameterError("cannot infer the raster extent of an empty label set")
        pts = [p for line in roads.lines for p in line]
        margin = config.halfwidth_m + args.pixel_size
        x0 = math.floor(min(p[0] for p in pts) - margin)
        y_top = math.ceil(max(p[1] for p in pts) + margin)
        x1 = max(p[0] for p in pts) + margin
        y0 = min(p[1] for p in pts) - margin
        width = args.width or math.ceil((x1 - x0) / args.pixel_size)
        height = args.height or math.ceil((y_top - y0) / args.pixel_size)
    transform = GeoTransform.north_up(args.pixel_size, x0, y_top)
    mask = rasterize_centerlines(roads, width, height, transform, config.halfwidth_m)
    write_grid(Path(args.out), mask)
    logger.info("Rasterized %d lines into %dx%d mask %s", len(roads), width, height, args.out)


def _cmd_clean(args, config: PipelineConfig, runtime: RuntimeConfig) -> None:
    mask = read_grid(Path(args.mask), kind="probability")
    write_grid(Path(args.out), clean_mask(mask, config.clean_params()))


def _cmd_skeletonize(args, config: PipelineConfig, runtime: RuntimeConfig) -> None:
    mask = read_grid(Path(args.mask), kind="binary")
    write_grid(Path(args.out), skeletonize(mask))


def _cmd_extract(args, config: PipelineConfig, runtime: RuntimeConfig) -> None:
    if args.skeleton:
        net = skeleton_to_graph(read_grid(Path(args.mask), kind="binary"))
        if args.refine:
            net = refine(net, config.refine_params())
    elif args.refine:
        mask = read_grid(Path(args.mask), kind="probability")
        net = extract_graph(mask, config.clean_params(), config.refine_params())
    else:
        mask = read_grid(Path(args.mask), kind="probability")
        net = skeleton_to_graph(skeletonize(clean_mask(mask, config.clean_params())))
    _emit_bytes(write_graph_geojson(net), args.out)


def _cmd_stitch(args, config: PipelineConfig, runtime: RuntimeConfig) -> None:
    provider = DirectoryTileProvider(Path(args.tiles))
    mask = stitch(provider, config.tile_params(), threads=runtime.threads)
    if args.mask_out:
        write_grid(Path(args.mask_out), mask)
    net = extract_graph(mask, config.clean_params(), config.refine_params())
    _emit_bytes(write_graph_geojson(net), args.out)


def _cmd_refine(args, config: PipelineConfig, runtime: RuntimeConfig) -> None:
    net = read_graph_geojson(_read_bytes(args.graph), assume_meters=runtime.assume_meters)
    _emit_bytes(write_graph_geojson(refine(net, config.refine_params())), args.out)


def _load_pair(args, runtime: RuntimeConfig):
    gt = read_network_geojson(_read_bytes(args.gt), assume_meters=runtime.assume_meters)
    prop = read_network_geojson(_read_bytes(args.prop), assume_meters=runtime.assume_meters)
    return gt, prop


def _cmd_eval_apls(args, config: PipelineConfig, runtime: RuntimeConfig) -> None:
    gt, prop = _load_pair(args, runtime)
    report = apls(gt, prop, config.apls_params(), threads=runtime.threads)
    _emit_json(report.model_dump())


def _cmd_eval_topo(args, config: PipelineConfig, runtime: RuntimeConfig) -> None:
    gt, prop = _load_pair(args, runtime)
    report = topo(gt, prop, config.topo_params(), threads=runtime.threads)
    _emit_json(report.model_dump())


def _cmd_route(args, config: PipelineConfig, runtime: RuntimeConfig) -> None:
    net = read_network_geojson(_read_bytes(args.graph), assume_meters=runtime.assume_meters)
    src = nearest_node(net, args.src)
    dst = nearest_node(net, args.dst)
    route = shortest_route(net, src, dst)
    _emit_bytes(
        route_feature(route.geometry, route.total_length_m, len(route.node_sequence)), args.out
    )


def _cmd_bench(args, config: PipelineConfig, runtime: RuntimeConfig) -> None:
    report = run_benchmark(
        size_px=args.size,
        pixel_size_m=args.pixel_size,
        street_spacing_px=args.spacing,
        tile_params=config.tile_params(),
        clean=config.clean_params(),
        refine_params=config.refine_params(),
        threads=runtime.threads,
    )
    _emit_json(report.model_dump())


def _cmd_fixture(args, config: PipelineConfig, runtime: RuntimeConfig) -> None:
    params = FixtureParams(pixel_size_m=args.pixel_size, halfwidth_m=config.halfwidth_m)
    fixture = make_fixture(args.kind, params, seed=args.seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_grid(out_dir / "mask.pgm", fixture.mask)
    (out_dir / "roads.geojson").write_bytes(write_roads_geojson(fixture.roads))
    (out_dir / "graph.geojson").write_bytes(write_graph_geojson(fixture.graph))
    _emit_json(
        {
            "kind": args.kind,
            "seed": args.seed,
            "width": fixture.mask.width,
            "height": fixture.mask.height,
            "n_lines": len(fixture.roads),
            "n_nodes": fixture.graph.n_nodes,
            "n_edges": fixture.graph.n_edges,
            "total_length_m": fixture.graph.total_length_m(),
        }
    )


def average_reports(reports: list[dict]) -> dict:
    """Mean and population standard deviation of every numeric top-level field."""
    columns: dict[str, list[float]] = {}
    for report in reports:
        for key, value in report.items():
            if isinstance(value, (int, float)) and not isinstance(value, bool):
                columns.setdefault(key, []).append(float(value))
    return {
        "n_reports": len(reports),
        "fields": {
            key: {"mean": statistics.fmean(vals), "std": statistics.pstdev(vals), "n": len(vals)}
            for key, vals in columns.items()
        },
    }


def _cmd_average(args, config: PipelineConfig, runtime: RuntimeConfig) -> None:
    reports = []
    for path in args.reports:
        try:
            reports.append(json.loads(_read_bytes(path)))
        except json.JSONDecodeError as exc:
            raise ParameterError(f"{path} is not a JSON report: {exc}") from exc
    _emit_json(average_reports(reports))


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def main(argv: list[str] | None = None) -> None:
    """Parse CLI arguments, run one subcommand and exit with its status code."""
    load_dotenv()

    parser = _build_parser()
    args = parser.parse_args(argv)
    setup_logging(verbose=args.verbose, log_file=Path(args.log_file) if args.log_file else None)

    handler: Callable = args.handler
    try:
        runtime = resolve_runtime(args)
        config = resolve_config(args)
        handler(args, config, runtime)
    except UnreachableError as exc:
        logger.error("%s", exc)
        sys.exit(EXIT_UNREACHABLE)
    except (ParameterError, ConfigurationError, ValidationError) as exc:
        logger.error("%s", exc)
        sys.exit(EXIT_USAGE)
    except (RoadGraphError, OSError) as exc:
        logger.error("%s", exc)
        sys.exit(EXIT_DATA)


# ---------------------------------------------------------------------------
# Argument parser
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config",
        metavar="FILE",
        default=None,
        help="JSON object of PipelineConfig fields; explicit flags override it.",
    )
    common.add_argument(
        "--threads",
        metavar="N",
        type=_positive_int,
        default=None,
        help=f"Worker threads (default: {THREADS_ENV} env var, else 1).",
    )
    common.add_argument(
        "--verbose",
        action=argparse.BooleanOptionalAction,
        default=False,
        help="Enable DEBUG-level logging (default: off).",
    )
    common.add_argument(
        "--log-file",
        metavar="FILE",
        default=None,
        help="Also write DEBUG-level log output to FILE.",
    )
    common.add_argument(
        "--assume-meters",
        action="store_true",
        default=False,
        help="Accept GeoJSON whose coordinates look geographic (degrees).",
    )

    parser = argparse.ArgumentParser(
        prog="roadgraph",
        description="Road-network extraction from segmentation masks and graph evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def command(name: str, handler, help_text: str, *groups: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        p.set_defaults(handler=handler)
        _add_tunables(p, *groups)
        return p

    p = command("rasterize", _cmd_rasterize, "Burn road centerlines into a binary mask.", "raster")
    p.add_argument("--roads", metavar="GEOJSON", required=True)
    p.add_argument("--out", metavar="MASK", required=True, help="Output .pgm or .rgf (+ .wld).")
    p.add_argument("--pixel-size", metavar="M", type=float, default=0.3)
    p.add_argument("--width", metavar="PX", type=_positive_int, default=None)
    p.add_argument("--height", metavar="PX", type=_positive_int, default=None)
    p.add_argument(
        "--origin", metavar="X,Y", type=_point, default=None,
        help="Geo position of the raster's top-left corner (default: from the labels).",
    )

    p = command("clean", _cmd_clean, "Threshold, close/open and smooth a probability mask.", "clean")
    p.add_argument("--mask", metavar="GRID", required=True)
    p.add_argument("--out", metavar="GRID", required=True)

    p = command("skeletonize", _cmd_skeletonize, "Thin a binary mask to a skeleton.")
    p.add_argument("--mask", metavar="GRID", required=True)
    p.add_argument("--out", metavar="GRID", required=True)

    p = command(
        "extract", _cmd_extract, "Extract a road graph from one probability mask.", "clean", "refine"
    )
    p.add_argument("--mask", metavar="GRID", required=True)
    p.add_argument("--out", metavar="GEOJSON", default=None, help="Default: stdout.")
    p.add_argument(
        "--skeleton", action="store_true", default=False,
        help="Input is already a skeleton; skip cleaning and thinning.",
    )
    p.add_argument(
        "--refine", action=argparse.BooleanOptionalAction, default=True,
        help="Apply graph refinement (default: on).",
    )

    p = command(
        "stitch", _cmd_stitch, "Stitch per-tile masks and extract one graph.",
        "tile", "clean", "refine",
    )
    p.add_argument("--tiles", metavar="DIR", required=True)
    p.add_argument("--out", metavar="GEOJSON", default=None, help="Default: stdout.")
    p.add_argument("--mask-out", metavar="GRID", default=None, help="Also write the stitched mask.")

    p = command("refine", _cmd_refine, "Prune spurs, bridge gaps and drop small subgraphs.", "refine")
    p.add_argument("--graph", metavar="GEOJSON", required=True)
    p.add_argument("--out", metavar="GEOJSON", default=None, help="Default: stdout.")

    p = command("eval-apls", _cmd_eval_apls, "Score a proposal graph with APLS.", "apls")
    p.add_argument("--gt", metavar="GEOJSON", required=True)
    p.add_argument("--prop", metavar="GEOJSON", required=True)

    p = command("eval-topo", _cmd_eval_topo, "Score a proposal graph with TOPO.", "topo")
    p.add_argument("--gt", metavar="GEOJSON", required=True)
    p.add_argument("--prop", metavar="GEOJSON", required=True)

    p = command("route", _cmd_route, "Shortest route between two geo points.")
    p.add_argument("--graph", metavar="GEOJSON", required=True)
    p.add_argument("--from", dest="src", metavar="X,Y", type=_point, required=True)
    p.add_argument("--to", dest="dst", metavar="X,Y", type=_point, required=True)
    p.add_argument("--out", metavar="GEOJSON", default=None, help="Default: stdout.")

    p = command(
        "bench", _cmd_bench, "Time post-processing on a synthetic city mask.",
        "tile", "clean", "refine",
    )
    p.add_argument("--size", metavar="PX", type=_positive_int, default=10000)
    p.add_argument("--pixel-size", metavar="M", type=float, default=0.3)
    p.add_argument("--spacing", metavar="PX", type=_positive_int, default=100)

    p = command("fixture", _cmd_fixture, "Write a synthetic scene (mask, roads, graph).", "raster")
    p.add_argument("--kind", choices=FIXTURE_KINDS, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pixel-size", metavar="M", type=float, default=0.3)
    p.add_argument("--out-dir", metavar="DIR", required=True)

    p = command("average", _cmd_average, "Mean and std of numeric fields across JSON reports.")
    p.add_argument("reports", metavar="REPORT", nargs="+")

    return parser


if __name__ == "__main__":
    main()
