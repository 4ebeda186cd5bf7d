"""Tests for roadgraph/cli.py — argument parsing, configuration and subcommands."""

import argparse
import json

import pytest

from conftest import network
from roadgraph.cli import (
    EXIT_DATA,
    EXIT_UNREACHABLE,
    EXIT_USAGE,
    _build_parser,
    _point,
    average_reports,
    main,
    resolve_config,
    resolve_runtime,
)
from roadgraph.geojson import write_graph_geojson
from roadgraph.models import ConfigurationError, PipelineConfig


@pytest.fixture(autouse=True)
def _isolated_env(mocker, monkeypatch):
    """Keep a developer's .env and thread setting out of the tests."""
    mocker.patch("roadgraph.cli.load_dotenv")
    monkeypatch.delenv("ROADGRAPH_THREADS", raising=False)


def _write_graph(path, net):
    path.write_bytes(write_graph_geojson(net))
    return str(path)


def _run_json(capsys, argv):
    main(argv)
    return json.loads(capsys.readouterr().out)


def _exit_code(argv):
    with pytest.raises(SystemExit) as exc_info:
        main(argv)
    return exc_info.value.code


# ---------------------------------------------------------------------------
# Argument parser
# ---------------------------------------------------------------------------


def test_parser_requires_subcommand():
    """Running without a subcommand is a usage error."""
    with pytest.raises(SystemExit):
        _build_parser().parse_args([])


def test_parser_tunables_absent_unless_given():
    """Unset tunables stay off the namespace so config files can fill them."""
    args = _build_parser().parse_args(["eval-apls", "--gt", "a", "--prop", "b"])
    assert not hasattr(args, "n_control")
    assert not hasattr(args, "symmetric")
    assert args.threads is None
    assert args.verbose is False


def test_parser_apls_flags_map_to_config_fields():
    """APLS flags land on PipelineConfig field names."""
    args = _build_parser().parse_args(
        ["eval-apls", "--gt", "a", "--prop", "b", "--n-control", "50",
         "--buffer", "6", "--midpoints", "--one-way", "--seed", "7"]
    )
    assert args.n_control == 50
    assert args.snap_buffer_m == 6.0
    assert args.inject_midpoints is True
    assert args.symmetric is False
    assert args.rng_seed == 7


def test_parser_rejects_zero_threads():
    """--threads must be positive."""
    with pytest.raises(SystemExit):
        _build_parser().parse_args(["bench", "--threads", "0"])


@pytest.mark.parametrize("value,expected", [
    ("1,2", (1.0, 2.0)),
    ("500000.5,-3e2", (500000.5, -300.0)),
])
def test_point_parses(value, expected):
    """Points are 'x,y' pairs of floats."""
    assert _point(value) == expected


@pytest.mark.parametrize("value", ["1", "1,2,3", "a,b", "nan,1", "1,inf"])
def test_point_rejects(value):
    """Anything but two finite numbers is rejected."""
    with pytest.raises(argparse.ArgumentTypeError):
        _point(value)


# ---------------------------------------------------------------------------
# Configuration precedence
# ---------------------------------------------------------------------------


def test_resolve_config_defaults():
    """No file and no flags yields the built-in defaults."""
    args = _build_parser().parse_args(["eval-topo", "--gt", "a", "--prop", "b"])
    assert resolve_config(args) == PipelineConfig()


def test_resolve_config_flag_beats_file(tmp_path):
    """Config file values apply unless an explicit flag overrides them."""
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"n_control": 20, "snap_buffer_m": 6.0}))
    args = _build_parser().parse_args(
        ["eval-apls", "--gt", "a", "--prop", "b", "--config", str(config), "--n-control", "30"]
    )
    resolved = resolve_config(args)
    assert resolved.n_control == 30
    assert resolved.snap_buffer_m == 6.0


def test_resolve_runtime_env_fallback(monkeypatch):
    """ROADGRAPH_THREADS applies when --threads is absent; the flag wins otherwise."""
    monkeypatch.setenv("ROADGRAPH_THREADS", "3")
    parser = _build_parser()
    assert resolve_runtime(parser.parse_args(["bench"])).threads == 3
    assert resolve_runtime(parser.parse_args(["bench", "--threads", "2"])).threads == 2


@pytest.mark.parametrize("raw", ["many", "0"])
def test_resolve_runtime_bad_env(monkeypatch, raw):
    """An unusable ROADGRAPH_THREADS is a configuration error."""
    monkeypatch.setenv("ROADGRAPH_THREADS", raw)
    with pytest.raises(ConfigurationError):
        resolve_runtime(_build_parser().parse_args(["bench"]))


# ---------------------------------------------------------------------------
# Exit codes
# ---------------------------------------------------------------------------


def test_unknown_config_key_is_usage_error(tmp_path, square_network):
    """Config files with unknown keys exit with status 2."""
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"n_controls": 5}))
    gt = _write_graph(tmp_path / "gt.geojson", square_network)
    assert _exit_code(["eval-apls", "--gt", gt, "--prop", gt, "--config", str(config)]) == EXIT_USAGE


def test_missing_input_is_usage_error(tmp_path):
    """An unreadable input path exits with status 2."""
    missing = str(tmp_path / "nope.geojson")
    assert _exit_code(["eval-apls", "--gt", missing, "--prop", missing]) == EXIT_USAGE


def test_undefined_metric_is_data_error(tmp_path, square_network):
    """A ground truth without roads cannot be scored (status 3)."""
    empty = tmp_path / "empty.geojson"
    empty.write_text(json.dumps({"type": "FeatureCollection", "features": []}))
    prop = _write_graph(tmp_path / "prop.geojson", square_network)
    assert _exit_code(["eval-apls", "--gt", str(empty), "--prop", prop]) == EXIT_DATA


def test_malformed_geojson_is_data_error(tmp_path):
    """Broken JSON exits with status 3."""
    bad = tmp_path / "bad.geojson"
    bad.write_text('{"type": "FeatureCollection", "features": [')
    assert _exit_code(["route", "--graph", str(bad), "--from", "0,0", "--to", "1,1"]) == EXIT_DATA


def test_geographic_input_needs_assume_meters(tmp_path, capsys):
    """Degree coordinates are refused unless --assume-meters is passed."""
    roads = tmp_path / "roads.geojson"
    roads.write_text(json.dumps({
        "type": "FeatureCollection",
        "features": [{"type": "Feature", "properties": {},
                      "geometry": {"type": "LineString",
                                   "coordinates": [[13.40, 52.52], [13.41, 52.52]]}}],
    }))
    argv = ["route", "--graph", str(roads), "--from", "13.40,52.52", "--to", "13.41,52.52"]
    assert _exit_code(argv) == EXIT_DATA
    doc = _run_json(capsys, argv + ["--assume-meters"])
    assert doc["properties"]["n_nodes"] == 2


def test_unreachable_route_exit_code(tmp_path):
    """No path between the endpoints exits with status 4."""
    net = network(
        {0: (0.0, 0.0), 1: (10.0, 0.0), 2: (500.0, 0.0), 3: (510.0, 0.0)}, [(0, 1), (2, 3)]
    )
    graph = _write_graph(tmp_path / "g.geojson", net)
    argv = ["route", "--graph", graph, "--from", "0,0", "--to", "510,0"]
    assert _exit_code(argv) == EXIT_UNREACHABLE


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def test_eval_apls_identical(tmp_path, capsys, square_network):
    """A graph scored against itself reports 1.0 with the parameters echoed."""
    gt = _write_graph(tmp_path / "gt.geojson", square_network)
    report = _run_json(capsys, ["eval-apls", "--gt", gt, "--prop", gt, "--n-control", "4"])
    assert report["score"] == 1.0
    assert report["score_prop_to_gt"] == 1.0
    assert report["params"]["n_control"] == 4
    assert report["params"]["symmetric"] is True


def test_eval_apls_config_file(tmp_path, capsys, square_network):
    """Config file values reach the metric."""
    gt = _write_graph(tmp_path / "gt.geojson", square_network)
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"symmetric": False, "rng_seed": 9}))
    report = _run_json(capsys, ["eval-apls", "--gt", gt, "--prop", gt, "--config", str(config)])
    assert report["score_prop_to_gt"] is None
    assert report["params"]["rng_seed"] == 9


def test_eval_topo_identical(tmp_path, capsys, square_network):
    """Identical graphs give a TOPO F1 of 1."""
    gt = _write_graph(tmp_path / "gt.geojson", square_network)
    report = _run_json(
        capsys, ["eval-topo", "--gt", gt, "--prop", gt, "--radius", "1000", "--threads", "2"]
    )
    assert report["f1"] == 1.0
    assert report["params"]["radius_m"] == 1000.0


def test_route_output(tmp_path, capsys, square_network):
    """Routes snap endpoints to the nearest nodes and report length and node count."""
    graph = _write_graph(tmp_path / "g.geojson", square_network)
    doc = _run_json(capsys, ["route", "--graph", graph, "--from", "1,1", "--to", "99,99"])
    assert doc["type"] == "Feature"
    assert doc["properties"] == {"length_m": 141.421356, "n_nodes": 2}
    assert doc["geometry"]["coordinates"] == [[0.0, 0.0], [100.0, 100.0]]


def test_refine_drops_small_subgraph(tmp_path, capsys, square_network):
    """Refinement removes components shorter than --min-subgraph."""
    graph = _write_graph(tmp_path / "g.geojson", square_network)
    doc = _run_json(capsys, ["refine", "--graph", graph, "--min-subgraph", "1000"])
    assert doc == {"type": "FeatureCollection", "features": []}


def test_fixture_then_extract(tmp_path, capsys):
    """A generated fixture's mask extracts into a graph file."""
    out_dir = tmp_path / "scene"
    summary = _run_json(
        capsys,
        ["fixture", "--kind", "spur_forest", "--pixel-size", "0.5", "--out-dir", str(out_dir)],
    )
    assert summary["n_nodes"] == 10
    assert summary["n_edges"] == 9
    assert summary["width"] == summary["height"] == 800
    for name in ("mask.pgm", "mask.wld", "roads.geojson", "graph.geojson"):
        assert (out_dir / name).exists()

    out = tmp_path / "extracted.geojson"
    main(["extract", "--mask", str(out_dir / "mask.pgm"), "--out", str(out)])
    features = json.loads(out.read_text())["features"]
    assert any(f["geometry"]["type"] == "LineString" for f in features)


def test_rasterize_writes_registered_mask(tmp_path):
    """Rasterizing with an explicit extent writes the grid and its world file."""
    roads = tmp_path / "roads.geojson"
    roads.write_text(json.dumps({
        "type": "FeatureCollection",
        "features": [{"type": "Feature", "properties": {},
                      "geometry": {"type": "LineString",
                                   "coordinates": [[1000.0, 2010.0], [1040.0, 2010.0]]}}],
    }))
    out = tmp_path / "mask.pgm"
    main(["rasterize", "--roads", str(roads), "--out", str(out), "--pixel-size", "1",
          "--width", "50", "--height", "20", "--origin", "995,2020"])
    assert out.read_bytes().startswith(b"P5")
    assert (tmp_path / "mask.wld").exists()


@pytest.mark.parametrize("kind", ["spur_forest", "ring"])
def test_refining_a_saved_raw_graph_matches_extract(tmp_path, kind):
    """extract --no-refine followed by refine writes the same graph as extract."""
    scene = tmp_path / "scene"
    main(["fixture", "--kind", kind, "--pixel-size", "0.5", "--out-dir", str(scene)])
    mask = str(scene / "mask.pgm")
    direct, raw, refined = (tmp_path / f"{name}.geojson" for name in ("direct", "raw", "refined"))
    main(["extract", "--mask", mask, "--out", str(direct)])
    main(["extract", "--mask", mask, "--no-refine", "--out", str(raw)])
    main(["refine", "--graph", str(raw), "--out", str(refined)])
    assert "transform" in json.loads(raw.read_text())
    assert refined.read_bytes() == direct.read_bytes()


def test_bench_default_size():
    """The benchmark defaults to a 10 000 px square mask."""
    assert _build_parser().parse_args(["bench"]).size == 10000


# ---------------------------------------------------------------------------
# average
# ---------------------------------------------------------------------------


def test_average_reports_numeric_fields_only():
    """Booleans, None and nested objects are left out of the summary."""
    summary = average_reports([
        {"score": 0.5, "tp": 2, "ok": True, "score_prop_to_gt": None, "params": {"n": 1}},
        {"score": 1.0, "tp": 4, "ok": False, "score_prop_to_gt": None, "params": {"n": 1}},
    ])
    assert summary["n_reports"] == 2
    assert set(summary["fields"]) == {"score", "tp"}
    assert summary["fields"]["score"] == {"mean": 0.75, "std": 0.25, "n": 2}
    assert summary["fields"]["tp"]["mean"] == 3.0


def test_average_command(tmp_path, capsys):
    """The average subcommand reads report files and prints the summary."""
    paths = []
    for i, score in enumerate([0.2, 0.4, 0.6]):
        path = tmp_path / f"r{i}.json"
        path.write_text(json.dumps({"f1": score}))
        paths.append(str(path))
    summary = _run_json(capsys, ["average", *paths])
    assert summary["fields"]["f1"]["mean"] == pytest.approx(0.4)
    assert summary["fields"]["f1"]["n"] == 3


def test_average_rejects_non_json(tmp_path):
    """A file that is not JSON is a usage error."""
    path = tmp_path / "r.json"
    path.write_text("not json")
    assert _exit_code(["average", str(path)]) == EXIT_USAGE
