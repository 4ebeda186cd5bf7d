"""Tests for roadgraph/tiling.py — tile plan, stitching, large-image pipeline and benchmark."""

import numpy as np
import pytest
from scipy import ndimage

from roadgraph.apls import apls
from roadgraph.fixtures import FixtureParams, add_salt_and_pepper, make_fixture
from roadgraph.gridio import write_grid
from roadgraph.models import (
    DimensionError,
    GeoTransform,
    ParameterError,
    PlanningError,
    RefineParams,
    TileError,
    TileParams,
)
from roadgraph.raster import RasterGrid
from roadgraph.tiling import (
    ArrayTileProvider,
    DirectoryTileProvider,
    MaskAccumulator,
    Tile,
    extract_graph,
    extract_large,
    merge_models,
    merge_tiles,
    plan_tiles,
    run_benchmark,
    stitch,
    synthetic_city_mask,
)


def _dyadic_grid(shape, seed, transform=None) -> RasterGrid:
    """Random probabilities on a 1/64 lattice so sums stay exact."""
    rng = np.random.default_rng(seed)
    values = rng.integers(0, 65, size=shape) / 64.0
    return RasterGrid(values, transform or GeoTransform.identity())


# ---------------------------------------------------------------------------
# plan_tiles
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("extent,window,overlap,origins", [
    (2600, 1300, 260, [0, 1040, 1300]),
    (2000, 1300, 200, [0, 700]),
    (1300, 1300, 260, [0]),
    (3120, 1300, 260, [0, 1040, 1820]),
])
def test_plan_origins(extent, window, overlap, origins):
    """Origins step by the stride and the last window ends on the edge."""
    scheme = plan_tiles(extent, extent, window, overlap)
    assert sorted({t.col0 for t in scheme.tiles}) == origins
    assert sorted({t.row0 for t in scheme.tiles}) == origins
    assert len(scheme.tiles) == len(origins) ** 2


def test_plan_covers_every_pixel_with_full_windows():
    """Every pixel is covered and every tile has the full window size."""
    scheme = plan_tiles(257, 190, 64, 16)
    assert (scheme.coverage() >= 1).all()
    assert all(t.rows == 64 and t.cols == 64 for t in scheme.tiles)
    assert all(t.row0 + t.rows <= 190 and t.col0 + t.cols <= 257 for t in scheme.tiles)


def test_plan_clamps_window_to_small_extent():
    """A window larger than the image becomes one image-sized tile."""
    scheme = plan_tiles(100, 80, 1300, 260)
    assert scheme.tiles == (Tile(0, 0, 80, 100),)


@pytest.mark.parametrize("width,height,window,overlap", [
    (100, 100, 0, 0),
    (100, 100, 50, 50),
    (100, 100, 50, -1),
    (0, 100, 50, 10),
])
def test_plan_rejects_bad_parameters(width, height, window, overlap):
    """Empty extents, empty windows and overlaps outside [0, window) are rejected."""
    with pytest.raises(ParameterError):
        plan_tiles(width, height, window, overlap)


def test_plan_is_row_major():
    """Tiles are listed row by row."""
    tiles = plan_tiles(200, 200, 100, 20).tiles
    assert list(tiles) == sorted(tiles)


# ---------------------------------------------------------------------------
# merge_models / MaskAccumulator / merge_tiles
# ---------------------------------------------------------------------------


def test_merge_models_mean_is_order_independent():
    """The per-tile mean does not depend on model order."""
    grids = [_dyadic_grid((8, 8), s) for s in range(3)]
    forward = merge_models(grids)
    backward = merge_models(grids[::-1])
    assert np.array_equal(forward, backward)
    np.testing.assert_allclose(forward, np.mean([g.values for g in grids], axis=0))


def test_merge_models_shape_mismatch():
    """Model grids must share the tile shape."""
    with pytest.raises(DimensionError):
        merge_models([_dyadic_grid((4, 4), 0), _dyadic_grid((4, 5), 1)])
    with pytest.raises(DimensionError):
        merge_models([_dyadic_grid((4, 4), 0)], Tile(0, 0, 5, 5))


def test_merge_models_requires_a_grid():
    """An empty model list is a parameter error."""
    with pytest.raises(ParameterError):
        merge_models([])


def test_accumulator_averages_overlap():
    """Overlapping pixels hold the mean of the windows covering them."""
    acc = MaskAccumulator(2, 3)
    acc.add(Tile(0, 0, 2, 2), np.full((2, 2), 1.0))
    acc.add(Tile(0, 1, 2, 2), np.full((2, 2), 0.5))
    out = acc.result(GeoTransform.identity())
    np.testing.assert_allclose(out.values, [[1.0, 0.75, 0.5], [1.0, 0.75, 0.5]])


def test_accumulator_reports_uncovered_pixel():
    """A pixel no tile covered is a planning error."""
    acc = MaskAccumulator(2, 3)
    acc.add(Tile(0, 0, 2, 2), np.ones((2, 2)))
    with pytest.raises(PlanningError):
        acc.result(GeoTransform.identity())


def test_merge_tiles_of_constant_windows_is_exact():
    """Identical per-tile values stitch back to exactly that value."""
    scheme = plan_tiles(50, 40, 20, 5)
    value = 0.3
    tiles = [(t, [RasterGrid(np.full((t.rows, t.cols), value), GeoTransform.identity())]) for t in scheme.tiles]
    out = merge_tiles(tiles, scheme, n_models=1)
    assert np.array_equal(out.values, np.full((40, 50), np.float32(value)))


def test_merge_tiles_any_arrival_order():
    """Tile arrival order does not change the stitched mask."""
    full = [_dyadic_grid((60, 70), s) for s in range(2)]
    scheme = plan_tiles(70, 60, 25, 7)
    provider = ArrayTileProvider(full)
    pairs = [(t, provider.load(t)) for t in scheme.tiles]
    a = merge_tiles(pairs, scheme, n_models=2)
    b = merge_tiles(pairs[::-1], scheme, n_models=2)
    assert np.array_equal(a.values, b.values)


@pytest.mark.parametrize("case", ["missing", "unknown", "wrong_count"])
def test_merge_tiles_planning_errors(case):
    """Missing, foreign or under-populated tiles are planning errors."""
    scheme = plan_tiles(30, 30, 20, 5)

    def grid(t):
        return RasterGrid(np.zeros((t.rows, t.cols)), GeoTransform.identity())

    pairs = [(t, [grid(t)]) for t in scheme.tiles]
    if case == "missing":
        pairs = pairs[1:]
    elif case == "unknown":
        pairs.append((Tile(3, 3, 20, 20), [grid(Tile(3, 3, 20, 20))]))
    else:
        pairs[0] = (pairs[0][0], [])
    with pytest.raises(PlanningError):
        merge_tiles(pairs, scheme, n_models=1)


# ---------------------------------------------------------------------------
# Providers / stitch
# ---------------------------------------------------------------------------


def test_stitch_equals_whole_image_mean():
    """Stitching tiles cut from full grids reproduces the per-pixel model mean."""
    t = GeoTransform.north_up(0.5, 10.0, 50.0)
    full = [_dyadic_grid((90, 110), s, t) for s in range(3)]
    mask = stitch(ArrayTileProvider(full), TileParams(window_px=40, overlap_px=12))
    expected = np.sort(np.stack([g.values.astype(np.float64) for g in full]), axis=0).sum(axis=0) / 3
    assert np.array_equal(mask.values, expected.astype(np.float32))
    assert mask.transform == t


@pytest.mark.parametrize("threads", [1, 4])
def test_stitch_independent_of_thread_count(threads):
    """Results are bit-identical for any worker count."""
    full = [_dyadic_grid((64, 64), 7)]
    baseline = stitch(ArrayTileProvider(full), TileParams(window_px=24, overlap_px=8), threads=1)
    out = stitch(ArrayTileProvider(full), TileParams(window_px=24, overlap_px=8), threads=threads)
    assert np.array_equal(out.values, baseline.values)


def test_array_provider_tile_transform():
    """Each served window carries the transform shifted to its origin."""
    t = GeoTransform.north_up(1.0, 0.0, 100.0)
    provider = ArrayTileProvider([_dyadic_grid((50, 50), 0, t)])
    (window,) = provider.load(Tile(10, 20, 5, 5))
    assert window.transform.pixel_to_geo(0, 0) == t.pixel_to_geo(20, 10)


def test_stitch_wraps_tile_failures(mocker):
    """A failing tile surfaces as TileError naming the tile."""
    provider = ArrayTileProvider([_dyadic_grid((30, 30), 0)])
    mocker.patch.object(provider, "load", side_effect=OSError("disk gone"))
    with pytest.raises(TileError) as exc_info:
        stitch(provider, TileParams(window_px=20, overlap_px=5))
    assert isinstance(exc_info.value.cause, OSError)
    assert "disk gone" in str(exc_info.value)


def test_directory_provider_round_trip(tmp_path):
    """Tiles written as tile_{row0}_{col0}_{model}.rgf stitch like the in-memory grids."""
    t = GeoTransform.north_up(0.3, 500.0, 900.0)
    full = [_dyadic_grid((45, 52), s, t) for s in range(2)]
    params = TileParams(window_px=20, overlap_px=6)
    memory = ArrayTileProvider(full)
    for tile in plan_tiles(52, 45, params.window_px, params.overlap_px).tiles:
        for name, window in zip(("m0", "m1"), memory.load(tile)):
            write_grid(tmp_path / f"tile_{tile.row0}_{tile.col0}_{name}.rgf", window)
    provider = DirectoryTileProvider(tmp_path)
    assert (provider.width, provider.height, provider.n_models) == (52, 45, 2)
    stitched = stitch(provider, params)
    assert np.array_equal(stitched.values, stitch(memory, params).values)
    assert stitched.transform.pixel_to_geo(0, 0) == pytest.approx(t.pixel_to_geo(0, 0))


def test_directory_provider_empty_dir(tmp_path):
    """A directory without tiles is a planning error."""
    with pytest.raises(PlanningError):
        DirectoryTileProvider(tmp_path)


# ---------------------------------------------------------------------------
# extract_graph / extract_large
# ---------------------------------------------------------------------------


def _groups_of_junctions(net, radius_px: float = 10.0) -> int:
    pts = [net.pixel_of(n) for n in net.node_ids() if net.graph.degree(n) >= 3]
    if not pts:
        return 0
    marks = np.zeros((int(max(p[0] for p in pts)) + 1, int(max(p[1] for p in pts)) + 1), dtype=bool)
    for r, c in pts:
        marks[int(r), int(c)] = True
    grown = ndimage.binary_dilation(marks, iterations=int(radius_px // 2))
    return ndimage.label(grown, structure=np.ones((3, 3), dtype=bool))[1]


def test_extract_graph_records_stage_timings():
    """Every post-processing stage reports a duration."""
    timings = {}
    extract_graph(synthetic_city_mask(200, 100), timings=timings)
    assert set(timings) == {"clean", "skeletonize", "graph", "refine"}
    assert all(v >= 0 for v in timings.values())


def test_extract_graph_steps_progress_per_stage(mocker):
    """The extract progress bar advances once for each of the four stages."""
    bar_cls = mocker.patch("roadgraph.tiling.tqdm")
    bar = bar_cls.return_value.__enter__.return_value
    extract_graph(synthetic_city_mask(200, 100))
    assert bar_cls.call_args.kwargs["total"] == 4
    assert bar.update.call_count == 4


def test_extract_large_matches_whole_image_on_city_grid():
    """Tiled extraction finds the same street crossings as whole-image extraction."""
    mask = synthetic_city_mask(300, 100)
    refine_params = RefineParams(max_spur_px=15, max_gap_px=10, min_subgraph_m=20)
    whole = extract_graph(mask, refine_params=refine_params)
    tiled = extract_large(
        ArrayTileProvider([mask]), refine_params=refine_params,
        tile_params=TileParams(window_px=128, overlap_px=32), threads=2,
    )
    assert _groups_of_junctions(whole) == _groups_of_junctions(tiled) == 9
    assert tiled.n_edges == whole.n_edges


def test_noisy_grid_city_scores_high_apls(record_property):
    """A 0.3 m/px city grid with 5 % salt-and-pepper noise still extracts to APLS ≥ 0.95."""
    fixture = make_fixture("grid_city")
    for seed in range(3):
        noisy = add_salt_and_pepper(fixture.mask, 0.05, seed=seed)
        net = extract_graph(noisy)
        report = apls(fixture.graph, net)
        record_property(f"apls_seed_{seed}", report.score)
        assert report.score >= 0.95, f"seed {seed}: {report.score:.4f} with {net.n_nodes} nodes"


@pytest.mark.slow
def test_extract_large_matches_whole_image_on_random_trees():
    """On 2600 px masks, 1300 px windows with 260 px overlap reproduce the untiled graph."""
    params = FixtureParams(pixel_size_m=0.5, extent_m=1300.0, n_branches=30)
    for seed in range(10):
        mask = make_fixture("random_tree", params, seed=seed).mask
        assert mask.shape == (2600, 2600)
        whole = extract_graph(mask)
        tiled = extract_large(
            ArrayTileProvider([mask]), mask.transform,
            tile_params=TileParams(window_px=1300, overlap_px=260), threads=2,
        )
        assert tiled.degree_multiset() == whole.degree_multiset(), f"seed {seed}"
        assert tiled.total_length_m() == pytest.approx(whole.total_length_m(), rel=0.005), f"seed {seed}"


# ---------------------------------------------------------------------------
# Benchmark
# ---------------------------------------------------------------------------


def test_synthetic_city_mask_layout():
    """Streets are centred at spacing/2 + k·spacing."""
    mask = synthetic_city_mask(200, 100, 9)
    assert mask.values[50, :].all() and mask.values[:, 150].all()
    assert mask.values[0, 0] == 0
    assert mask.values[46:55, 0].all()
    assert not mask.values[45, 0] and not mask.values[55, 0]


def test_run_benchmark_report():
    """The benchmark reports area, tile count and a positive rate."""
    report = run_benchmark(size_px=300, pixel_size_m=0.3, street_spacing_px=100,
                           tile_params=TileParams(window_px=128, overlap_px=32))
    assert report.area_km2 == pytest.approx((300 * 0.3) ** 2 / 1e6)
    assert report.n_tiles == 9
    assert report.n_edges > 0
    assert report.km2_per_hour > 0
    assert {"stitch", "clean", "skeletonize", "graph", "refine"} <= set(report.stage_seconds)


@pytest.mark.slow
def test_run_benchmark_default_size(record_property):
    """The default 10 000 px benchmark completes and reports a throughput figure."""
    report = run_benchmark()
    record_property("km2_per_hour", report.km2_per_hour)
    assert report.width == report.height == 10000
    assert report.area_km2 == pytest.approx(9.0)
    assert report.km2_per_hour > 0
