import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tumorocc.errors import ConfigError, LengthMismatch
from tumorocc.evalrec import (
    LabelGrid, bench_queries, boundary_voxels, grid_geometry, miou, rasterize_scene, reconstruct_grid,
    structure_metrics,
)
from tumorocc.geometry import AABB, aabb
from tumorocc.occnet import NetworkConfig, OccupancyNetwork, predict
from tumorocc.sensor import DepthPointCloud, query_bounds


def naive_miou(pred, true, C):
    ious = []
    for c in range(C):
        inter = sum(1 for p, t in zip(pred, true) if p == c and t == c)
        union = sum(1 for p, t in zip(pred, true) if p == c or t == c)
        if union:
            ious.append(inter / union)
    return sum(ious) / len(ious)


def test_miou_hand_counted_example():
    iou, m = miou([1, 0, 0, 0], [1, 1, 0, 0], 2)
    assert iou[1] == 0.5 and iou[0] == pytest.approx(2 / 3)
    assert m == pytest.approx(7 / 12)


def test_miou_trivial_cases():
    assert miou([0, 1, 2, 3], [0, 1, 2, 3], 4)[1] == 1.0
    assert miou([1, 1, 0, 0], [0, 0, 1, 1], 2)[1] == 0.0
    iou, m = miou([0, 0], [0, 0], 4)
    assert np.isnan(iou[1:]).all() and m == 1.0
    with pytest.raises(LengthMismatch):
        miou([0], [0, 1], 2)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 4).flatmap(lambda c: st.tuples(st.just(c), st.lists(st.tuples(st.integers(0, c - 1), st.integers(0, c - 1)), min_size=1, max_size=200))))
def test_miou_matches_brute_force_and_is_symmetric(case):
    C, pairs = case
    pred = np.array([p for p, _ in pairs])
    true = np.array([t for _, t in pairs])
    m = miou(pred, true, C)[1]
    assert m == pytest.approx(naive_miou(pred, true, C), abs=1e-12)
    assert miou(true, pred, C)[1] == m


def test_boundary_voxels_match_naive_six_neighborhood(rng):
    member = rng.random((7, 6, 5)) < 0.6
    got = boundary_voxels(member)
    expect = np.zeros_like(member)
    for i, j, k in zip(*np.nonzero(member)):
        for d in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)):
            a, b, c = i + d[0], j + d[1], k + d[2]
            inside = 0 <= a < 7 and 0 <= b < 6 and 0 <= c < 5
            if not inside or not member[a, b, c]:
                expect[i, j, k] = True
    assert np.array_equal(got, expect)


def test_grid_geometry_tiles_bounds():
    origin, spacing = grid_geometry(AABB(np.zeros(3), np.array([10.0, 20, 30])), (10, 10, 10))
    assert np.allclose(spacing, [1, 2, 3]) and np.allclose(origin, [0.5, 1, 1.5])


@pytest.fixture(scope="module")
def oracle_grid(phantom):
    bounds = aabb(phantom.all_vertices()).dilated(1.2)
    return rasterize_scene(phantom, (48, 48, 48), bounds)


def test_oracle_raster_has_small_hausdorff(phantom, oracle_grid):
    rep = structure_metrics(oracle_grid, phantom, n_reference=20000)
    bound = 2 * oracle_grid.spacing.max()
    for name in ("kidney", "tumor1", "tumor2"):
        m = rep[name]
        assert 0 <= m["hd_est_to_ref"] <= m["hd_symmetric"] and m["hd_ref_to_est"] <= m["hd_symmetric"]
        assert m["hd_symmetric"] <= bound, name
        assert m["center_error"] <= oracle_grid.spacing.max()
    assert miou(oracle_grid.values.ravel(), oracle_grid.values.ravel(), 4)[1] == 1.0


def test_translated_reference_center_error(phantom, oracle_grid):
    shifted = phantom.transformed(np.eye(3), (5.0, 0.0, 0.0))
    rep = structure_metrics(oracle_grid, shifted, n_reference=5000)
    for name in ("kidney", "tumor1", "tumor2"):
        assert rep[name]["center_error"] == pytest.approx(5.0, abs=oracle_grid.spacing.max())


def test_missing_tumor_is_reported_per_structure(phantom, oracle_grid):
    values = oracle_grid.values.copy()
    values[values == 3] = 1
    rep = structure_metrics(LabelGrid(values, oracle_grid.spacing, oracle_grid.origin), phantom, n_reference=5000)
    assert rep["tumor2"]["error"] == "MissingStructure"
    assert "hd_symmetric" in rep["kidney"] and "hd_symmetric" in rep["tumor1"]


def test_zero_weight_network_reconstructs_empty_grid(rng):
    net = OccupancyNetwork(NetworkConfig.reduced())
    for p in net.parameters():
        p.data.zero_()
    dpp = DepthPointCloud(rng.normal(size=(100, 3)) * 20)
    g = reconstruct_grid(dpp, net, (8, 8, 8))
    assert g.values.shape == (8, 8, 8) and not g.values.any()


def test_grid_labels_equal_pointwise_predictions(rng):
    net = OccupancyNetwork(NetworkConfig.reduced(), seed=4)
    dpp = DepthPointCloud(rng.normal(size=(100, 3)) * 20)
    g = reconstruct_grid(dpp, net, (6, 7, 8))
    assert np.array_equal(g.values.ravel(), predict(dpp, g.centers(), net))
    b = query_bounds(dpp.points)
    assert np.allclose(g.origin - 0.5 * g.spacing, b.min)


def test_bench_reports_samples_and_rates(rng):
    net = OccupancyNetwork(NetworkConfig.reduced())
    dpp = DepthPointCloud(rng.normal(size=(100, 3)) * 20)
    r = bench_queries(dpp, net, 1000, repeats=5)
    assert len(r["samples_ms"]) == 5 and r["median_ms"] == np.median(r["samples_ms"])
    assert r["queries_per_s"] == pytest.approx(1000 / (r["median_ms"] / 1000))
    assert r["hz_40000"] == pytest.approx(1000 / r["ms_per_40000"])
    assert r["reference_gpu_ms_per_40000"] == 14.0
    with pytest.raises(ConfigError):
        bench_queries(dpp, net, 0)
