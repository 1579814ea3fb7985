import numpy as np
import pytest

from tumorocc.deform import (
    DEFAULT_CONFIG, TABLE_CONFIGS, DeformationConfig, DeformationStep, apply_config, apply_step,
    compress_midsection, cross_section_z_extent, falloff, parse_config, visible_vertices,
)
from tumorocc.errors import ConfigError, EmptyVisibleSet, ExcessiveCompression
from tumorocc.geometry import Scene, ellipsoid, icosphere
from tumorocc.sensor import CameraModel


def test_table_config_three_parses_verbatim():
    cfg = DeformationConfig.parse("(8,11.7,1),(6,10,1),(4,6.7,1),(4,3.3,5),(2,3.3,10)")
    assert cfg.total_drags == 18
    assert cfg.max_total_displacement == pytest.approx(8 + 6 + 4 + 20 + 20)
    assert str(cfg) == DEFAULT_CONFIG
    assert parse_config(cfg) is cfg
    assert parse_config([(8, 11.7, 1)]).steps[0] == DeformationStep(8, 11.7, 1)


@pytest.mark.parametrize("k", sorted(TABLE_CONFIGS))
def test_every_table_config_round_trips(k):
    cfg = DeformationConfig.parse(TABLE_CONFIGS[k])
    assert DeformationConfig.parse(str(cfg)) == cfg


@pytest.mark.parametrize("bad", ["", "(8,11.7)", "(8,a,1)", "(0,1,1)", "(8,1,0)", "(8,1,1.5)", "8,1,1"])
def test_bad_configs_are_rejected(bad):
    with pytest.raises(ConfigError):
        DeformationConfig.parse(bad)


def test_falloff_is_peak_normalized_gaussian():
    assert falloff(0.0, 4.0) == 1.0
    assert falloff(4.0, 4.0) == pytest.approx(np.exp(-0.5))
    d2 = np.linspace(0, 100, 50)
    assert np.all(np.diff(falloff(d2, 3.3)) < 0)


def test_single_drag_moves_chosen_vertex_by_magnitude():
    scene = Scene(icosphere(3, 20.0))
    record = []
    out = apply_step(scene, DeformationStep(8.0, 11.7, 1), [5], seed=0, record=record)
    disp = out.kidney.vertices - scene.kidney.vertices
    r = record[0]
    assert r["vertex"] == 5
    assert 0 < r["magnitude"] <= 8.0
    assert np.allclose(disp[5], r["magnitude"] * np.array(r["direction"]))
    # oracle: every vertex moves by magnitude * falloff(distance) along the direction
    d2 = np.sum((scene.kidney.vertices - scene.kidney.vertices[5]) ** 2, axis=1)
    expect = (r["magnitude"] * np.exp(-d2 / (2 * 11.7)))[:, None] * np.array(r["direction"])
    assert np.allclose(disp, expect, atol=1e-12)
    assert np.array_equal(out.kidney.triangles, scene.kidney.triangles)


def test_drag_moves_tumors_with_the_kidney_field():
    scene = Scene(ellipsoid((30, 20, 15), 3), (icosphere(2, 5.0, (0, 0, 10)),))
    top = int(np.argmax(scene.kidney.vertices[:, 2]))
    record = []
    out = apply_step(scene, DeformationStep(6.0, 10.0, 1), [top], seed=4, record=record)
    r = record[0]
    d2 = np.sum((scene.tumors[0].vertices - scene.kidney.vertices[top]) ** 2, axis=1)
    expect = (r["magnitude"] * np.exp(-d2 / 20.0))[:, None] * np.array(r["direction"])
    assert np.allclose(out.tumors[0].vertices - scene.tumors[0].vertices, expect, atol=1e-12)
    assert np.abs(expect).max() > 0.1


def test_deformation_is_deterministic_per_seed(phantom):
    cam = CameraModel()
    a = apply_config(phantom, parse_config(DEFAULT_CONFIG), cam, seed=3)
    b = apply_config(phantom, parse_config(DEFAULT_CONFIG), cam, seed=3)
    c = apply_config(phantom, parse_config(DEFAULT_CONFIG), cam, seed=4)
    assert np.array_equal(a.kidney.vertices, b.kidney.vertices)
    assert not np.array_equal(a.kidney.vertices, c.kidney.vertices)


def test_total_displacement_is_bounded(phantom):
    cfg = parse_config(DEFAULT_CONFIG)
    out = apply_config(phantom, cfg, CameraModel(), seed=0)
    disp = np.linalg.norm(out.kidney.vertices - phantom.kidney.vertices, axis=1)
    assert disp.max() <= cfg.max_total_displacement + 1e-9
    assert disp.max() > 0


def test_visible_vertices_are_on_the_camera_side():
    s = Scene(icosphere(3, 20.0))
    vis = visible_vertices(s, CameraModel())
    z = s.kidney.vertices[vis, 2]
    assert z.min() > -1.0
    # nearly every upper-hemisphere vertex that projects into the image is visible
    upper = np.flatnonzero(s.kidney.vertices[:, 2] > 2.0)
    assert np.isin(upper, vis).mean() > 0.95


def test_occluded_kidney_has_no_visible_vertex():
    far = Scene(icosphere(2, 5.0, (0, 0, 0)), (icosphere(2, 40.0, (0, 0, 60)),))
    with pytest.raises(EmptyVisibleSet):
        visible_vertices(far, CameraModel())


def test_compression_reduces_midsection_height_by_depth(phantom):
    lo, hi = cross_section_z_extent(phantom.kidney, 0.0)
    for depth in (4.0, 8.0, 12.0):
        out = compress_midsection(phantom, depth)
        lo2, hi2 = cross_section_z_extent(out.kidney, 0.0)
        assert (hi - lo) - (hi2 - lo2) == pytest.approx(depth, abs=0.6)
    assert compress_midsection(phantom, 0.0) is phantom
    with pytest.raises(ExcessiveCompression):
        compress_midsection(phantom, 40.0)
