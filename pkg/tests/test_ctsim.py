import numpy as np
import pytest

from tumorocc.ctsim import (
    DEFAULT_HU, KIDNEY_WINDOW, TUMOR_WINDOW, CtVolume, SegmentationWindow, VoxelGrid, VoxelMask, extract_mesh,
    load_volume, save_volume, segment_scene, synth_ct, threshold_segment,
)
from tumorocc.errors import AllComponentsRemoved, ConfigError, EmptyMask
from tumorocc.geometry import Scene, box, hausdorff, icosphere, label_points, sample_surface


def sphere_mask(r=10.0, n=32, spacing=1.0):
    origin = -(n - 1) / 2 * spacing
    g = VoxelGrid(np.zeros((n, n, n), bool), spacing, origin)
    inside = np.linalg.norm(g.centers(), axis=1) < r
    return VoxelMask(inside.reshape(n, n, n), spacing, origin)


def test_voxel_centers_follow_origin_and_spacing():
    g = VoxelGrid(np.zeros((2, 3, 4)), (1.0, 2.0, 0.5), (10, 20, 30))
    c = g.centers().reshape(2, 3, 4, 3)
    assert np.allclose(c[1, 2, 3], [11, 24, 31.5])
    with pytest.raises(ConfigError):
        VoxelGrid(np.zeros((1, 3, 3)))


def test_noise_free_ct_matches_label_oracle():
    scene = Scene(box((-10, -10, -10), (10, 10, 10)), (icosphere(2, 4.0, (3, 0, 0)),))
    vol = synth_ct(scene, (24, 24, 24), 1.0, noise_sigma=0.0)
    labels = label_points(vol.centers(), scene).reshape(vol.dims)
    lut = np.array([DEFAULT_HU["background"], DEFAULT_HU["kidney"], DEFAULT_HU["tumor"]])
    assert np.array_equal(vol.values, lut[labels].astype(np.float32))


def test_ct_noise_is_seeded_gaussian():
    scene = Scene(box((-10, -10, -10), (10, 10, 10)))
    a = synth_ct(scene, (16, 16, 16), 2.0, noise_sigma=20.0, seed=1)
    b = synth_ct(scene, (16, 16, 16), 2.0, noise_sigma=20.0, seed=1)
    clean = synth_ct(scene, (16, 16, 16), 2.0, noise_sigma=0.0)
    assert np.array_equal(a.values, b.values)
    assert np.std(a.values - clean.values) == pytest.approx(20.0, rel=0.1)


def test_threshold_window_is_open():
    vol = CtVolume(np.array([-300, -299, 0, 299, 300, 301], np.float32).reshape(1, 2, 3).repeat(2, 0))
    m = threshold_segment(vol, KIDNEY_WINDOW)
    assert m.values[0].ravel().tolist() == [False, True, True, True, False, False]
    assert threshold_segment(vol, SegmentationWindow(*TUMOR_WINDOW)).values[0].ravel().tolist()[-1]
    with pytest.raises(ConfigError):
        SegmentationWindow(5, 5)


def test_extracted_sphere_is_close_to_analytic_surface():
    m = extract_mesh(sphere_mask(10.0))
    assert m.is_closed() and m.volume() > 0
    r = np.linalg.norm(m.vertices, axis=1)
    assert np.abs(r - 10.0).max() < 1.0
    assert m.volume() == pytest.approx(4 / 3 * np.pi * 1000, rel=0.05)


def test_extract_mesh_errors():
    with pytest.raises(EmptyMask):
        extract_mesh(VoxelMask(np.zeros((4, 4, 4), bool)))
    with pytest.raises(AllComponentsRemoved):
        extract_mesh(sphere_mask(3.0, 12), min_triangles=10_000)


def test_small_components_are_filtered():
    a = sphere_mask(8.0, 40).values
    speck = np.zeros_like(a)
    speck[2, 2, 2] = True
    m = extract_mesh(VoxelMask(a | speck, 1.0, -19.5), min_triangles=100)
    assert np.linalg.norm(m.vertices, axis=1).max() < 10


def test_segment_scene_recovers_structures():
    kidney = icosphere(3, 15.0)
    tumor = icosphere(3, 5.0, (4, 0, 0))
    scene = Scene(kidney, (tumor,))
    vol = synth_ct(scene, (40, 40, 40), 1.0, noise_sigma=0.0)
    seg = segment_scene(vol, 1)
    assert len(seg.tumors) == 1
    assert hausdorff(seg.tumors[0].vertices, sample_surface(tumor, 5000)).symmetric < 2.0
    assert hausdorff(seg.kidney.vertices, sample_surface(kidney, 5000)).symmetric < 2.0


def test_volume_save_load_round_trip(tmp_path):
    vol = CtVolume(np.random.default_rng(0).normal(size=(3, 4, 5)).astype(np.float32), (1, 2, 3), (4, 5, 6))
    save_volume(tmp_path / "v.raw", vol)
    back = load_volume(tmp_path / "v.raw")
    assert np.array_equal(back.values, vol.values)
    assert np.allclose(back.spacing, [1, 2, 3]) and np.allclose(back.origin, [4, 5, 6])
    m = sphere_mask(3.0, 8)
    save_volume(tmp_path / "m.raw", m)
    assert np.array_equal(load_volume(tmp_path / "m.raw", VoxelMask).values, m.values)
