"""Synthetic CT volumes, window segmentation and mask-to-mesh extraction."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from skimage.measure import marching_cubes

from .errors import ConfigError, EmptyMask
from .geometry import Scene, TriangleMesh, filter_connected_components, label_points
from .io import read_raw, write_raw

DEFAULT_HU = {"background": -1000.0, "kidney": 0.0, "tumor": 600.0}
KIDNEY_WINDOW = (-300.0, 300.0)
TUMOR_WINDOW = (300.0, 1000.0)


def _vec3(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    return np.repeat(a, 3) if a.ndim == 0 else a.reshape(3)


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """Regular grid; voxel (i, j, k) has its center at ``origin + (i, j, k) * spacing``."""

    values: np.ndarray
    spacing: np.ndarray = field(default_factory=lambda: np.ones(3))
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "spacing", _vec3(self.spacing))
        object.__setattr__(self, "origin", _vec3(self.origin))
        if self.values.ndim != 3 or min(self.values.shape) < 2:
            raise ConfigError("grid needs at least 2 voxels per axis")
        if np.any(self.spacing <= 0):
            raise ConfigError("spacing must be positive")

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.values.shape)

    def centers(self) -> np.ndarray:
        axes = [self.origin[i] + self.spacing[i] * np.arange(self.dims[i]) for i in range(3)]
        g = np.meshgrid(*axes, indexing="ij")
        return np.stack([a.ravel() for a in g], axis=1)

    def sidecar(self) -> dict:
        return {"dims": list(self.dims), "spacing": self.spacing.tolist(), "origin": self.origin.tolist()}


class CtVolume(VoxelGrid):
    """HU value per voxel."""


class VoxelMask(VoxelGrid):
    """Boolean per voxel."""


@dataclass(frozen=True)
class SegmentationWindow:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ConfigError("window needs lo < hi")


def grid_for_scene(scene: Scene, dims, spacing) -> np.ndarray:
    """Origin that centers a grid of ``dims`` voxels on the scene bounding box."""
    v = scene.all_vertices()
    center = 0.5 * (v.min(axis=0) + v.max(axis=0))
    return center - 0.5 * (np.asarray(dims) - 1) * _vec3(spacing)


def synth_ct(scene: Scene, dims=(128, 128, 128), spacing=1.0, hu_map: dict | None = None,
             noise_sigma: float = 20.0, seed=0, origin=None) -> CtVolume:
    """Voxel HU = innermost containing structure at the voxel center, plus Gaussian noise."""
    hu = dict(DEFAULT_HU, **(hu_map or {}))
    dims = tuple(int(d) for d in dims)
    spacing = _vec3(spacing)
    if origin is None:
        origin = grid_for_scene(scene, dims, spacing)
    skel = VoxelGrid(np.zeros(dims, dtype=bool), spacing, origin)
    labels = label_points(skel.centers(), scene).reshape(dims)
    lut = np.array([hu["background"], hu["kidney"]] + [hu["tumor"]] * len(scene.tumors))
    values = lut[labels]
    if noise_sigma > 0:
        values = values + np.random.default_rng(seed).normal(0.0, noise_sigma, size=dims)
    return CtVolume(values.astype(np.float32), spacing, skel.origin)


def threshold_segment(vol: CtVolume, window) -> VoxelMask:
    """Open-interval window: lo < value < hi."""
    w = window if isinstance(window, SegmentationWindow) else SegmentationWindow(*window)
    return VoxelMask((vol.values > w.lo) & (vol.values < w.hi), vol.spacing, vol.origin)


def extract_mesh(mask: VoxelMask, min_triangles: int = 100) -> TriangleMesh:
    """Iso-surface at 0.5 of the binary mask in world coordinates, small components removed."""
    if not mask.values.any():
        raise EmptyMask("mask has no voxel set")
    padded = np.pad(mask.values.astype(np.float32), 1)
    verts, faces, _, _ = marching_cubes(padded, level=0.5, method="lewiner", allow_degenerate=False)
    verts = (verts - 1.0) * mask.spacing + mask.origin
    mesh = TriangleMesh(verts, faces)
    if mesh.volume() < 0:
        mesh = TriangleMesh(mesh.vertices, mesh.triangles[:, ::-1])
    return filter_connected_components(mesh, min_triangles)


def segment_scene(vol: CtVolume, n_tumors: int = 1, min_triangles: int = 100,
                  kidney_window=KIDNEY_WINDOW, tumor_window=TUMOR_WINDOW) -> Scene:
    """Kidney/tumor meshes from a CT volume.

    The kidney mesh is extracted from the union of both windows (parenchyma
    plus embedded tumors). Tumor components are split by size, largest first,
    up to ``n_tumors``.
    """
    kidney_mask = threshold_segment(vol, kidney_window)
    tumor_mask = threshold_segment(vol, tumor_window)
    organ = VoxelMask(kidney_mask.values | tumor_mask.values, vol.spacing, vol.origin)
    kidney = extract_mesh(organ, min_triangles)
    tumors_all = extract_mesh(tumor_mask, min_triangles)
    from .geometry import triangle_components

    labels = triangle_components(tumors_all)
    order = np.argsort(-np.bincount(labels), kind="stable")[:n_tumors]
    tumors = []
    for comp in order:
        tri = tumors_all.triangles[labels == comp]
        used, inv = np.unique(tri, return_inverse=True)
        tumors.append(TriangleMesh(tumors_all.vertices[used], inv.reshape(-1, 3)))
    return Scene(kidney, tuple(tumors))


def save_volume(path, grid: VoxelGrid) -> None:
    dtype = np.uint8 if grid.values.dtype == bool else np.float32
    write_raw(path, grid.values, dtype, grid.sidecar())


def load_volume(path, kind=CtVolume) -> VoxelGrid:
    values, meta = read_raw(Path(path))
    if kind is VoxelMask:
        values = values.astype(bool)
    return kind(values, meta["spacing"], meta["origin"])
