"""Grid reconstruction and evaluation metrics: mIoU, Hausdorff, box-center error, latency."""
from __future__ import annotations

import time

import numpy as np

from .ctsim import VoxelGrid
from .errors import ConfigError, LengthMismatch
from .geometry import AABB, Scene, aabb, hausdorff, label_points, organ_surface_samples, sample_surface
from .sensor import DepthPointCloud, query_bounds

REFERENCE_GPU_MS_PER_40K = 14.0
DESK_GRID = (96, 96, 96)
REFERENCE_GRID = (400, 400, 400)


def miou(pred, true, n_classes: int):
    """Per-class IoU (NaN where a class is absent from both) and their mean."""
    pred = np.asarray(pred).ravel()
    true = np.asarray(true).ravel()
    if len(pred) != len(true):
        raise LengthMismatch(f"{len(pred)} predictions vs {len(true)} labels")
    cm = np.bincount(true * n_classes + pred, minlength=n_classes * n_classes).reshape(n_classes, n_classes)
    inter = np.diag(cm).astype(np.float64)
    union = cm.sum(axis=0) + cm.sum(axis=1) - np.diag(cm)
    iou = np.full(n_classes, np.nan)
    present = union > 0
    iou[present] = inter[present] / union[present]
    mean = float(np.mean(iou[present])) if present.any() else float("nan")
    return iou, mean


class LabelGrid(VoxelGrid):
    """Class id per voxel."""


def grid_geometry(bounds: AABB, dims):
    """(origin, spacing) for ``dims`` voxels whose cells tile ``bounds``."""
    dims = np.asarray(dims, dtype=np.float64)
    spacing = (bounds.max - bounds.min) / dims
    return bounds.min + 0.5 * spacing, spacing


def reconstruct_grid(dpp: DepthPointCloud, net, dims=DESK_GRID, bounds: AABB | None = None) -> LabelGrid:
    """Label every voxel center of a regular grid with the network."""
    from .occnet import predict

    if bounds is None:
        bounds = query_bounds(dpp.points)
    dims = tuple(int(d) for d in dims)
    origin, spacing = grid_geometry(bounds, dims)
    skel = VoxelGrid(np.zeros(dims, dtype=bool), spacing, origin)
    labels = predict(dpp, skel.centers(), net)
    return LabelGrid(labels.reshape(dims).astype(np.uint8), spacing, origin)


def rasterize_scene(scene: Scene, dims, bounds: AABB) -> LabelGrid:
    """Oracle labeling of a grid straight from the scene meshes."""
    dims = tuple(int(d) for d in dims)
    origin, spacing = grid_geometry(bounds, dims)
    skel = VoxelGrid(np.zeros(dims, dtype=bool), spacing, origin)
    return LabelGrid(label_points(skel.centers(), scene).reshape(dims).astype(np.uint8), spacing, origin)


def boundary_voxels(member: np.ndarray) -> np.ndarray:
    """Member voxels with at least one 6-neighbor outside the structure (grid exterior counts as outside)."""
    padded = np.pad(member, 1, constant_values=False)
    interior = padded[1:-1, 1:-1, 1:-1].copy()
    for axis in range(3):
        for shift in (-1, 1):
            interior &= np.roll(padded, shift, axis=axis)[1:-1, 1:-1, 1:-1]
    return member & ~interior


def structure_names(scene: Scene) -> list[str]:
    return ["kidney"] + [f"tumor{k}" for k in range(1, len(scene.tumors) + 1)]


def structure_metrics(grid: LabelGrid, reference: Scene, n_reference: int = 20000, seed: int = 0) -> dict:
    """Per-structure Hausdorff distances and bounding-box center error.

    "kidney" is the whole organ: every non-outside voxel against the outer
    surface of the union of all reference meshes. "tumorK" is class 1 + K
    against tumor mesh K. Directed distances are reported both ways:
    ``hd_est_to_ref`` (estimated boundary to reference) and ``hd_ref_to_est``.
    A structure without voxels is reported as ``{"error": "MissingStructure"}``.
    """
    labels = grid.values
    centers = grid.centers().reshape(*grid.dims, 3)
    out = {}
    for k, name in enumerate(structure_names(reference)):
        if k == 0:
            member = labels >= 1
            ref_pts = organ_surface_samples(reference, n_reference, seed)
            ref_box = aabb(reference.all_vertices())
        else:
            member = labels == 1 + k
            mesh = reference.tumors[k - 1]
            ref_pts = sample_surface(mesh, n_reference, seed)
            ref_box = aabb(mesh.vertices)
        if not member.any():
            out[name] = {"error": "MissingStructure", "class_id": 1 + k if k else 1}
            continue
        est = centers[boundary_voxels(member)]
        hd = hausdorff(est, ref_pts)
        est_box = aabb(centers[member])
        out[name] = {
            "hd_est_to_ref": hd.directed_ab,
            "hd_ref_to_est": hd.directed_ba,
            "hd_symmetric": hd.symmetric,
            "center_error": float(np.linalg.norm(est_box.center - ref_box.center)),
            "est_center": est_box.center.tolist(),
            "ref_center": ref_box.center.tolist(),
            "n_boundary_voxels": int(len(est)),
        }
    out["_grid"] = {"dims": list(grid.dims), "spacing": grid.spacing.tolist(),
                    "boundary_bias_bound_mm": float(np.linalg.norm(grid.spacing))}
    return out


def bench_queries(dpp: DepthPointCloud, net, n_queries: int = 40000, repeats: int = 5, warmup: int = 1,
                  seed: int = 0) -> dict:
    """Wall-time of labeling ``n_queries`` random queries (encoder included)."""
    from .occnet import predict

    if n_queries < 1 or repeats < 1:
        raise ConfigError("n_queries and repeats must be >= 1")
    box = query_bounds(dpp.points)
    q = np.random.default_rng(seed).uniform(box.min, box.max, size=(n_queries, 3))
    for _ in range(warmup):
        predict(dpp, q, net)
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        predict(dpp, q, net)
        samples.append((time.perf_counter() - t0) * 1000.0)
    med = float(np.median(samples))
    per_40k = med * 40000.0 / n_queries
    return {
        "n_queries": n_queries,
        "samples_ms": samples,
        "median_ms": med,
        "p95_ms": float(np.percentile(samples, 95)),
        "queries_per_s": n_queries / (med / 1000.0),
        "ms_per_40000": per_40k,
        "hz_40000": 1000.0 / per_40k,
        "reference_gpu_ms_per_40000": REFERENCE_GPU_MS_PER_40K,
    }
