"""Virtual pinhole depth camera and depth point cloud (DPP) post-processing."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from numba import njit

from .errors import ConfigError, NoValidDepth
from .geometry import Scene, TriangleMesh

log = logging.getLogger(__name__)

_NEAR_PLANE = 1e-6


@dataclass(frozen=True, eq=False)
class CameraModel:
    """Pinhole camera; camera frame is x right, y down, z forward (optical axis).

    ``rotation`` maps camera-frame directions to world frame and ``position`` is
    the camera center in world coordinates (the pose world<-camera).
    Pixel (u, v) has its center at image coordinates (u, v).
    """

    width: int = 160
    height: int = 120
    fx: float = 120.0
    fy: float = 120.0
    cx: float = 80.0
    cy: float = 60.0
    rotation: np.ndarray = field(default_factory=lambda: np.diag([1.0, -1.0, -1.0]))
    position: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 150.0]))
    camera_id: str = "virtual"

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ConfigError("principal point must lie inside the image")
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-9) or np.linalg.det(r) < 0:
            raise ConfigError("camera rotation must be a proper rotation")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64).reshape(3))

    @classmethod
    def looking_down(cls, height: float = 150.0, **kw) -> "CameraModel":
        """Camera ``height`` mm above the world origin looking along -Z."""
        return cls(position=np.array([0.0, 0.0, height]), **kw)

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.position) @ self.rotation

    def to_world(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.position

    def project(self, points_cam: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        z = points_cam[..., 2]
        return self.fx * points_cam[..., 0] / z + self.cx, self.fy * points_cam[..., 1] / z + self.cy

    def to_dict(self) -> dict:
        return {
            "width": self.width, "height": self.height, "fx": self.fx, "fy": self.fy,
            "cx": self.cx, "cy": self.cy, "rotation": self.rotation.tolist(),
            "position": self.position.tolist(), "camera_id": self.camera_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        return cls(**d)


@dataclass(frozen=True, eq=False)
class DepthImage:
    """Per-pixel z-depth in mm along the optical axis; NaN marks a miss."""

    depth: np.ndarray

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.depth)


@dataclass(frozen=True, eq=False)
class DepthPointCloud:
    """Depth-derived points in the world frame plus the camera center they were seen from."""

    points: np.ndarray
    camera_id: str = "virtual"
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "points", np.asarray(self.points, dtype=np.float64).reshape(-1, 3))
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64).reshape(3))

    def __len__(self) -> int:
        return len(self.points)


# --------------------------------------------------------------------------
# ray casting


@njit(cache=True)
def _pixel_bins(u, v, ok, width, height):
    n = u.shape[0]
    span = np.full((n, 4), -1, dtype=np.int64)
    counts = np.zeros(width * height + 1, dtype=np.int64)
    for t in range(n):
        if not ok[t]:
            continue
        i0 = int(np.floor(min(u[t, 0], u[t, 1], u[t, 2]) + 0.5))
        i1 = int(np.floor(max(u[t, 0], u[t, 1], u[t, 2]) + 0.5))
        j0 = int(np.floor(min(v[t, 0], v[t, 1], v[t, 2]) + 0.5))
        j1 = int(np.floor(max(v[t, 0], v[t, 1], v[t, 2]) + 0.5))
        if i1 < 0 or j1 < 0 or i0 >= width or j0 >= height:
            continue
        i0, j0 = max(i0, 0), max(j0, 0)
        i1, j1 = min(i1, width - 1), min(j1, height - 1)
        span[t, 0], span[t, 1], span[t, 2], span[t, 3] = i0, i1, j0, j1
        for j in range(j0, j1 + 1):
            for i in range(i0, i1 + 1):
                counts[j * width + i + 1] += 1
    start = np.cumsum(counts)
    fill = start[:-1].copy()
    items = np.empty(start[-1], dtype=np.int64)
    for t in range(n):
        if span[t, 0] < 0:
            continue
        for j in range(span[t, 2], span[t, 3] + 1):
            for i in range(span[t, 0], span[t, 1] + 1):
                k = j * width + i
                items[fill[k]] = t
                fill[k] += 1
    return start, items


@njit(cache=True)
def _cast(pu, pv, corners, start, items, width, height, fx, fy, cx, cy):
    """First-hit z-depth of rays through image points (pu, pv); Moller-Trumbore."""
    n = pu.shape[0]
    out = np.full(n, np.inf)
    for r in range(n):
        i = int(np.floor(pu[r] + 0.5))
        j = int(np.floor(pv[r] + 0.5))
        if i < 0 or j < 0 or i >= width or j >= height:
            continue
        dx = (pu[r] - cx) / fx
        dy = (pv[r] - cy) / fy
        dz = 1.0
        k = j * width + i
        best = np.inf
        for s in range(start[k], start[k + 1]):
            t = items[s]
            ax, ay, az = corners[t, 0, 0], corners[t, 0, 1], corners[t, 0, 2]
            e1x, e1y, e1z = corners[t, 1, 0] - ax, corners[t, 1, 1] - ay, corners[t, 1, 2] - az
            e2x, e2y, e2z = corners[t, 2, 0] - ax, corners[t, 2, 1] - ay, corners[t, 2, 2] - az
            px = dy * e2z - dz * e2y
            py = dz * e2x - dx * e2z
            pz = dx * e2y - dy * e2x
            det = e1x * px + e1y * py + e1z * pz
            if abs(det) < 1e-14:
                continue
            inv = 1.0 / det
            sx, sy, sz = -ax, -ay, -az
            uu = (sx * px + sy * py + sz * pz) * inv
            if uu < 0.0 or uu > 1.0:
                continue
            qx = sy * e1z - sz * e1y
            qy = sz * e1x - sx * e1z
            qz = sx * e1y - sy * e1x
            vv = (dx * qx + dy * qy + dz * qz) * inv
            if vv < 0.0 or uu + vv > 1.0:
                continue
            tt = (e2x * qx + e2y * qy + e2z * qz) * inv
            if tt > _NEAR_PLANE and tt < best:
                best = tt
        out[r] = best
    return out


def _as_meshes(scene: Union[Scene, Sequence[TriangleMesh], TriangleMesh, None]) -> list[TriangleMesh]:
    if scene is None:
        return []
    if isinstance(scene, Scene):
        return scene.meshes
    if isinstance(scene, TriangleMesh):
        return [scene]
    return list(scene)


class RayCaster:
    """Scene geometry binned by projected pixel footprint for one camera.

    Triangles with a corner at or behind the camera plane are skipped.
    """

    def __init__(self, scene, camera: CameraModel):
        self.camera = camera
        meshes = _as_meshes(scene)
        if meshes:
            corners = np.concatenate([camera.to_camera(m.corners().reshape(-1, 3)).reshape(-1, 3, 3) for m in meshes])
        else:
            corners = np.zeros((0, 3, 3))
        self.corners = np.ascontiguousarray(corners)
        ok = np.all(corners[..., 2] > _NEAR_PLANE, axis=1)
        z = np.where(ok[:, None], corners[..., 2], 1.0)
        u = camera.fx * corners[..., 0] / z + camera.cx
        v = camera.fy * corners[..., 1] / z + camera.cy
        self.start, self.items = _pixel_bins(
            np.ascontiguousarray(u), np.ascontiguousarray(v), ok, camera.width, camera.height
        )

    def depth_at(self, pu, pv) -> np.ndarray:
        """First-hit z-depth for rays through image coordinates; inf on a miss."""
        c = self.camera
        pu = np.ascontiguousarray(pu, dtype=np.float64).ravel()
        pv = np.ascontiguousarray(pv, dtype=np.float64).ravel()
        return _cast(pu, pv, self.corners, self.start, self.items, c.width, c.height, c.fx, c.fy, c.cx, c.cy)


def render_depth(scene, camera: CameraModel) -> DepthImage:
    """Per-pixel first-hit depth along the optical axis; misses are NaN."""
    vv, uu = np.mgrid[0 : camera.height, 0 : camera.width]
    d = RayCaster(scene, camera).depth_at(uu.astype(np.float64), vv.astype(np.float64))
    d[~np.isfinite(d)] = np.nan
    return DepthImage(d.reshape(camera.height, camera.width))


def depth_to_points(depth: DepthImage, camera: CameraModel) -> DepthPointCloud:
    """Back-project valid pixels through the pinhole model into the world frame."""
    d = np.asarray(depth.depth, dtype=np.float64)
    vv, uu = np.nonzero(np.isfinite(d))
    if len(vv) == 0:
        raise NoValidDepth("depth image has no valid pixel")
    z = d[vv, uu]
    cam = np.stack([(uu - camera.cx) / camera.fx * z, (vv - camera.cy) / camera.fy * z, z], axis=1)
    return DepthPointCloud(camera.to_world(cam), camera.camera_id, camera.position.copy())


def filter_dpp(
    cloud: DepthPointCloud,
    near: float = 110.0,
    far: float = 150.0,
    scale: float = 1.0,
    n: int = 1000,
    seed=0,
) -> DepthPointCloud:
    """Range-filter by Euclidean camera distance, scale, then draw ``n`` unique points.

    ``near``/``far`` are in the cloud's input units (before scaling).
    """
    if not near < far:
        raise ConfigError("near must be < far")
    if n < 1:
        raise ConfigError("n must be >= 1")
    pts = np.unique(cloud.points, axis=0)
    dist = np.linalg.norm(pts - cloud.origin, axis=1)
    pts = pts[(dist >= near) & (dist <= far)]
    if len(pts) == 0:
        raise NoValidDepth(f"no point within [{near}, {far}] of the camera")
    pts = pts * scale
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pts))
    if len(pts) < n:
        log.warning("only %d points survive filtering, fewer than the requested %d", len(pts), n)
    return DepthPointCloud(pts[order[:n]], cloud.camera_id, cloud.origin * scale)


def scan(scene, camera: CameraModel, near=110.0, far=150.0, n=1000, seed=0) -> DepthPointCloud:
    """Render, back-project and filter: the full virtual sensor pipeline."""
    return filter_dpp(depth_to_points(render_depth(scene, camera), camera), near, far, 1.0, n, seed)


def query_bounds(points, dilation: float = 1.2):
    """Axis-aligned cube around a DPP: centered on its bounding box, side ``dilation`` x largest extent.

    A single-view DPP only covers the upper surface, so the box is made cubic
    to reach the hidden posterior side of the organ.
    """
    from .geometry import AABB, aabb

    box = aabb(points)
    half = 0.5 * dilation * float(box.extent.max())
    return AABB(box.center - half, box.center + half)
