"""Triangle meshes, point containment, components, bounding boxes and Hausdorff distance.

All coordinates are millimeters in a right-handed world frame with +Z pointing
toward the camera (superior) and -Z toward the table (posterior).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from numba import njit
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import AllComponentsRemoved, ConfigError, EmptySet, InvalidMesh, NonClosedMesh

_DEGENERATE_AREA = 1e-12
_AMBIGUOUS_BARY = 1e-9


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Indexed triangle mesh.

    Degenerate (zero-area) triangles are dropped on construction; the arrays
    are stored read-only so meshes can be shared between threads.
    """

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.array(self.triangles, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(v)):
            raise InvalidMesh("non-finite vertex coordinates")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise InvalidMesh("triangle index out of range")
        if len(t):
            e1 = v[t[:, 1]] - v[t[:, 0]]
            e2 = v[t[:, 2]] - v[t[:, 0]]
            area = 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)
            t = t[area > _DEGENERATE_AREA]
        if len(t) == 0:
            raise InvalidMesh("mesh has no non-degenerate triangles")
        object.__setattr__(self, "vertices", _readonly(v))
        object.__setattr__(self, "triangles", _readonly(t))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def corners(self) -> np.ndarray:
        """(T, 3, 3) array of triangle corner coordinates."""
        return self.vertices[self.triangles]

    def areas(self) -> np.ndarray:
        c = self.corners()
        return 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)

    def edge_counts(self) -> dict[tuple[int, int], int]:
        e = np.sort(self.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        uniq, counts = np.unique(e, axis=0, return_counts=True)
        return {(int(a), int(b)): int(c) for (a, b), c in zip(uniq, counts)}

    def is_closed(self) -> bool:
        e = np.sort(self.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return bool(np.all(counts == 2))

    def volume(self) -> float:
        """Signed enclosed volume (divergence theorem); positive for outward normals."""
        c = self.corners()
        return float(np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2])).sum() / 6.0)

    def with_vertices(self, vertices: np.ndarray) -> "TriangleMesh":
        return TriangleMesh(vertices, self.triangles)

    def transformed(self, rotation: np.ndarray, translation=(0.0, 0.0, 0.0)) -> "TriangleMesh":
        return TriangleMesh(self.vertices @ np.asarray(rotation).T + np.asarray(translation), self.triangles)


@dataclass(frozen=True, eq=False)
class Scene:
    """Kidney mesh plus an ordered list of tumor meshes.

    Labels: 0 = outside, 1 = kidney, 1 + k = tumor k (k starting at 1).
    ``tumor_kinds`` is free-form metadata such as "endophytic"/"exophytic".
    """

    kidney: TriangleMesh
    tumors: tuple[TriangleMesh, ...] = ()
    tumor_kinds: tuple[str, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "tumors", tuple(self.tumors))
        kinds = tuple(self.tumor_kinds) or tuple("tumor" for _ in self.tumors)
        if len(kinds) != len(self.tumors):
            raise ConfigError("tumor_kinds must match the number of tumors")
        object.__setattr__(self, "tumor_kinds", kinds)

    @property
    def n_classes(self) -> int:
        return 2 + len(self.tumors)

    @property
    def meshes(self) -> list[TriangleMesh]:
        return [self.kidney, *self.tumors]

    def all_vertices(self) -> np.ndarray:
        return np.concatenate([m.vertices for m in self.meshes])

    def with_vertices(self, vertex_arrays: Sequence[np.ndarray]) -> "Scene":
        meshes = [m.with_vertices(v) for m, v in zip(self.meshes, vertex_arrays)]
        return Scene(meshes[0], tuple(meshes[1:]), self.tumor_kinds)

    def transformed(self, rotation: np.ndarray, translation=(0.0, 0.0, 0.0)) -> "Scene":
        meshes = [m.transformed(rotation, translation) for m in self.meshes]
        return Scene(meshes[0], tuple(meshes[1:]), self.tumor_kinds)

    def class_of_tumor(self, kind: str) -> int:
        """Class id of the first tumor of the given kind."""
        for k, name in enumerate(self.tumor_kinds):
            if name == kind:
                return 2 + k
        raise KeyError(kind)


# --------------------------------------------------------------------------
# containment


@njit(cache=True)
def _bin_triangles(tx, ty, x0, y0, cell, gx, gy):
    n = tx.shape[0]
    counts = np.zeros(gx * gy + 1, dtype=np.int64)
    lo = np.empty((n, 4), dtype=np.int64)
    for t in range(n):
        i0 = int((min(tx[t, 0], tx[t, 1], tx[t, 2]) - x0) / cell)
        i1 = int((max(tx[t, 0], tx[t, 1], tx[t, 2]) - x0) / cell)
        j0 = int((min(ty[t, 0], ty[t, 1], ty[t, 2]) - y0) / cell)
        j1 = int((max(ty[t, 0], ty[t, 1], ty[t, 2]) - y0) / cell)
        i0 = max(0, min(gx - 1, i0))
        i1 = max(0, min(gx - 1, i1))
        j0 = max(0, min(gy - 1, j0))
        j1 = max(0, min(gy - 1, j1))
        lo[t, 0] = i0
        lo[t, 1] = i1
        lo[t, 2] = j0
        lo[t, 3] = j1
        for j in range(j0, j1 + 1):
            for i in range(i0, i1 + 1):
                counts[j * gx + i + 1] += 1
    start = np.cumsum(counts)
    fill = start[:-1].copy()
    items = np.empty(start[-1], dtype=np.int64)
    for t in range(n):
        for j in range(lo[t, 2], lo[t, 3] + 1):
            for i in range(lo[t, 0], lo[t, 1] + 1):
                k = j * gx + i
                items[fill[k]] = t
                fill[k] += 1
    return start, items


@njit(cache=True)
def _parity_kernel(px, py, pz, tx, ty, tz, start, items, x0, y0, cell, gx, gy, tol):
    n = px.shape[0]
    inside = np.zeros(n, dtype=np.bool_)
    ambiguous = np.zeros(n, dtype=np.bool_)
    for p in range(n):
        i = int(np.floor((px[p] - x0) / cell))
        j = int(np.floor((py[p] - y0) / cell))
        if i < 0 or j < 0 or i >= gx or j >= gy:
            continue
        k = j * gx + i
        crossings = 0
        for s in range(start[k], start[k + 1]):
            t = items[s]
            ax = tx[t, 0] - px[p]
            ay = ty[t, 0] - py[p]
            bx = tx[t, 1] - px[p]
            by = ty[t, 1] - py[p]
            cx = tx[t, 2] - px[p]
            cy = ty[t, 2] - py[p]
            d = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
            if d == 0.0:
                continue
            w0 = (bx * cy - by * cx) / d
            w1 = (cx * ay - cy * ax) / d
            w2 = (ax * by - ay * bx) / d
            wmin = min(w0, w1, w2)
            if wmin < -tol:
                continue
            if wmin <= tol:
                ambiguous[p] = True
                break
            z = w0 * tz[t, 0] + w1 * tz[t, 1] + w2 * tz[t, 2]
            if z > pz[p]:
                crossings += 1
        inside[p] = (crossings % 2) == 1
    return inside, ambiguous


def _random_unit(rng: np.random.Generator) -> np.ndarray:
    while True:
        d = rng.normal(size=3)
        n = np.linalg.norm(d)
        if n > 1e-6:
            return d / n


def _frame(d: np.ndarray) -> np.ndarray:
    """Rows (e1, e2, d): an orthonormal frame whose third axis is ``d``."""
    helper = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(d, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(d, e1)
    return np.stack([e1, e2, d])


def _parity_along(points: np.ndarray, mesh: TriangleMesh, direction: np.ndarray):
    frame = _frame(direction)
    p = points @ frame.T
    c = mesh.corners() @ frame.T
    tx, ty, tz = (np.ascontiguousarray(c[..., i]) for i in range(3))
    x0, y0 = tx.min(), ty.min()
    extent = max(tx.max() - x0, ty.max() - y0, 1e-9)
    g = int(np.clip(np.sqrt(mesh.n_triangles), 1, 256))
    cell = extent / g * (1 + 1e-9)
    start, items = _bin_triangles(tx, ty, x0, y0, cell, g, g)
    return _parity_kernel(
        np.ascontiguousarray(p[:, 0]), np.ascontiguousarray(p[:, 1]), np.ascontiguousarray(p[:, 2]),
        tx, ty, tz, start, items, x0, y0, cell, g, g, _AMBIGUOUS_BARY,
    )


def points_in_mesh(points, mesh: TriangleMesh, seed: int = 0, strict: bool = False) -> np.ndarray:
    """Vectorized ray-parity containment test.

    A random ray direction is drawn per call; points whose ray passes within
    1e-9 (barycentric) of a triangle edge are re-tested with a fresh direction.
    Points within ~1e-6 mm of the surface may be classified either way.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if strict and not mesh.is_closed():
        raise NonClosedMesh("an edge is not shared by exactly two triangles")
    rng = np.random.default_rng(seed)
    result = np.zeros(len(pts), dtype=bool)
    if len(pts) == 0:
        return result
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    todo = np.flatnonzero(np.all((pts >= lo) & (pts <= hi), axis=1))
    for _ in range(16):
        if len(todo) == 0:
            break
        inside, ambiguous = _parity_along(pts[todo], mesh, _random_unit(rng))
        result[todo] = inside
        todo = todo[ambiguous]
    return result


def point_in_mesh(p, mesh: TriangleMesh, seed: int = 0, strict: bool = False) -> bool:
    return bool(points_in_mesh(np.asarray(p, dtype=np.float64)[None], mesh, seed, strict)[0])


# --------------------------------------------------------------------------
# distances and boxes


class Hausdorff(NamedTuple):
    directed_ab: float
    directed_ba: float
    symmetric: float


def _as_points(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    if len(a) == 0:
        raise EmptySet("point set is empty")
    return a


def directed_hausdorff(a, b) -> float:
    """max over a of the distance to the nearest point of b."""
    a, b = _as_points(a), _as_points(b)
    d, _ = cKDTree(b).query(a, k=1)
    return float(d.max())


def hausdorff(a, b) -> Hausdorff:
    ab = directed_hausdorff(a, b)
    ba = directed_hausdorff(b, a)
    return Hausdorff(ab, ba, max(ab, ba))


class AABB(NamedTuple):
    min: np.ndarray
    max: np.ndarray

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min + self.max)

    @property
    def extent(self) -> np.ndarray:
        return self.max - self.min

    def dilated(self, factor: float) -> "AABB":
        """Scale the box about its center by ``factor``."""
        c, h = self.center, 0.5 * self.extent * factor
        return AABB(c - h, c + h)

    def union(self, other: "AABB") -> "AABB":
        return AABB(np.minimum(self.min, other.min), np.maximum(self.max, other.max))


def aabb(points) -> AABB:
    p = _as_points(points)
    return AABB(p.min(axis=0), p.max(axis=0))


@njit(cache=True)
def _closest_sq(p, a, b, c):
    # closest point on triangle (a, b, c) to p; Ericson, Real-Time Collision Detection 5.1.5
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = ab @ ap
    d2 = ac @ ap
    if d1 <= 0.0 and d2 <= 0.0:
        q = a
    else:
        bp = p - b
        d3 = ab @ bp
        d4 = ac @ bp
        if d3 >= 0.0 and d4 <= d3:
            q = b
        else:
            vc = d1 * d4 - d3 * d2
            if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
                q = a + ab * (d1 / (d1 - d3))
            else:
                cp = p - c
                d5 = ab @ cp
                d6 = ac @ cp
                if d6 >= 0.0 and d5 <= d6:
                    q = c
                else:
                    vb = d5 * d2 - d1 * d6
                    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
                        q = a + ac * (d2 / (d2 - d6))
                    else:
                        va = d3 * d6 - d5 * d4
                        if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
                            q = b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)))
                        else:
                            denom = 1.0 / (va + vb + vc)
                            q = a + ab * (vb * denom) + ac * (vc * denom)
    r = p - q
    return r @ r


@njit(cache=True)
def _point_mesh_distance(points, corners):
    out = np.empty(points.shape[0])
    for i in range(points.shape[0]):
        best = np.inf
        for t in range(corners.shape[0]):
            d = _closest_sq(points[i], corners[t, 0], corners[t, 1], corners[t, 2])
            if d < best:
                best = d
        out[i] = np.sqrt(best)
    return out


def point_mesh_distance(points, mesh: TriangleMesh) -> np.ndarray:
    """Exact unsigned distance from each point to the mesh surface (brute force)."""
    pts = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3))
    return _point_mesh_distance(pts, np.ascontiguousarray(mesh.corners()))


# --------------------------------------------------------------------------
# components and sampling


def triangle_components(mesh: TriangleMesh) -> np.ndarray:
    """Component label per triangle; triangles sharing an edge are connected."""
    tri = mesh.triangles
    n = len(tri)
    edges = np.sort(tri[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    owner = np.repeat(np.arange(n), 3)
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    e, o = edges[order], owner[order]
    same = np.all(e[1:] == e[:-1], axis=1)
    rows, cols = o[:-1][same], o[1:][same]
    graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    return labels


def filter_connected_components(mesh: TriangleMesh, min_triangles: int) -> TriangleMesh:
    """Keep every edge-connected component with at least ``min_triangles`` triangles."""
    if min_triangles < 1:
        raise ConfigError("min_triangles must be >= 1")
    labels = triangle_components(mesh)
    sizes = np.bincount(labels)
    keep = sizes[labels] >= min_triangles
    if not keep.any():
        raise AllComponentsRemoved(f"no component has >= {min_triangles} triangles")
    tri = mesh.triangles[keep]
    used, inverse = np.unique(tri, return_inverse=True)
    return TriangleMesh(mesh.vertices[used], inverse.reshape(-1, 3))


def sample_surface(mesh: TriangleMesh, n: int, seed=0) -> np.ndarray:
    """Area-uniform surface samples (area-weighted triangle choice, uniform barycentrics)."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    rng = np.random.default_rng(seed)
    areas = mesh.areas()
    idx = rng.choice(len(areas), size=n, p=areas / areas.sum())
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    c = mesh.corners()[idx]
    return (1 - r1)[:, None] * c[:, 0] + (r1 * (1 - r2))[:, None] * c[:, 1] + (r1 * r2)[:, None] * c[:, 2]


# --------------------------------------------------------------------------
# primitives


def icosphere(subdivisions: int = 3, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    v = np.array(verts) * radius + np.asarray(center, dtype=np.float64)
    return TriangleMesh(v, np.array(faces))


def ellipsoid(semi_axes, subdivisions: int = 4, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    s = icosphere(subdivisions)
    return TriangleMesh(s.vertices * np.asarray(semi_axes, dtype=np.float64) + np.asarray(center), s.triangles)


def box(lo=(0.0, 0.0, 0.0), hi=(1.0, 1.0, 1.0)) -> TriangleMesh:
    """Closed axis-aligned box with outward-facing triangles (12 triangles)."""
    lo, hi = np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64)
    v = np.array([[hi[i] if (k >> i) & 1 else lo[i] for i in range(3)] for k in range(8)])
    faces = [
        (0, 2, 1), (1, 2, 3),  # z = lo
        (4, 5, 6), (5, 7, 6),  # z = hi
        (0, 1, 4), (1, 5, 4),  # y = lo
        (2, 6, 3), (3, 6, 7),  # y = hi
        (0, 4, 2), (2, 4, 6),  # x = lo
        (1, 3, 5), (3, 7, 5),  # x = hi
    ]
    return TriangleMesh(v, np.array(faces))


def merge_meshes(meshes: Sequence[TriangleMesh]) -> TriangleMesh:
    verts, tris, offset = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + offset)
        offset += m.n_vertices
    return TriangleMesh(np.concatenate(verts), np.concatenate(tris))


def label_points(points, scene: Scene, seed: int = 0) -> np.ndarray:
    """Class id per point: first containing tumor wins (1 + k), else kidney (1), else 0."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    labels = np.zeros(len(pts), dtype=np.int64)
    labels[points_in_mesh(pts, scene.kidney, seed)] = 1
    claimed = np.zeros(len(pts), dtype=bool)
    for k, tumor in enumerate(scene.tumors, start=1):
        hit = points_in_mesh(pts, tumor, seed) & ~claimed
        labels[hit] = 1 + k
        claimed |= hit
    return labels


def organ_surface_samples(scene: Scene, n: int, seed=0) -> np.ndarray:
    """Area-uniform samples of the outer surface of the union of all scene meshes."""
    rng = np.random.default_rng(seed)
    meshes = scene.meshes
    areas = np.array([m.areas().sum() for m in meshes])
    counts = np.maximum(1, np.round(2 * n * areas / areas.sum()).astype(int))
    kept = []
    for i, (m, c) in enumerate(zip(meshes, counts)):
        pts = sample_surface(m, int(c), rng)
        outside = np.ones(len(pts), dtype=bool)
        for j, other in enumerate(meshes):
            if j != i:
                outside &= ~points_in_mesh(pts, other, int(rng.integers(2**31)))
        kept.append(pts[outside])
    pts = np.concatenate(kept)
    if len(pts) > n:
        pts = pts[rng.choice(len(pts), n, replace=False)]
    return pts
