"""Resection planning from a labeled occupancy cloud: grasp target and two sweep-cut polylines.

Frame convention: the transverse plane is world XY; "superior" is +Z (toward
the camera) and "posterior" is -Z (toward the table).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import ConvexHull, Delaunay, cKDTree
from skimage.measure import find_contours

from .dataset import OccupancyPointCloud
from .errors import ConfigError, DegenerateProjection, NoIntersection, TooFewTumorPoints

MIN_TUMOR_POINTS = 10
MAX_ALPHA_FACTOR = 8
ORGAN_CROP_MM = 15.0


@dataclass(frozen=True)
class PlanConfig:
    margin: float = 5.0
    spacing: float = 2.0
    resolution: float = 0.5
    alpha: float | None = None
    tumor_class: int = 3
    kidney_class: int = 1

    def __post_init__(self):
        if self.margin < 0:
            raise ConfigError("margin must be >= 0")
        if self.spacing <= 0 or self.resolution <= 0:
            raise ConfigError("spacing and resolution must be positive")
        if self.alpha is not None and self.alpha <= 0:
            raise ConfigError("alpha must be positive")


@dataclass(frozen=True)
class Grasp:
    point: np.ndarray
    approach: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -1.0]))


@dataclass(eq=False)
class ResectionPlan:
    grasp: Grasp
    cuts: list[np.ndarray]
    margin: float
    central_z: float
    posterior_z: float
    fallbacks: list[str]
    tumor_hull: np.ndarray
    alpha: float

    def to_dict(self) -> dict:
        return {
            "grasp": {"point": self.grasp.point.tolist(), "approach": self.grasp.approach.tolist()},
            "cuts": [c.tolist() for c in self.cuts],
            "margin_mm": self.margin,
            "planes": {"central_z": self.central_z, "posterior_z": self.posterior_z},
            "fallbacks": list(self.fallbacks),
            "alpha_mm": self.alpha,
            "tumor_hull_xy": self.tumor_hull.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _tumor_points(occ: OccupancyPointCloud, tumor_class: int) -> np.ndarray:
    pts = occ.of_class(tumor_class)
    if len(pts) < MIN_TUMOR_POINTS:
        raise TooFewTumorPoints(f"{len(pts)} points of class {tumor_class}, need {MIN_TUMOR_POINTS}")
    return pts


def grasp_target(occ: OccupancyPointCloud, tumor_class: int = 3) -> Grasp:
    """Centroid (x, y) lifted to the top (+Z) face of the tumor bounding box; approach straight down."""
    pts = _tumor_points(occ, tumor_class)
    c = pts.mean(axis=0)
    return Grasp(np.array([c[0], c[1], pts[:, 2].max()]))


# --------------------------------------------------------------------------
# 2-D hulls


def polygon_area(poly: np.ndarray) -> float:
    """Signed shoelace area; positive for counterclockwise vertex order."""
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _ccw(poly: np.ndarray) -> np.ndarray:
    return poly if polygon_area(poly) >= 0 else poly[::-1].copy()


def default_alpha(points2d: np.ndarray) -> float:
    """Twice the median nearest-neighbor spacing."""
    d, _ = cKDTree(points2d).query(points2d, k=2)
    return 2.0 * float(np.median(d[:, 1]))


def _circumradius(p: np.ndarray, simplices: np.ndarray) -> np.ndarray:
    a, b, c = p[simplices[:, 0]], p[simplices[:, 1]], p[simplices[:, 2]]
    la = np.linalg.norm(b - c, axis=1)
    lb = np.linalg.norm(a - c, axis=1)
    lc = np.linalg.norm(a - b, axis=1)
    cross = (b - a)[:, 0] * (c - a)[:, 1] - (b - a)[:, 1] * (c - a)[:, 0]
    with np.errstate(divide="ignore"):
        return np.where(np.abs(cross) > 0, la * lb * lc / (2.0 * np.abs(cross)), np.inf)


def _alpha_boundary(p: np.ndarray, simplices: np.ndarray, keep: np.ndarray) -> np.ndarray | None:
    """Outer boundary loop of the kept triangles, or None if the complex is disconnected or not a clean loop set."""
    tris = simplices[keep]
    n = len(p)
    if len(tris) == 0 or len(np.unique(tris)) != n:
        return None
    edges = np.sort(np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]]), axis=1)
    owner = np.tile(np.arange(len(tris)), 3)
    key = edges[:, 0] * n + edges[:, 1]
    order = np.argsort(key, kind="stable")
    key_s = key[order]
    same = key_s[1:] == key_s[:-1]
    # triangles sharing an edge are adjacent
    a, b = owner[order[:-1][same]], owner[order[1:][same]]
    adj = coo_matrix((np.ones(len(a)), (a, b)), shape=(len(tris), len(tris)))
    if connected_components(adj, directed=False)[0] != 1:
        return None
    uniq, counts = np.unique(key, return_counts=True)
    bkey = uniq[counts == 1]
    bedges = np.stack([bkey // n, bkey % n], axis=1)
    deg = np.bincount(bedges.ravel(), minlength=n)
    if np.any(deg[deg > 0] != 2):
        return None
    nbrs: dict[int, list[int]] = {}
    for u, v in bedges:
        nbrs.setdefault(int(u), []).append(int(v))
        nbrs.setdefault(int(v), []).append(int(u))
    seen: set[int] = set()
    best, best_area = None, -1.0
    for s in nbrs:
        if s in seen:
            continue
        loop, prev, cur = [s], -1, s
        seen.add(s)
        while True:
            nxt = nbrs[cur][0] if nbrs[cur][0] != prev else nbrs[cur][1]
            if nxt == s:
                break
            loop.append(nxt)
            seen.add(nxt)
            prev, cur = cur, nxt
        poly = p[loop]
        area = abs(polygon_area(poly))
        if area > best_area:
            best, best_area = poly, area
    return _ccw(best)


def concave_hull(points2d, alpha: float | None = None) -> tuple[np.ndarray, dict]:
    """Alpha-shape outer boundary (triangles with circumradius <= alpha), counterclockwise.

    When the alpha complex is disconnected, leaves points uncovered or its
    boundary is not a set of simple loops, alpha is doubled up to 8 times its
    initial value; after that the convex hull is returned. ``info`` records the
    alpha used and whether the fallback fired.
    """
    p = np.unique(np.asarray(points2d, dtype=np.float64).reshape(-1, 2), axis=0)
    if len(p) < 3:
        raise DegenerateProjection("fewer than 3 distinct points")
    centered = p - p.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[1] <= 1e-9 * max(sv[0], 1e-300):
        raise DegenerateProjection("points are collinear")
    alpha0 = default_alpha(p) if alpha is None else float(alpha)
    if alpha0 <= 0:
        raise ConfigError("alpha must be positive")
    tri = Delaunay(p)
    radius = _circumradius(p, tri.simplices)
    a = alpha0
    while a <= MAX_ALPHA_FACTOR * alpha0:
        poly = _alpha_boundary(p, tri.simplices, radius <= a)
        if poly is not None:
            return poly, {"alpha": a, "alpha_factor": a / alpha0, "convex_fallback": False}
        a *= 2.0
    hull = ConvexHull(p)
    return _ccw(p[hull.vertices]), {"alpha": a / 2.0, "alpha_factor": MAX_ALPHA_FACTOR, "convex_fallback": True}


# --------------------------------------------------------------------------
# raster regions


@dataclass(frozen=True, eq=False)
class Raster:
    """Scalar field on pixel centers ``origin + (i, j) * resolution`` (i along x, j along y).

    The region is ``field <= 0``.
    """

    field: np.ndarray
    origin: np.ndarray
    resolution: float

    @property
    def mask(self) -> np.ndarray:
        return self.field <= 0

    def centers(self) -> np.ndarray:
        nx, ny = self.field.shape
        gx, gy = np.meshgrid(self.origin[0] + self.resolution * np.arange(nx),
                             self.origin[1] + self.resolution * np.arange(ny), indexing="ij")
        return np.stack([gx.ravel(), gy.ravel()], axis=1)


@njit(cache=True)
def _signed_distance(poly, pts):
    n, m = pts.shape[0], poly.shape[0]
    out = np.empty(n)
    for k in range(n):
        px, py = pts[k, 0], pts[k, 1]
        best = np.inf
        inside = False
        for i in range(m):
            ax, ay = poly[i, 0], poly[i, 1]
            bx, by = poly[(i + 1) % m, 0], poly[(i + 1) % m, 1]
            ex, ey = bx - ax, by - ay
            ll = ex * ex + ey * ey
            t = ((px - ax) * ex + (py - ay) * ey) / ll if ll > 0 else 0.0
            t = min(1.0, max(0.0, t))
            dx, dy = px - ax - t * ex, py - ay - t * ey
            d = dx * dx + dy * dy
            if d < best:
                best = d
            if (ay > py) != (by > py) and px < ax + (py - ay) * ex / ey:
                inside = not inside
        out[k] = -np.sqrt(best) if inside else np.sqrt(best)
    return out


def signed_distance(polygon: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Distance to the polygon boundary, negative inside (crossing-number parity)."""
    return _signed_distance(np.ascontiguousarray(polygon, dtype=np.float64),
                            np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 2))


def _grid_for(polygon: np.ndarray, pad: float, resolution: float) -> tuple[np.ndarray, tuple[int, int]]:
    lo = polygon.min(axis=0) - pad - 2 * resolution
    hi = polygon.max(axis=0) + pad + 2 * resolution
    shape = tuple(int(np.ceil(s / resolution)) + 1 for s in hi - lo)
    return lo, shape


def outer_contour(r: Raster) -> np.ndarray:
    """Largest closed level-0 contour of the field, counterclockwise, without repeated endpoint."""
    big = float(np.abs(r.field).max()) + 1.0
    padded = np.pad(r.field, 1, constant_values=big)
    contours = find_contours(-padded, 0.0)
    best, best_area = None, 0.0
    for c in contours:
        xy = r.origin + (c - 1.0) * r.resolution
        if len(xy) < 4:
            continue
        area = abs(polygon_area(xy[:-1]))
        if area > best_area:
            best, best_area = xy[:-1], area
    if best is None:
        raise NoIntersection("raster region is empty")
    return _ccw(best)


def offset_region(polygon, margin: float, resolution: float, grid=None) -> tuple[Raster, np.ndarray]:
    """Minkowski dilation of ``polygon`` by a disc of radius ``margin`` on a raster.

    Each pixel center stores signed distance to the polygon minus ``margin``;
    the outer contour is traced by marching squares on that field, so its
    position error is far below ``resolution``.
    """
    if margin < 0:
        raise ConfigError("margin must be >= 0")
    if resolution <= 0:
        raise ConfigError("resolution must be positive")
    polygon = np.asarray(polygon, dtype=np.float64)
    if grid is None:
        grid = _grid_for(polygon, margin, resolution)
    origin, shape = grid
    r = Raster(np.zeros(shape), np.asarray(origin, dtype=np.float64), float(resolution))
    r = Raster((signed_distance(polygon, r.centers()) - margin).reshape(shape), r.origin, r.resolution)
    return r, outer_contour(r)


def resample_closed(contour: np.ndarray, spacing: float) -> np.ndarray:
    """Evenly spaced points along a closed polyline (by arc length), starting at vertex 0."""
    closed = np.vstack([contour, contour[:1]])
    seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    perim = s[-1]
    n = max(3, int(round(perim / spacing)))
    t = np.arange(n) * (perim / n)
    return np.stack([np.interp(t, s, closed[:, 0]), np.interp(t, s, closed[:, 1])], axis=1)


def cut_contour(occ: OccupancyPointCloud, tumor_class: int = 3, kidney_class: int = 1,
                config: PlanConfig = PlanConfig()) -> tuple[np.ndarray, dict]:
    """Counterclockwise 2-D waypoints of the margin contour clipped to the organ's projection.

    The organ projection is the concave hull of every kidney- or tumor-labeled
    point (any non-zero label) within 15 mm of the raster; the tumor hull is
    offset by the margin and the two regions are intersected on a shared
    raster (max of the two fields).
    """
    tumor = _tumor_points(occ, tumor_class)[:, :2]
    if np.count_nonzero(occ.labels == kidney_class) < 3:
        raise NoIntersection(f"no kidney projection: class {kidney_class} has fewer than 3 points")
    hull, hinfo = concave_hull(tumor, config.alpha)
    kidney_xy = occ.points[occ.labels == kidney_class, :2]
    if not np.any(signed_distance(hull, kidney_xy) <= config.margin):
        raise NoIntersection("margin region misses the kidney projection")
    grid = _grid_for(hull, config.margin, config.resolution)
    # the alpha shape is local: organ points far from the raster cannot move its boundary inside it
    lo = grid[0] - ORGAN_CROP_MM
    hi = grid[0] + np.asarray(grid[1]) * config.resolution + ORGAN_CROP_MM
    organ = occ.points[occ.labels > 0, :2]
    organ = organ[np.all((organ >= lo) & (organ <= hi), axis=1)]
    organ_hull, oinfo = concave_hull(organ, config.alpha)
    tumor_r, _ = offset_region(hull, config.margin, config.resolution, grid)
    organ_field = signed_distance(organ_hull, tumor_r.centers()).reshape(tumor_r.field.shape)
    both = Raster(np.maximum(tumor_r.field, organ_field), tumor_r.origin, tumor_r.resolution)
    if not both.mask.any():
        raise NoIntersection("margin region does not overlap the kidney projection")
    contour = outer_contour(both)
    fallbacks = []
    for name, info in (("tumor", hinfo), ("organ", oinfo)):
        if info["convex_fallback"]:
            fallbacks.append(f"{name}_hull:convex")
        elif info["alpha_factor"] > 1:
            fallbacks.append(f"{name}_hull:alpha_x{info['alpha_factor']:g}")
    clipped = bool(np.any((organ_field > 0) & tumor_r.mask))
    info = {"tumor_hull": hull, "alpha": hinfo["alpha"], "fallbacks": fallbacks, "clipped": clipped}
    return resample_closed(contour, config.spacing), info


def make_plan(occ: OccupancyPointCloud, config: PlanConfig = PlanConfig()) -> ResectionPlan:
    """Grasp target plus the same clipped contour at the tumor's central and posterior heights."""
    grasp = grasp_target(occ, config.tumor_class)
    pts = occ.of_class(config.tumor_class)
    zmin, zmax = float(pts[:, 2].min()), float(pts[:, 2].max())
    z1, z2 = 0.5 * (zmin + zmax), zmin
    xy, info = cut_contour(occ, config.tumor_class, config.kidney_class, config)
    cuts = [np.column_stack([xy, np.full(len(xy), z)]) for z in (z1, z2)]
    fallbacks = info["fallbacks"] + (["clipped_to_kidney"] if info["clipped"] else [])
    return ResectionPlan(grasp, cuts, config.margin, z1, z2, fallbacks, info["tumor_hull"], info["alpha"])
