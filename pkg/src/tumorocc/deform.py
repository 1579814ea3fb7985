"""Visible-vertex Gaussian-falloff drags and midsection compression."""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, EmptyVisibleSet, ExcessiveCompression
from .geometry import Scene, TriangleMesh
from .sensor import CameraModel, RayCaster

DEFAULT_VISIBILITY_EPS = 1.0


@dataclass(frozen=True)
class DeformationStep:
    """One row entry ``(d_max, sigma_sq, repeats)``: drag magnitude bound (mm), falloff variance (mm^2)."""

    d_max: float
    sigma_sq: float
    repeats: int = 1

    def __post_init__(self):
        if not (self.d_max > 0 and self.sigma_sq > 0):
            raise ConfigError(f"invalid deformation step {self}: d_max and sigma_sq must be > 0")
        if int(self.repeats) != self.repeats or self.repeats < 1:
            raise ConfigError(f"invalid deformation step {self}: repeats must be >= 1")


@dataclass(frozen=True)
class DeformationConfig:
    steps: tuple[DeformationStep, ...]

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        if not self.steps:
            raise ConfigError("deformation config needs at least one step")

    @property
    def total_drags(self) -> int:
        return sum(s.repeats for s in self.steps)

    @property
    def max_total_displacement(self) -> float:
        return sum(s.d_max * s.repeats for s in self.steps)

    @classmethod
    def parse(cls, text: str) -> "DeformationConfig":
        """Parse the tuple syntax ``"(8,11.7,1),(6,10,1),..."``."""
        body = text.strip()
        if not re.fullmatch(r"\s*\(([^()]*)\)(\s*,\s*\([^()]*\))*\s*", body):
            raise ConfigError(f"cannot parse deformation config {text!r}")
        steps = []
        for group in re.findall(r"\(([^()]*)\)", body):
            parts = [p.strip() for p in group.split(",")]
            if len(parts) != 3:
                raise ConfigError(f"deformation step needs 3 values, got {group!r}")
            try:
                d, s2, r = float(parts[0]), float(parts[1]), float(parts[2])
            except ValueError as exc:
                raise ConfigError(f"non-numeric deformation step {group!r}") from exc
            if r != int(r):
                raise ConfigError(f"repeat count must be an integer in {group!r}")
            steps.append(DeformationStep(d, s2, int(r)))
        return cls(tuple(steps))

    def __str__(self) -> str:
        return ",".join(f"({s.d_max:g},{s.sigma_sq:g},{s.repeats})" for s in self.steps)


TABLE_CONFIGS = {
    1: "(16,33.3,1)",
    2: "(16,33.3,1),(16,16.7,1),(8,11.7,1)",
    3: "(8,11.7,1),(6,10,1),(4,6.7,1),(4,3.3,5),(2,3.3,10)",
    4: "(16,13.3,1),(16,10,1),(16,6.7,1)",
    5: "(10,33.3,1),(16,13.3,1),(16,6.7,1)",
    6: "(16,33.3,1),(16,16.7,1),(8,11.7,1),(6,10,1),(4,6.7,1),(4,3.3,5),(2,3.3,10)",
}
DEFAULT_CONFIG = TABLE_CONFIGS[3]


def visible_vertices(scene: Scene, camera: CameraModel, epsilon: float = DEFAULT_VISIBILITY_EPS) -> np.ndarray:
    """Indices of kidney vertices the camera can see.

    A vertex is visible when it projects inside the image and the first hit
    along the camera ray through its projection is no more than ``epsilon``
    nearer than the vertex itself. Occlusion accounts for all scene meshes.
    """
    caster = RayCaster(scene, camera)
    cam = camera.to_camera(scene.kidney.vertices)
    z = cam[:, 2]
    front = z > 1e-6
    pu, pv = camera.project(np.where(front[:, None], cam, 1.0))
    inside = front & (pu > -0.5) & (pu < camera.width - 0.5) & (pv > -0.5) & (pv < camera.height - 0.5)
    idx = np.flatnonzero(inside)
    if len(idx):
        hit = caster.depth_at(pu[idx], pv[idx])
        idx = idx[hit >= z[idx] - epsilon]
    if len(idx) == 0:
        raise EmptyVisibleSet("no kidney vertex is visible from the camera")
    return idx


def falloff(dist_sq: np.ndarray, sigma_sq: float) -> np.ndarray:
    """Peak-normalized Gaussian weight exp(-d^2 / (2 sigma^2))."""
    return np.exp(-np.asarray(dist_sq) / (2.0 * sigma_sq))


def random_direction(rng: np.random.Generator) -> np.ndarray:
    while True:
        u = rng.normal(size=3)
        n = np.linalg.norm(u)
        if n > 1e-12:
            return u / n


def apply_step(scene: Scene, step: DeformationStep, visible, seed=None, record: list | None = None) -> Scene:
    """Apply ``step.repeats`` drags of visible kidney vertices.

    Each drag picks a visible vertex ``v``, a magnitude in (0, d_max] and an
    isotropic direction, and moves every vertex of every mesh by the magnitude
    times the Gaussian falloff of its distance to ``v``.
    """
    visible = np.asarray(visible, dtype=np.int64)
    if len(visible) == 0:
        raise EmptyVisibleSet("visible set is empty")
    rng = np.random.default_rng(seed)
    verts = [m.vertices.copy() for m in scene.meshes]
    for _ in range(step.repeats):
        vi = int(visible[rng.integers(len(visible))])
        magnitude = step.d_max * (1.0 - rng.random())
        u = random_direction(rng)
        center = verts[0][vi].copy()
        for v in verts:
            d2 = np.sum((v - center) ** 2, axis=1)
            v += (magnitude * falloff(d2, step.sigma_sq))[:, None] * u
        if record is not None:
            record.append({"vertex": vi, "magnitude": magnitude, "direction": u.tolist(),
                           "d_max": step.d_max, "sigma_sq": step.sigma_sq})
    return scene.with_vertices(verts)


def apply_config(scene: Scene, config: DeformationConfig, camera: CameraModel, seed=None,
                 epsilon: float = DEFAULT_VISIBILITY_EPS, record: list | None = None) -> Scene:
    """Apply every step in order; visibility is recomputed before each step."""
    rng = np.random.default_rng(seed)
    for step in config.steps:
        visible = visible_vertices(scene, camera, epsilon)
        scene = apply_step(scene, step, visible, rng, record)
    return scene


def cross_section_z_extent(mesh: TriangleMesh, x: float) -> tuple[float, float]:
    """(min z, max z) of the mesh's intersection with the plane X = x."""
    v = mesh.vertices
    e = mesh.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
    a, b = v[e[:, 0]], v[e[:, 1]]
    sa, sb = a[:, 0] - x, b[:, 0] - x
    cross = (sa * sb < 0)
    t = sa[cross] / (sa[cross] - sb[cross])
    z = a[cross, 2] + t * (b[cross, 2] - a[cross, 2])
    z = np.concatenate([z, v[v[:, 0] == x, 2]])
    if len(z) == 0:
        raise ConfigError(f"plane x={x} does not cut the mesh")
    return float(z.min()), float(z.max())


def compress_midsection(scene: Scene, depth: float, width: float | None = None) -> Scene:
    """Squeeze the scene toward its kidney mid-plane along Z around the kidney's mid-X.

    Z offsets from the mid-plane are scaled by ``f(x) = 1 - (depth / H) g(x)``
    where ``H`` is the kidney midsection height and ``g`` a unit Gaussian
    centered at mid-X (sigma ``width``, default a quarter of the kidney
    length); Y offsets are divided by ``f`` so cross-section areas are kept.
    """
    if depth < 0:
        raise ConfigError("compression depth must be >= 0")
    if depth == 0:
        return scene
    kv = scene.kidney.vertices
    xmid = 0.5 * (kv[:, 0].min() + kv[:, 0].max())
    ymid = 0.5 * (kv[:, 1].min() + kv[:, 1].max())
    zlo, zhi = cross_section_z_extent(scene.kidney, xmid)
    height, zmid = zhi - zlo, 0.5 * (zlo + zhi)
    if depth > height / 2:
        raise ExcessiveCompression(f"compression {depth} mm exceeds half the midsection height {height:.2f} mm")
    if width is None:
        width = 0.25 * (kv[:, 0].max() - kv[:, 0].min())
    out = []
    for m in scene.meshes:
        v = m.vertices.copy()
        f = 1.0 - (depth / height) * np.exp(-((v[:, 0] - xmid) ** 2) / (2 * width ** 2))
        v[:, 2] = zmid + (v[:, 2] - zmid) * f
        v[:, 1] = ymid + (v[:, 1] - ymid) / f
        out.append(v)
    return scene.with_vertices(out)


def parse_config(text_or_config) -> DeformationConfig:
    if isinstance(text_or_config, DeformationConfig):
        return text_or_config
    if isinstance(text_or_config, Sequence) and not isinstance(text_or_config, str):
        return DeformationConfig(tuple(DeformationStep(*s) for s in text_or_config))
    return DeformationConfig.parse(str(text_or_config))
