"""Occupancy labeling, class-balanced occupancy clouds, rotation regimes and training pairs."""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .deform import DeformationConfig, apply_config, parse_config
from .errors import ConfigError, InsufficientCandidates
from .geometry import Scene, aabb, label_points, sample_surface
from .io import read_ply, write_ply
from .sensor import CameraModel, DepthPointCloud, query_bounds, scan

log = logging.getLogger(__name__)

NEAR_SURFACE_SIGMA = 3.0
MAX_OVERSAMPLE = 50


def derive_seed(master: int, index: int) -> int:
    """Independent per-index seed; order-independent by construction."""
    return int(np.random.SeedSequence([int(master), int(index)]).generate_state(1)[0])


@dataclass(frozen=True, eq=False)
class OccupancyPointCloud:
    points: np.ndarray
    labels: np.ndarray
    n_classes: int = 4

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        lab = np.asarray(self.labels, dtype=np.int64).ravel()
        if len(pts) != len(lab):
            raise ConfigError("points and labels differ in length")
        if len(lab) and (lab.min() < 0 or lab.max() >= self.n_classes):
            raise ConfigError("label outside [0, n_classes)")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", lab)

    def __len__(self) -> int:
        return len(self.points)

    def of_class(self, c: int) -> np.ndarray:
        return self.points[self.labels == c]


@dataclass(frozen=True)
class RotationRegime:
    mode: str = "limited"
    tilt_deg: float = 15.0

    def __post_init__(self):
        if self.mode not in ("full", "limited", "none"):
            raise ConfigError(f"unknown rotation regime {self.mode!r}")
        if self.tilt_deg < 0:
            raise ConfigError("tilt bound must be >= 0")


def label_query(p, scene: Scene) -> int:
    """Class of a single point: tumors take precedence over the kidney."""
    return int(label_points(np.asarray(p, dtype=np.float64)[None], scene)[0])


def _euler_zyx(z_deg: float, y_deg: float, x_deg: float) -> np.ndarray:
    return Rotation.from_euler("ZYX", [z_deg, y_deg, x_deg], degrees=True).as_matrix()


def random_rotation(regime: RotationRegime, seed=None) -> np.ndarray:
    """Full: uniform over SO(3) via a uniform unit quaternion (Shoemake).
    Limited: yaw ~ U[0, 360), pitch/roll ~ U[-tilt, tilt], composed Rz Ry Rx.
    """
    rng = np.random.default_rng(seed)
    if regime.mode == "none":
        return np.eye(3)
    if regime.mode == "full":
        u1, u2, u3 = rng.random(3)
        a, b = np.sqrt(1 - u1), np.sqrt(u1)
        q = [a * np.sin(2 * np.pi * u2), a * np.cos(2 * np.pi * u2), b * np.sin(2 * np.pi * u3), b * np.cos(2 * np.pi * u3)]
        return Rotation.from_quat(q).as_matrix()
    yaw = rng.uniform(0.0, 360.0)
    pitch, roll = rng.uniform(-regime.tilt_deg, regime.tilt_deg, size=2)
    return _euler_zyx(yaw, pitch, roll)


def yaw_rotation(deg: float) -> np.ndarray:
    return _euler_zyx(deg, 0.0, 0.0)


def sample_occupancy_cloud(scene: Scene, n: int, near_surface_fraction: float = 0.5, seed=None,
                           bounds=None) -> OccupancyPointCloud:
    """Labeled, class-balanced occupancy samples.

    Candidates mix uniform samples in ``bounds`` (default: scene box scaled by
    1.2) with Gaussian (3 mm) offsets of surface samples, split evenly across
    the scene meshes. Each class is then filled toward an equal quota; classes
    that run short are topped up from the others so exactly ``n`` points come out.
    """
    C = scene.n_classes
    if n < C:
        raise ConfigError(f"n={n} is smaller than the class count {C}")
    if not 0.0 <= near_surface_fraction <= 1.0:
        raise ConfigError("near_surface_fraction must be in [0, 1]")
    rng = np.random.default_rng(seed)
    if bounds is None:
        bounds = aabb(scene.all_vertices()).dilated(1.2)
    meshes = scene.meshes
    oversample = 4
    while True:
        m = oversample * n
        n_near = int(round(m * near_surface_fraction))
        parts = [rng.uniform(bounds.min, bounds.max, size=(m - n_near, 3))]
        for i, mesh in enumerate(meshes):
            k = n_near // len(meshes) + (1 if i < n_near % len(meshes) else 0)
            if k:
                parts.append(sample_surface(mesh, k, rng) + rng.normal(0.0, NEAR_SURFACE_SIGMA, size=(k, 3)))
        cand = np.concatenate(parts)
        labels = label_points(cand, scene, int(rng.integers(2**31)))
        counts = np.bincount(labels, minlength=C)
        if np.all(counts[1:] > 0) or oversample >= MAX_OVERSAMPLE:
            break
        oversample = min(MAX_OVERSAMPLE, oversample * 2)
    missing = [c for c in range(1, C) if counts[c] == 0]
    if missing:
        raise InsufficientCandidates(f"classes {missing} have no candidate after {MAX_OVERSAMPLE}x oversampling")

    pools = [rng.permutation(np.flatnonzero(labels == c)) for c in range(C)]
    quota = np.full(C, n // C)
    quota[: n % C] += 1
    take = np.minimum(quota, counts)
    deficit = n - take.sum()
    while deficit > 0:
        spare = np.flatnonzero(counts > take)
        if len(spare) == 0:
            raise InsufficientCandidates("not enough candidates in total")
        for c in spare:
            if deficit == 0:
                break
            take[c] += 1
            deficit -= 1
    chosen = np.concatenate([pools[c][: take[c]] for c in range(C)])
    chosen = chosen[rng.permutation(len(chosen))]
    return OccupancyPointCloud(cand[chosen], labels[chosen], C)


@dataclass(eq=False)
class TrainingPair:
    dpp: DepthPointCloud
    occ: OccupancyPointCloud
    seed: int
    rotation: np.ndarray
    deformation: list = field(default_factory=list)


@dataclass(frozen=True)
class PairSettings:
    n_dpp: int = 1000
    n_occ: int = 2048
    near: float = 110.0
    far: float = 150.0
    near_surface_fraction: float = 0.5
    visibility_eps: float = 1.0
    query_dilation: float = 1.2


def make_pair(base: Scene, config, regime: RotationRegime, camera: CameraModel, seed: int,
              settings: PairSettings = PairSettings()) -> TrainingPair:
    """Rotate, deform, scan and sample one training pair; fully determined by ``seed``.

    The occupancy sampling box is the dilated scene box extended to cover the
    inference query box of the pair's DPP so that training sees every region
    the network is later queried on.
    """
    config = parse_config(config)
    rot_ss, def_ss, dpp_ss, occ_ss = np.random.SeedSequence(int(seed)).spawn(4)
    rotation = random_rotation(regime, np.random.default_rng(rot_ss))
    scene = base.transformed(rotation)
    record: list = []
    deformed = apply_config(scene, config, camera, np.random.default_rng(def_ss), settings.visibility_eps, record)
    dpp = scan(deformed, camera, settings.near, settings.far, settings.n_dpp, np.random.default_rng(dpp_ss))
    bounds = aabb(deformed.all_vertices()).dilated(1.2).union(query_bounds(dpp.points, settings.query_dilation))
    occ = sample_occupancy_cloud(deformed, settings.n_occ, settings.near_surface_fraction,
                                 np.random.default_rng(occ_ss), bounds)
    return TrainingPair(dpp, occ, int(seed), rotation, record)


def _make_indexed(args):
    base, config, regime, camera, master, index, settings = args
    return make_pair(base, config, regime, camera, derive_seed(master, index), settings)


def generate_pairs(base: Scene, config, regime: RotationRegime, camera: CameraModel, indices: Iterable[int],
                   master_seed: int, settings: PairSettings = PairSettings(), workers: int = 1) -> list[TrainingPair]:
    """Pairs for the given indices; pair ``i`` always uses ``derive_seed(master_seed, i)``."""
    config = parse_config(config)
    jobs = [(base, config, regime, camera, master_seed, int(i), settings) for i in indices]
    if workers <= 1:
        return [_make_indexed(j) for j in jobs]
    with ProcessPoolExecutor(workers) as ex:
        return list(ex.map(_make_indexed, jobs, chunksize=8))


# --------------------------------------------------------------------------
# arrays for training


@dataclass(eq=False)
class PairArrays:
    """Stacked pairs: dpp (P, N, 3), occ_points (P, M, 3), occ_labels (P, M)."""

    dpp: np.ndarray
    occ_points: np.ndarray
    occ_labels: np.ndarray
    n_classes: int

    def __len__(self) -> int:
        return len(self.dpp)

    def subset(self, idx) -> "PairArrays":
        return PairArrays(self.dpp[idx], self.occ_points[idx], self.occ_labels[idx], self.n_classes)


def pad_points(points: np.ndarray, n: int) -> np.ndarray:
    """Exactly ``n`` points; short clouds are padded by repeating points (max pooling ignores duplicates)."""
    if len(points) >= n:
        return points[:n]
    reps = np.resize(np.arange(len(points)), n)
    return points[reps]


def stack_pairs(pairs: Sequence[TrainingPair], n_dpp: int | None = None) -> PairArrays:
    if not pairs:
        raise ConfigError("no pairs to stack")
    n_dpp = n_dpp or max(len(p.dpp) for p in pairs)
    return PairArrays(
        np.stack([pad_points(p.dpp.points, n_dpp) for p in pairs]).astype(np.float32),
        np.stack([p.occ.points for p in pairs]).astype(np.float32),
        np.stack([p.occ.labels for p in pairs]).astype(np.int64),
        pairs[0].occ.n_classes,
    )


# --------------------------------------------------------------------------
# dataset directories


def write_dataset(directory, pairs: Sequence[TrainingPair], meta: dict, start_index: int = 0) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    records = []
    for i, p in enumerate(pairs, start=start_index):
        write_ply(d / f"dpp_{i:06d}.ply", p.dpp.points)
        write_ply(d / f"occ_{i:06d}.ply", p.occ.points, p.occ.labels.astype(np.uint8))
        records.append({"index": i, "seed": p.seed, "rotation": p.rotation.tolist(), "drags": p.deformation})
    with open(d / "pairs.jsonl", "w") as fh:
        for r in records:
            fh.write(json.dumps(r) + "\n")
    (d / "meta.json").write_text(json.dumps(dict(meta, count=len(pairs), start_index=start_index), indent=2))


def read_dataset(directory) -> tuple[PairArrays, dict]:
    d = Path(directory)
    meta = json.loads((d / "meta.json").read_text())
    n_classes = int(meta["n_classes"])
    dpps, occ_pts, occ_lab = [], [], []
    n_dpp = int(meta.get("settings", {}).get("n_dpp", 1000))
    start = int(meta.get("start_index", 0))
    for i in range(start, start + int(meta["count"])):
        pts, _ = read_ply(d / f"dpp_{i:06d}.ply")
        dpps.append(pad_points(pts, n_dpp))
        p, lab = read_ply(d / f"occ_{i:06d}.ply")
        occ_pts.append(p)
        occ_lab.append(lab)
    arrays = PairArrays(
        np.stack(dpps).astype(np.float32), np.stack(occ_pts).astype(np.float32),
        np.stack(occ_lab).astype(np.int64), n_classes,
    )
    return arrays, meta
