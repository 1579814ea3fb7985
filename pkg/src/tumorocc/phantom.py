"""Built-in desk-scale kidney phantom and scene files."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

from .errors import InvalidGeometry
from .geometry import Scene, ellipsoid, icosphere, points_in_mesh, sample_surface
from .io import read_obj, write_obj


@dataclass(frozen=True)
class PhantomParams:
    kidney_semi_axes: tuple[float, float, float] = (50.0, 30.0, 25.0)
    kidney_subdivisions: int = 4
    endophytic_diameter: float = 38.0
    endophytic_center: tuple[float, float, float] = (-20.0, 0.0, -1.0)
    exophytic_diameter: float = 32.0
    exophytic_center: tuple[float, float, float] = (24.0, 2.0, 18.0)
    tumor_subdivisions: int = 3


def builtin_phantom(params: PhantomParams = PhantomParams()) -> Scene:
    """Ellipsoid kidney (~100 x 60 x 50 mm) with a 38 mm endophytic and a 32 mm exophytic tumor.

    Tumor 1 (class 2) is endophytic, tumor 2 (class 3) is exophytic.
    """
    kidney = ellipsoid(params.kidney_semi_axes, params.kidney_subdivisions)
    endo = icosphere(params.tumor_subdivisions, params.endophytic_diameter / 2, params.endophytic_center)
    exo = icosphere(params.tumor_subdivisions, params.exophytic_diameter / 2, params.exophytic_center)
    scene = Scene(kidney, (endo, exo), ("endophytic", "exophytic"))
    validate_tumor_kinds(scene)
    return scene


def validate_tumor_kinds(scene: Scene, n_samples: int = 2000, seed: int = 0) -> None:
    """Endophytic tumors must lie fully inside the kidney; exophytic ones must cross its surface."""
    for k, (tumor, kind) in enumerate(zip(scene.tumors, scene.tumor_kinds), start=1):
        inside = points_in_mesh(sample_surface(tumor, n_samples, seed), scene.kidney, seed)
        if kind == "endophytic" and not inside.all():
            raise InvalidGeometry(f"endophytic tumor {k} is not fully inside the kidney")
        if kind == "exophytic" and (inside.all() or not inside.any()):
            raise InvalidGeometry(f"exophytic tumor {k} does not intersect the kidney surface")


def write_scene(directory, scene: Scene, extra: dict | None = None) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_obj(d / "kidney.obj", scene.kidney)
    tumors = []
    for k, (mesh, kind) in enumerate(zip(scene.tumors, scene.tumor_kinds), start=1):
        write_obj(d / f"tumor_{k}.obj", mesh)
        tumors.append({"path": f"tumor_{k}.obj", "kind": kind, "class_id": 1 + k})
    meta = {
        "kidney": {"path": "kidney.obj", "class_id": 1},
        "tumors": tumors,
        "classes": ["outside", "kidney"] + [f"tumor_{k}" for k in range(1, len(tumors) + 1)],
        "units": "mm",
    }
    meta.update(extra or {})
    (d / "scene.json").write_text(json.dumps(meta, indent=2))
    return d / "scene.json"


def read_scene(path) -> Scene:
    """Read a scene from ``scene.json`` (or the directory containing it)."""
    p = Path(path)
    if p.is_dir():
        p = p / "scene.json"
    meta = json.loads(p.read_text())
    kidney = read_obj(p.parent / meta["kidney"]["path"])
    tumors = sorted(meta.get("tumors", []), key=lambda t: t["class_id"])
    return Scene(
        kidney,
        tuple(read_obj(p.parent / t["path"]) for t in tumors),
        tuple(t.get("kind", "tumor") for t in tumors),
    )


def params_dict(params: PhantomParams) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(params).items()}


def kidney_midsection_height(scene: Scene) -> float:
    """Z extent of the kidney cross-section at the kidney's mid-X plane."""
    from .deform import cross_section_z_extent

    v = scene.kidney.vertices
    xm = 0.5 * (v[:, 0].min() + v[:, 0].max())
    lo, hi = cross_section_z_extent(scene.kidney, xm)
    return hi - lo

