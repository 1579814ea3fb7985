"""Command line front end: scene synthesis, data generation, training, inference, evaluation, planning.

Every stage is also callable as a function (``run_*``) returning the report it writes.
Reports embed ``config_hash`` (of the stage's inputs) and the master ``seed``;
wall-clock measurements go to separate ``*.timing.json`` files so the
reports themselves are bit-reproducible.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .ctsim import CtVolume, VoxelMask, load_volume, save_volume, segment_scene, synth_ct
from .dataset import (PairSettings, RotationRegime, derive_seed, generate_pairs, read_dataset, write_dataset,
                      yaw_rotation, OccupancyPointCloud)
from .deform import DEFAULT_CONFIG, compress_midsection, parse_config
from .errors import ConfigError, DataError, TumorOccError
from .evalrec import DESK_GRID, bench_queries, miou, rasterize_scene, reconstruct_grid, structure_metrics
from .geometry import Scene
from .io import read_obj, read_ply, write_ply, write_raw
from .phantom import PhantomParams, builtin_phantom, read_scene, validate_tumor_kinds, write_scene
from .resect import PlanConfig, make_plan
from .sensor import CameraModel, DepthPointCloud, scan

log = logging.getLogger("tumorocc")

VARIANTS = {
    "d1": ("compress", 4.0), "d2": ("compress", 8.0), "d3": ("compress", 12.0),
    "rot90": ("yaw", 90.0), "rot180": ("yaw", 180.0), "rot270": ("yaw", 270.0),
    "base": ("compress", 0.0),
}
ALL_VARIANTS = ("d1", "d2", "d3", "rot90", "rot180", "rot270")


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest()[:16]


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def _write_json(path, obj) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _timing_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".timing.json")


def _need(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise DataError(f"{what} not found: {p}")
    return p


def _regime(name: str, tilt: float) -> RotationRegime:
    return RotationRegime(name, tilt)


# --------------------------------------------------------------------------
# stages


def run_gen_scene(out, kind: str = "builtin", kidney=None, tumors=(), kinds=(), seed: int = 0) -> dict:
    """Builtin phantom or a scene assembled from OBJ files (tumors in class order)."""
    if kind == "builtin":
        params = PhantomParams()
        scene = builtin_phantom(params)
        cfg = {"kind": kind, "params": asdict(params)}
    elif kind == "obj":
        if kidney is None or not tumors:
            raise ConfigError("--kidney and at least one --tumor are required for kind obj")
        kinds = tuple(kinds) or tuple("tumor" for _ in tumors)
        if len(kinds) != len(tumors):
            raise ConfigError("--kinds must list one kind per tumor")
        scene = Scene(read_obj(_need(kidney, "kidney OBJ")),
                      tuple(read_obj(_need(t, "tumor OBJ")) for t in tumors), kinds)
        validate_tumor_kinds(scene)
        cfg = {"kind": kind, "kidney": file_hash(kidney), "tumors": [file_hash(t) for t in tumors], "kinds": kinds}
    else:
        raise ConfigError(f"unknown scene kind {kind!r}")
    meta = {"config_hash": config_hash(cfg), "seed": seed, "generator": cfg}
    write_scene(out, scene, meta)
    return meta


def run_gen_data(scene_dir, out, count: int, seed: int, config: str = DEFAULT_CONFIG, rotation: str = "limited",
                 tilt: float = 15.0, start: int = 0, settings: PairSettings = PairSettings(),
                 workers: int = 1) -> dict:
    scene = read_scene(_need(scene_dir, "scene"))
    deformation = parse_config(config)
    regime = _regime(rotation, tilt)
    camera = CameraModel()
    if count < 1:
        raise ConfigError("count must be >= 1")
    cfg = {"scene": file_hash(Path(scene_dir) / "scene.json"), "config": str(deformation),
           "rotation": asdict(regime), "settings": asdict(settings), "camera": camera.to_dict()}
    t0 = time.perf_counter()
    pairs = generate_pairs(scene, deformation, regime, camera, range(start, start + count), seed, settings, workers)
    meta = dict(cfg, config_hash=config_hash(cfg), seed=seed, n_classes=scene.n_classes)
    write_dataset(out, pairs, meta, start)
    _write_json(Path(out) / "generation.timing.json", {"wall_s": time.perf_counter() - t0, "count": count})
    return meta


def run_train(data_dir, out, val_dir=None, net_config=None, train_config=None) -> dict:
    from .occnet import NetworkConfig, TrainConfig, save_checkpoint, set_threads_from_env, train

    set_threads_from_env()
    data, dmeta = read_dataset(_need(data_dir, "dataset"))
    val = read_dataset(_need(val_dir, "validation dataset"))[0] if val_dir else None
    nc = net_config or NetworkConfig(n_classes=data.n_classes)
    tc = train_config or TrainConfig()
    cfg = {"data": dmeta["config_hash"], "data_count": dmeta["count"], "data_start": dmeta.get("start_index", 0),
           "val": read_dataset(val_dir)[1]["config_hash"] if val_dir else None,
           "net": asdict(nc), "train": asdict(tc)}
    t0 = time.perf_counter()
    timings = []
    net, hist = train(data, nc, tc, val, callback=lambda r: timings.append(r.pop("wall_ms")))
    report = {"config_hash": config_hash(cfg), "seed": tc.seed, "config": cfg, "steps": hist.steps,
              "best_epoch": hist.best_epoch, "best_val_miou": hist.best_miou if val is not None else None,
              "history": hist.records}
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out, net, {"config_hash": report["config_hash"], "seed": tc.seed})
    _write_json(out.with_suffix(".json"), report)
    _write_json(_timing_path(out.with_suffix(".json")),
                {"wall_s": time.perf_counter() - t0, "epoch_ms": timings})
    return report


def _load_net(checkpoint):
    from .occnet import load_checkpoint, set_threads_from_env

    set_threads_from_env()
    return load_checkpoint(_need(checkpoint, "checkpoint"))


def variant_scene(base: Scene, name: str) -> Scene:
    """Compression (d1-d3: 4/8/12 mm) or yaw rotation (rot90/180/270) of the undeformed scene."""
    if name not in VARIANTS:
        raise ConfigError(f"unknown variant {name!r}; choose from {sorted(VARIANTS)}")
    kind, value = VARIANTS[name]
    if kind == "compress":
        return compress_midsection(base, value)
    return base.transformed(yaw_rotation(value))


def _scan_variant(base: Scene, name: str, seed: int, settings: PairSettings) -> tuple[Scene, DepthPointCloud]:
    scene = variant_scene(base, name)
    idx = list(VARIANTS).index(name)
    dpp = scan(scene, CameraModel(), settings.near, settings.far, settings.n_dpp, derive_seed(seed, idx))
    return scene, dpp


def _clean(obj):
    """JSON-safe copy: NaN becomes None."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def run_infer(checkpoint, out, dpp_path=None, scene_dir=None, variant: str = "base", n_queries: int = 40000,
              seed: int = 0) -> dict:
    """Label ``n_queries`` random queries around a DPP (read from PLY or scanned from a scene variant)."""
    from .occnet import infer_occupancy

    net, cmeta = _load_net(checkpoint)
    if dpp_path is not None:
        pts, _ = read_ply(_need(dpp_path, "DPP"))
        dpp = DepthPointCloud(pts)
        src = file_hash(dpp_path)
    elif scene_dir is not None:
        _, dpp = _scan_variant(read_scene(_need(scene_dir, "scene")), variant, seed, PairSettings())
        src = {"scene": file_hash(Path(scene_dir) / "scene.json"), "variant": variant}
    else:
        raise ConfigError("give --dpp or --scene")
    occ = infer_occupancy(dpp, net, n_queries, seed)
    cfg = {"checkpoint": cmeta.get("config_hash"), "source": src, "n_queries": n_queries}
    h = config_hash(cfg)
    write_ply(out, occ.points, occ.labels.astype(np.uint8), [f"config_hash {h}", f"seed {seed}"])
    return {"config_hash": h, "seed": seed, "n_points": len(occ), "counts": np.bincount(occ.labels, minlength=net.config.n_classes).tolist()}


def evaluate_variants(net, base: Scene, variants, seed: int = 0, dims=DESK_GRID,
                      settings: PairSettings = PairSettings(), n_reference: int = 20000) -> dict:
    """Per variant: grid reconstruction, per-structure HD/center error and grid mIoU against the oracle raster."""
    out = {}
    for name in variants:
        scene, dpp = _scan_variant(base, name, seed, settings)
        grid = reconstruct_grid(dpp, net, dims)
        oracle = rasterize_scene(scene, dims, _grid_bounds(grid))
        iou, m = miou(grid.values.ravel(), oracle.values.ravel(), scene.n_classes)
        entry = structure_metrics(grid, scene, n_reference, seed)
        entry["grid_miou"] = m
        entry["grid_iou"] = iou.tolist()
        out[name] = entry
    return out


def _grid_bounds(grid):
    from .geometry import AABB

    lo = grid.origin - 0.5 * grid.spacing
    return AABB(lo, lo + grid.spacing * np.asarray(grid.dims))


def table_rows(variants: dict) -> list[dict]:
    """Flat rows: one per variant with H (symmetric HD) and C (center error) per structure."""
    rows = []
    for name, entry in variants.items():
        row = {"variant": name}
        for s, m in entry.items():
            if s.startswith("_") or not isinstance(m, dict):
                continue
            row[f"{s}_H"] = m.get("hd_symmetric")
            row[f"{s}_C"] = m.get("center_error")
        rows.append(row)
    return rows


def heldout_miou(net, data) -> dict:
    """Pooled mIoU over every occupancy sample of a held-out dataset."""
    from .occnet import predict_logits

    preds = []
    for i in range(len(data)):
        preds.append(np.argmax(predict_logits(data.dpp[i], data.occ_points[i], net), axis=1))
    iou, m = miou(np.concatenate(preds), data.occ_labels.ravel(), data.n_classes)
    return {"miou": m, "per_class_iou": iou.tolist(), "n_pairs": len(data)}


def run_eval(checkpoint, scene_dir, out, variants=ALL_VARIANTS, seed: int = 0, grid: int = DESK_GRID[0],
             heldout_dir=None) -> dict:
    net, cmeta = _load_net(checkpoint)
    base = read_scene(_need(scene_dir, "scene"))
    dims = (grid,) * 3
    cfg = {"checkpoint": cmeta.get("config_hash"), "scene": file_hash(Path(scene_dir) / "scene.json"),
           "variants": list(variants), "grid": dims,
           "heldout": read_dataset(heldout_dir)[1]["config_hash"] if heldout_dir else None}
    t0 = time.perf_counter()
    res = evaluate_variants(net, base, variants, seed, dims)
    report = {"config_hash": config_hash(cfg), "seed": seed, "config": cfg, "variants": res, "table": table_rows(res)}
    if heldout_dir:
        report["heldout"] = heldout_miou(net, read_dataset(heldout_dir)[0])
    report = _clean(report)
    _write_json(out, report)
    _write_json(_timing_path(out), {"wall_s": time.perf_counter() - t0})
    return report


def run_plan(occ_path, out, config: PlanConfig = PlanConfig(), n_classes: int | None = None) -> dict:
    pts, labels = read_ply(_need(occ_path, "occupancy cloud"))
    if labels is None:
        raise DataError("occupancy cloud has no label property")
    labels = labels.astype(np.int64)
    occ = OccupancyPointCloud(pts, labels, n_classes or int(labels.max()) + 1)
    plan = make_plan(occ, config)
    cfg = {"occ": file_hash(occ_path), "plan": asdict(config)}
    report = dict(plan.to_dict(), config_hash=config_hash(cfg), seed=None)
    _write_json(out, report)
    return report


def run_bench(checkpoint, scene_dir, out, n_queries: int = 40000, repeats: int = 5, seed: int = 0) -> dict:
    net, cmeta = _load_net(checkpoint)
    _, dpp = _scan_variant(read_scene(_need(scene_dir, "scene")), "base", seed, PairSettings())
    import torch

    res = bench_queries(dpp, net, n_queries, repeats, seed=seed)
    res.update(config_hash=config_hash({"checkpoint": cmeta.get("config_hash"), "n_queries": n_queries}),
               seed=seed, threads=torch.get_num_threads())
    _write_json(out, res)
    return res


def run_ct_sim(scene_dir, out, spacing: float = 1.0, dims=None, noise: float = 20.0, seed: int = 0,
               pad_mm: float = 8.0) -> dict:
    scene = read_scene(_need(scene_dir, "scene"))
    if dims is None:
        v = scene.all_vertices()
        dims = tuple(int(np.ceil((e + 2 * pad_mm) / spacing)) + 1 for e in v.max(axis=0) - v.min(axis=0))
    vol = synth_ct(scene, dims, spacing, noise_sigma=noise, seed=seed)
    cfg = {"scene": file_hash(Path(scene_dir) / "scene.json"), "spacing": spacing, "dims": list(dims), "noise": noise}
    write_raw(out, vol.values, np.float32, dict(vol.sidecar(), config_hash=config_hash(cfg), seed=seed, units="HU"))
    return {"config_hash": config_hash(cfg), "seed": seed, "dims": list(vol.dims)}


def run_segment(volume, out, n_tumors: int = 2, kinds=(), min_triangles: int = 100) -> dict:
    vol = load_volume(_need(volume, "volume"), CtVolume)
    scene = segment_scene(vol, n_tumors, min_triangles)
    if kinds:
        scene = Scene(scene.kidney, scene.tumors, tuple(kinds))
    cfg = {"volume": file_hash(volume), "n_tumors": n_tumors, "min_triangles": min_triangles}
    meta = {"config_hash": config_hash(cfg), "seed": None, "source": str(volume)}
    write_scene(out, scene, meta)
    return meta


def run_pipeline(workdir, seed: int = 0, pairs: int = 48, steps: int = 400) -> dict:
    """Smoke run of every stage on a small network; returns the paths written."""
    from .occnet import NetworkConfig, TrainConfig

    w = Path(workdir)
    run_gen_scene(w / "scene", seed=seed)
    run_gen_data(w / "scene", w / "data", pairs, seed)
    run_gen_data(w / "scene", w / "val", 4, seed, start=10**6)
    nc = NetworkConfig(latent_dim=128, hidden_layers=4, hidden_width=128, skip_layer=3,
                       encoder_widths=(64, 128, 128))
    tc = TrainConfig(epochs=10**6, max_steps=steps, batch_scenes=8, seed=seed, validate_every=10**6)
    run_train(w / "data", w / "model.ckpt", w / "val", nc, tc)
    inf = run_infer(w / "model.ckpt", w / "occ.ply", scene_dir=w / "scene", variant="d1", seed=seed)
    run_eval(w / "model.ckpt", w / "scene", w / "eval.json", ("d1",), seed, grid=32)
    try:
        run_plan(w / "occ.ply", w / "plan.json")
        plan = str(w / "plan.json")
    except DataError as exc:
        # an undertrained smoke model may not segment the tumor yet
        log.warning("plan skipped: %s", exc)
        plan = None
    run_bench(w / "model.ckpt", w / "scene", w / "bench.json", 40000, 3, seed)
    vol = w / "ct.raw"
    run_ct_sim(w / "scene", vol, noise=0.0)
    run_segment(vol, w / "ct_scene")
    return {"workdir": str(w), "occ_counts": inf["counts"], "plan": plan}


# --------------------------------------------------------------------------
# argument parsing


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tumorocc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("gen-scene", help="write the builtin phantom or an OBJ scene")
    s.add_argument("--out", required=True)
    s.add_argument("--kind", choices=["builtin", "obj"], default="builtin")
    s.add_argument("--kidney")
    s.add_argument("--tumor", action="append", default=[])
    s.add_argument("--kinds", default="", help="comma list, e.g. endophytic,exophytic")
    s.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("gen-data", help="generate training pairs")
    s.add_argument("--scene", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=2000)
    s.add_argument("--start", type=int, default=0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--config", default=DEFAULT_CONFIG, help='deformation tuples, e.g. "(8,11.7,1),(6,10,1)"')
    s.add_argument("--rotation", choices=["limited", "full", "none"], default="limited")
    s.add_argument("--tilt", type=float, default=15.0)
    s.add_argument("--n-dpp", type=int, default=1000)
    s.add_argument("--n-occ", type=int, default=2048)
    s.add_argument("--workers", type=int, default=1)

    s = sub.add_parser("train", help="train the occupancy network")
    s.add_argument("--data", required=True)
    s.add_argument("--val")
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int, default=30)
    s.add_argument("--max-steps", type=int)
    s.add_argument("--batch", type=int, default=8)
    s.add_argument("--queries", type=int, default=512)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--lr-schedule", choices=["constant", "cosine"], default="constant")
    s.add_argument("--validate-every", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--latent", type=int, default=1024)
    s.add_argument("--layers", type=int, default=8)
    s.add_argument("--width", type=int, default=512)
    s.add_argument("--skip", type=int, default=5)

    s = sub.add_parser("infer", help="label random queries around a DPP")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--dpp")
    s.add_argument("--scene")
    s.add_argument("--variant", default="base")
    s.add_argument("--queries", type=int, default=40000)
    s.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("eval", help="evaluate on compression/rotation variants")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--scene", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--variants", default=",".join(ALL_VARIANTS))
    s.add_argument("--grid", type=int, default=DESK_GRID[0])
    s.add_argument("--heldout")
    s.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("plan", help="resection plan from a labeled occupancy cloud")
    s.add_argument("--occ", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--margin", type=float, default=5.0)
    s.add_argument("--spacing", type=float, default=2.0)
    s.add_argument("--resolution", type=float, default=0.5)
    s.add_argument("--alpha", type=float)
    s.add_argument("--tumor-class", type=int, default=3)
    s.add_argument("--kidney-class", type=int, default=1)

    s = sub.add_parser("bench", help="query latency")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--scene", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--queries", type=int, default=40000)
    s.add_argument("--repeats", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("ct-sim", help="synthetic CT volume of a scene")
    s.add_argument("--scene", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--spacing", type=float, default=1.0)
    s.add_argument("--noise", type=float, default=20.0)
    s.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("segment", help="threshold a CT volume into kidney/tumor meshes")
    s.add_argument("--volume", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--n-tumors", type=int, default=2)
    s.add_argument("--kinds", default="")
    s.add_argument("--min-triangles", type=int, default=100)

    s = sub.add_parser("pipeline", help="end-to-end smoke run of every stage")
    s.add_argument("--workdir", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--pairs", type=int, default=48)
    s.add_argument("--steps", type=int, default=400)
    return p


def _split(text: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _dispatch(a) -> dict:
    from .occnet import NetworkConfig, TrainConfig

    if a.cmd == "gen-scene":
        return run_gen_scene(a.out, a.kind, a.kidney, a.tumor, _split(a.kinds), a.seed)
    if a.cmd == "gen-data":
        settings = PairSettings(n_dpp=a.n_dpp, n_occ=a.n_occ)
        return run_gen_data(a.scene, a.out, a.count, a.seed, a.config, a.rotation, a.tilt, a.start, settings, a.workers)
    if a.cmd == "train":
        n_classes = json.loads((_need(a.data, "dataset") / "meta.json").read_text())["n_classes"]
        enc = (64, 128, a.latent)
        nc = NetworkConfig(a.latent, a.layers, a.width, a.skip, n_classes, enc)
        tc = TrainConfig(a.lr, a.batch, a.queries, a.epochs, a.seed, max_steps=a.max_steps,
                         validate_every=a.validate_every, lr_schedule=a.lr_schedule)
        r = run_train(a.data, a.out, a.val, nc, tc)
        return {k: r[k] for k in ("config_hash", "seed", "steps", "best_epoch", "best_val_miou")}
    if a.cmd == "infer":
        return run_infer(a.checkpoint, a.out, a.dpp, a.scene, a.variant, a.queries, a.seed)
    if a.cmd == "eval":
        r = run_eval(a.checkpoint, a.scene, a.out, _split(a.variants), a.seed, a.grid, a.heldout)
        return {"config_hash": r["config_hash"], "table": r["table"], "heldout": r.get("heldout")}
    if a.cmd == "plan":
        cfg = PlanConfig(a.margin, a.spacing, a.resolution, a.alpha, a.tumor_class, a.kidney_class)
        r = run_plan(a.occ, a.out, cfg)
        return {"config_hash": r["config_hash"], "waypoints": [len(c) for c in r["cuts"]], "fallbacks": r["fallbacks"]}
    if a.cmd == "bench":
        r = run_bench(a.checkpoint, a.scene, a.out, a.queries, a.repeats, a.seed)
        r["note"] = (f"CPU median {r['ms_per_40000']:.1f} ms per 40000 queries ({r['hz_40000']:.1f} Hz); "
                     f"GPU reference {r['reference_gpu_ms_per_40000']:.0f} ms (>60 Hz)")
        return r
    if a.cmd == "ct-sim":
        return run_ct_sim(a.scene, a.out, a.spacing, None, a.noise, a.seed)
    if a.cmd == "segment":
        return run_segment(a.volume, a.out, a.n_tumors, _split(a.kinds), a.min_triangles)
    if a.cmd == "pipeline":
        return run_pipeline(a.workdir, a.seed, a.pairs, a.steps)
    raise ConfigError(f"unknown command {a.cmd}")


def main(argv=None) -> int:
    a = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        result = _dispatch(a)
    except TumorOccError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}), file=sys.stderr)
        return exc.exit_code
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": 3}), file=sys.stderr)
        return 3
    except (FloatingPointError, OverflowError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": 4}), file=sys.stderr)
        return 4
    print(json.dumps(_clean(result), indent=2, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
