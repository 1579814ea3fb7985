"""File formats: ASCII OBJ meshes, PLY point sets, raw blobs with JSON sidecars, 16-bit PGM."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import DataError
from .geometry import TriangleMesh

# --------------------------------------------------------------------------
# OBJ


def write_obj(path, mesh: TriangleMesh) -> None:
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path) -> TriangleMesh:
    verts, faces = [], []
    for raw in Path(path).read_text().splitlines():
        parts = raw.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(p.split("/")[0]) for p in parts[1:]]
            if len(idx) != 3:
                raise DataError(f"{path}: only triangle faces are supported")
            faces.append([i - 1 if i > 0 else len(verts) + i for i in idx])
    return TriangleMesh(np.array(verts), np.array(faces))


# --------------------------------------------------------------------------
# PLY

_PLY_TYPES = {
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
    "uchar": "u1", "uint8": "u1", "char": "i1", "int8": "i1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
}


def write_ply(path, points, labels=None, comments=()) -> None:
    """Binary little-endian PLY with float32 x,y,z and an optional uint8 label."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    if labels is not None:
        fields.append(("label", "u1"))
    rec = np.empty(len(pts), dtype=fields)
    rec["x"], rec["y"], rec["z"] = pts[:, 0], pts[:, 1], pts[:, 2]
    if labels is not None:
        rec["label"] = np.asarray(labels)
    header = ["ply", "format binary_little_endian 1.0"]
    header += [f"comment {c}" for c in comments]
    header += [f"element vertex {len(pts)}", "property float x", "property float y", "property float z"]
    if labels is not None:
        header.append("property uchar label")
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(rec.tobytes())


def read_ply(path):
    """Read the vertex element of a PLY file.

    Returns ``(points, labels)``; ``labels`` is None when the file has no label
    property. ASCII and binary little-endian encodings are supported.
    """
    data = Path(path).read_bytes()
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise DataError(f"{path}: not a PLY file")
    body_start = data.index(b"\n", end) + 1
    header = data[:end].decode("ascii").splitlines()
    fmt, count, props, in_vertex = None, 0, [], False
    for line in header:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                count = int(parts[2])
        elif parts[0] == "property" and in_vertex:
            if parts[1] == "list":
                raise DataError(f"{path}: list properties in vertex element are unsupported")
            props.append((parts[2], _PLY_TYPES[parts[1]]))
    names = [p[0] for p in props]
    if fmt == "ascii":
        rows = data[body_start:].decode("ascii").split("\n")[:count]
        table = np.array([[float(x) for x in r.split()[: len(props)]] for r in rows]).reshape(count, len(props))
        cols = {n: table[:, i] for i, n in enumerate(names)}
    elif fmt == "binary_little_endian":
        dtype = np.dtype([(n, "<" + t) for n, t in props])
        rec = np.frombuffer(data, dtype=dtype, count=count, offset=body_start)
        cols = {n: rec[n] for n in names}
    else:
        raise DataError(f"{path}: unsupported PLY format {fmt}")
    pts = np.stack([cols["x"], cols["y"], cols["z"]], axis=1).astype(np.float64)
    labels = cols["label"].astype(np.int64) if "label" in cols else None
    return pts, labels


# --------------------------------------------------------------------------
# raw volumes


def write_raw(path, array: np.ndarray, dtype, sidecar: dict) -> None:
    """Write ``array`` as a raw little-endian blob plus ``<path>.json``."""
    path = Path(path)
    arr = np.ascontiguousarray(array, dtype=np.dtype(dtype).newbyteorder("<"))
    path.write_bytes(arr.tobytes())
    meta = dict(sidecar, dtype=np.dtype(dtype).name, shape=list(array.shape))
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=2))


def read_raw(path):
    path = Path(path)
    meta = json.loads(Path(str(path) + ".json").read_text())
    arr = np.frombuffer(path.read_bytes(), dtype=np.dtype(meta["dtype"]).newbyteorder("<"))
    return arr.reshape(meta["shape"]).copy(), meta


# --------------------------------------------------------------------------
# depth images


def write_pgm16(path, depth: np.ndarray, scale_mm: float = 0.01) -> None:
    """16-bit binary PGM; stored value = round(depth / scale_mm), 0 marks invalid pixels."""
    d = np.asarray(depth, dtype=np.float64)
    valid = np.isfinite(d)
    q = np.zeros(d.shape, dtype=np.int64)
    q[valid] = np.clip(np.round(d[valid] / scale_mm), 1, 65535)
    h, w = d.shape
    header = f"P5\n# scale_mm {scale_mm!r}\n{w} {h}\n65535\n".encode("ascii")
    Path(path).write_bytes(header + q.astype(">u2").tobytes())


def read_pgm16(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, pos, scale = [], 0, 1.0
    while len(tokens) < 4:
        nl = data.index(b"\n", pos)
        line = data[pos:nl].decode("ascii")
        pos = nl + 1
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 2 and parts[0] == "scale_mm":
                scale = float(parts[1])
            continue
        tokens += line.split()
    if tokens[0] != "P5":
        raise DataError(f"{path}: not a binary PGM")
    w, h = int(tokens[1]), int(tokens[2])
    q = np.frombuffer(data, dtype=">u2", count=w * h, offset=pos).reshape(h, w).astype(np.float64)
    out = q * scale
    out[q == 0] = np.nan
    return out
