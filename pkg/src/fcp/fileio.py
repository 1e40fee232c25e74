"""Mesh, point-cloud, grid, and query-batch file formats.

Meshes: OBJ (ascii) and PLY (ascii or binary little-endian). Binary PLY with
double precision is the interchange format used by the pipeline so writes are
lossless and reruns byte-identical.

Grids (.fcpg): 16-byte header (magic ``FCPG``, u32 resolution, u32 dtype tag,
u32 reserved) followed by little-endian float32 values in x-fastest order.

Query batches (.fcpb): same header style (magic ``FCPB``, u32 record count,
u32 dtype tag, u32 reserved), then per record 5 little-endian float32:
qx, qy, qz, sdf_low, sdf_full.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import InvalidInput, TruncatedFile
from .mesh import OrientedPointCloud, TriangleMesh

GRID_MAGIC = b"FCPG"
BATCH_MAGIC = b"FCPB"
DTYPE_F32 = 0

_PLY_DTYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


# ---------------------------------------------------------------------------
# OBJ


def read_obj(path) -> TriangleMesh:
    verts: list[list[float]] = []
    faces: list[list[int]] = []
    with open(path, "r", encoding="utf-8", errors="ignore") as fh:
        for line in fh:
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v" and len(parts) >= 4:
                verts.append([float(parts[1]), float(parts[2]), float(parts[3])])
            elif parts[0] == "f" and len(parts) >= 4:
                idx = [int(p.split("/")[0]) for p in parts[1:]]
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                for k in range(1, len(idx) - 1):  # fan-triangulate polygons
                    faces.append([idx[0], idx[k], idx[k + 1]])
    if not verts:
        raise InvalidInput(f"no vertices in OBJ file {path}")
    return TriangleMesh(np.asarray(verts), np.asarray(faces, dtype=np.int32)).cleaned()


def write_obj(mesh: TriangleMesh, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in mesh.vertices:
            fh.write("v %.17g %.17g %.17g\n" % (v[0], v[1], v[2]))
        for t in mesh.triangles:
            fh.write("f %d %d %d\n" % (t[0] + 1, t[1] + 1, t[2] + 1))


# ---------------------------------------------------------------------------
# PLY


def _parse_ply_header(fh):
    magic = fh.readline().strip()
    if magic != b"ply":
        raise InvalidInput("not a PLY file")
    fmt = None
    elements = []  # (name, count, [(prop_name, dtype) or ('list', counts, items, name)])
    while True:
        line = fh.readline()
        if not line:
            raise TruncatedFile("PLY header ended before end_header")
        tokens = line.decode("ascii", errors="ignore").split()
        if not tokens or tokens[0] == "comment":
            continue
        if tokens[0] == "format":
            fmt = tokens[1]
        elif tokens[0] == "element":
            elements.append((tokens[1], int(tokens[2]), []))
        elif tokens[0] == "property":
            if tokens[1] == "list":
                elements[-1][2].append(("list", _PLY_DTYPES[tokens[2]], _PLY_DTYPES[tokens[3]], tokens[4]))
            else:
                elements[-1][2].append((tokens[2], _PLY_DTYPES[tokens[1]]))
        elif tokens[0] == "end_header":
            break
    if fmt not in ("ascii", "binary_little_endian"):
        raise InvalidInput(f"unsupported PLY format {fmt!r}")
    return fmt, elements


def _read_ply_elements(path):
    """Return (fmt, {element_name: {prop_name: array}})."""
    with open(path, "rb") as fh:
        fmt, elements = _parse_ply_header(fh)
        data: dict[str, dict[str, np.ndarray]] = {}
        if fmt == "ascii":
            tokens = fh.read().split()
            pos = 0
            for name, count, props in elements:
                cols: dict[str, list] = {p[-1] if p[0] == "list" else p[0]: [] for p in props}
                list_props = {p[3] for p in props if p[0] == "list"}
                for _ in range(count):
                    for p in props:
                        if p[0] == "list":
                            if pos >= len(tokens):
                                raise TruncatedFile(f"PLY data ended inside element {name}")
                            n = int(tokens[pos]); pos += 1
                            if pos + n > len(tokens):
                                raise TruncatedFile(f"PLY data ended inside element {name}")
                            cols[p[3]].append([float(tokens[pos + k]) for k in range(n)])
                            pos += n
                        else:
                            if pos >= len(tokens):
                                raise TruncatedFile(f"PLY data ended inside element {name}")
                            cols[p[0]].append(float(tokens[pos])); pos += 1
                data[name] = {k: (v if k in list_props else np.asarray(v))
                              for k, v in cols.items()}
        else:
            for name, count, props in elements:
                has_list = any(p[0] == "list" for p in props)
                if not has_list:
                    dt = np.dtype([(p[0], "<" + p[1]) for p in props])
                    raw = fh.read(dt.itemsize * count)
                    if len(raw) != dt.itemsize * count:
                        raise TruncatedFile(f"PLY data ended inside element {name}")
                    rec = np.frombuffer(raw, dtype=dt)
                    data[name] = {p[0]: rec[p[0]].copy() for p in props}
                else:
                    cols = {p[-1] if p[0] == "list" else p[0]: [] for p in props}
                    list_props = {p[3] for p in props if p[0] == "list"}
                    for _ in range(count):
                        for p in props:
                            if p[0] == "list":
                                cdt = np.dtype("<" + p[1])
                                raw = fh.read(cdt.itemsize)
                                if len(raw) != cdt.itemsize:
                                    raise TruncatedFile(f"PLY data ended inside element {name}")
                                n = int(np.frombuffer(raw, dtype=cdt)[0])
                                idt = np.dtype("<" + p[2])
                                raw = fh.read(idt.itemsize * n)
                                if len(raw) != idt.itemsize * n:
                                    raise TruncatedFile(f"PLY data ended inside element {name}")
                                cols[p[3]].append(np.frombuffer(raw, dtype=idt))
                            else:
                                idt = np.dtype("<" + p[1])
                                raw = fh.read(idt.itemsize)
                                if len(raw) != idt.itemsize:
                                    raise TruncatedFile(f"PLY data ended inside element {name}")
                                cols[p[0]].append(np.frombuffer(raw, dtype=idt)[0])
                    data[name] = {k: (v if k in list_props else np.asarray(v))
                                  for k, v in cols.items()}
    return fmt, data


def read_ply_mesh(path) -> TriangleMesh:
    _, data = _read_ply_elements(path)
    if "vertex" not in data:
        raise InvalidInput(f"PLY file {path} has no vertex element")
    v = data["vertex"]
    verts = np.stack([v["x"], v["y"], v["z"]], axis=1).astype(np.float64)
    face = data.get("face", {})
    rows = face.get("vertex_indices", face.get("vertex_index", []))
    if len(rows) == 0:
        raise InvalidInput(f"PLY file {path} has no faces (use read_ply_points?)")
    faces = []
    for r in rows:
        r = np.asarray(r, dtype=np.int64)
        for k in range(1, len(r) - 1):
            faces.append([r[0], r[k], r[k + 1]])
    return TriangleMesh(verts, np.asarray(faces, dtype=np.int32)).cleaned()


def write_ply_mesh(mesh: TriangleMesh, path, binary: bool = True) -> None:
    nv, nf = mesh.n_vertices, mesh.n_triangles
    header = [
        "ply",
        "format binary_little_endian 1.0" if binary else "format ascii 1.0",
        f"element vertex {nv}",
        "property double x",
        "property double y",
        "property double z",
        f"element face {nf}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fh.write(np.ascontiguousarray(mesh.vertices, dtype="<f8").tobytes())
            face_dt = np.dtype([("n", "u1"), ("idx", "<i4", 3)])
            rec = np.empty(nf, dtype=face_dt)
            rec["n"] = 3
            rec["idx"] = mesh.triangles
            fh.write(rec.tobytes())
        else:
            body = []
            for v in mesh.vertices:
                body.append("%.17g %.17g %.17g" % (v[0], v[1], v[2]))
            for t in mesh.triangles:
                body.append("3 %d %d %d" % (t[0], t[1], t[2]))
            fh.write(("\n".join(body) + "\n").encode("ascii"))


def read_ply_points(path) -> OrientedPointCloud:
    _, data = _read_ply_elements(path)
    if "vertex" not in data:
        raise InvalidInput(f"PLY file {path} has no vertex element")
    v = data["vertex"]
    pts = np.stack([v["x"], v["y"], v["z"]], axis=1).astype(np.float64)
    if not all(k in v for k in ("nx", "ny", "nz")):
        raise InvalidInput(f"PLY file {path} has no nx/ny/nz normal properties")
    normals = np.stack([v["nx"], v["ny"], v["nz"]], axis=1).astype(np.float64)
    # renormalize only sloppy entries so valid files round-trip bit-exactly
    lens = np.linalg.norm(normals, axis=1)
    off = np.abs(lens - 1.0) > 1e-6
    if off.any():
        safe = np.where(lens[off] == 0.0, 1.0, lens[off])
        normals[off] /= safe[:, None]
    return OrientedPointCloud(pts, normals)


def write_ply_points(cloud: OrientedPointCloud, path, binary: bool = True) -> None:
    n = len(cloud)
    header = [
        "ply",
        "format binary_little_endian 1.0" if binary else "format ascii 1.0",
        f"element vertex {n}",
        "property double x",
        "property double y",
        "property double z",
        "property double nx",
        "property double ny",
        "property double nz",
        "end_header",
    ]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        rec = np.concatenate([cloud.points, cloud.normals], axis=1).astype("<f8")
        if binary:
            fh.write(np.ascontiguousarray(rec).tobytes())
        else:
            body = ["%.17g %.17g %.17g %.17g %.17g %.17g" % tuple(row) for row in rec]
            fh.write(("\n".join(body) + "\n").encode("ascii"))


def read_mesh(path) -> TriangleMesh:
    """Dispatch on extension: .obj or .ply."""
    suffix = Path(path).suffix.lower()
    if suffix == ".obj":
        return read_obj(path)
    if suffix == ".ply":
        return read_ply_mesh(path)
    raise InvalidInput(f"unsupported mesh format {suffix!r}")


def write_mesh(mesh: TriangleMesh, path, binary: bool = True) -> None:
    suffix = Path(path).suffix.lower()
    if suffix == ".obj":
        write_obj(mesh, path)
    elif suffix == ".ply":
        write_ply_mesh(mesh, path, binary=binary)
    else:
        raise InvalidInput(f"unsupported mesh format {suffix!r}")


# ---------------------------------------------------------------------------
# Scalar grids (.fcpg)


def write_grid(values: np.ndarray, path) -> None:
    """values: (r, r, r) array indexed [ix, iy, iz]; stored x-fastest."""
    values = np.asarray(values)
    r = values.shape[0]
    if values.shape != (r, r, r):
        raise InvalidInput("grid must be cubic")
    with open(path, "wb") as fh:
        fh.write(GRID_MAGIC)
        fh.write(struct.pack("<III", r, DTYPE_F32, 0))
        fh.write(np.asarray(values, dtype="<f4").ravel(order="F").tobytes())


def read_grid(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) < 16:
            raise TruncatedFile(f"{path}: header shorter than 16 bytes")
        if head[:4] != GRID_MAGIC:
            raise InvalidInput(f"{path}: bad magic {head[:4]!r}")
        r, dtype_tag, _ = struct.unpack("<III", head[4:16])
        if dtype_tag != DTYPE_F32:
            raise InvalidInput(f"{path}: unknown dtype tag {dtype_tag}")
        payload = fh.read()
    expected = 4 * r * r * r
    if len(payload) != expected:
        raise TruncatedFile(f"{path}: expected {expected} payload bytes, got {len(payload)}")
    flat = np.frombuffer(payload, dtype="<f4")
    return flat.reshape((r, r, r), order="F").astype(np.float64)


# ---------------------------------------------------------------------------
# Query batches (.fcpb)


def write_batch(queries: np.ndarray, sdf_low: np.ndarray, sdf_full: np.ndarray, path) -> None:
    queries = np.asarray(queries, dtype=np.float64)
    n = len(queries)
    if queries.shape != (n, 3) or len(sdf_low) != n or len(sdf_full) != n:
        raise InvalidInput("queries must be (n,3) with matching sdf arrays")
    rec = np.empty((n, 5), dtype="<f4")
    rec[:, :3] = queries
    rec[:, 3] = sdf_low
    rec[:, 4] = sdf_full
    with open(path, "wb") as fh:
        fh.write(BATCH_MAGIC)
        fh.write(struct.pack("<III", n, DTYPE_F32, 0))
        fh.write(rec.tobytes())


def read_batch(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) < 16:
            raise TruncatedFile(f"{path}: header shorter than 16 bytes")
        if head[:4] != BATCH_MAGIC:
            raise InvalidInput(f"{path}: bad magic {head[:4]!r}")
        n, dtype_tag, _ = struct.unpack("<III", head[4:16])
        if dtype_tag != DTYPE_F32:
            raise InvalidInput(f"{path}: unknown dtype tag {dtype_tag}")
        payload = fh.read()
    expected = 20 * n
    if len(payload) != expected:
        raise TruncatedFile(f"{path}: expected {expected} payload bytes, got {len(payload)}")
    rec = np.frombuffer(payload, dtype="<f4").reshape(n, 5)
    return (
        rec[:, :3].astype(np.float64),
        rec[:, 3].astype(np.float64),
        rec[:, 4].astype(np.float64),
    )
