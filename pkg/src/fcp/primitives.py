"""Procedural watertight test shapes: boxes, cylinders, spheres, fused spheres.

Used by the test suite and the demo scripts as a stand-in corpus; real runs
ingest OBJ/PLY files instead.
"""
from __future__ import annotations

import numpy as np

from .mesh import TriangleMesh


def make_box(size=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Axis-aligned box with outward-facing triangles."""
    sx, sy, sz = [0.5 * float(s) for s in size]
    cx, cy, cz = [float(c) for c in center]
    v = np.array(
        [
            [-sx, -sy, -sz], [+sx, -sy, -sz], [+sx, +sy, -sz], [-sx, +sy, -sz],
            [-sx, -sy, +sz], [+sx, -sy, +sz], [+sx, +sy, +sz], [-sx, +sy, +sz],
        ]
    ) + np.array([cx, cy, cz])
    f = np.array(
        [
            [0, 2, 1], [0, 3, 2],  # -z
            [4, 5, 6], [4, 6, 7],  # +z
            [0, 1, 5], [0, 5, 4],  # -y
            [2, 3, 7], [2, 7, 6],  # +y
            [1, 2, 6], [1, 6, 5],  # +x
            [0, 4, 7], [0, 7, 3],  # -x
        ],
        dtype=np.int32,
    )
    return TriangleMesh(v, f, watertight=True)


def make_cylinder(radius=0.5, height=1.0, segments=48, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Closed cylinder along z with triangle-fan caps."""
    ang = 2.0 * np.pi * np.arange(segments) / segments
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    h = 0.5 * height
    bot = np.concatenate([ring, np.full((segments, 1), -h)], axis=1)
    top = np.concatenate([ring, np.full((segments, 1), +h)], axis=1)
    verts = np.concatenate([bot, top, [[0.0, 0.0, -h]], [[0.0, 0.0, +h]]], axis=0)
    verts = verts + np.asarray(center, dtype=np.float64)
    cb, ct = 2 * segments, 2 * segments + 1
    faces = []
    for i in range(segments):
        j = (i + 1) % segments
        # side quad, outward winding
        faces.append([i, j, segments + j])
        faces.append([i, segments + j, segments + i])
        faces.append([cb, j, i])            # bottom cap faces -z
        faces.append([ct, segments + i, segments + j])  # top cap faces +z
    return TriangleMesh(verts, np.asarray(faces, dtype=np.int32), watertight=True)


def make_icosphere(radius=0.5, subdivisions=3, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Subdivided icosahedron; vertices exactly on the sphere."""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    for _ in range(subdivisions):
        edge_mid: dict[tuple[int, int], int] = {}
        verts_list = list(verts)

        def midpoint(a: int, b: int) -> int:
            key = (a, b) if a < b else (b, a)
            if key not in edge_mid:
                m = verts_list[a] + verts_list[b]
                m = m / np.linalg.norm(m)
                edge_mid[key] = len(verts_list)
                verts_list.append(m)
            return edge_mid[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        verts = np.asarray(verts_list)
        faces = np.asarray(new_faces, dtype=np.int64)
    verts = verts * radius + np.asarray(center, dtype=np.float64)
    return TriangleMesh(verts, faces.astype(np.int32), watertight=True)


def make_fused_spheres(radius=0.4, offset=0.3, resolution=96) -> TriangleMesh:
    """Two overlapping spheres merged into one closed surface.

    Triangulated from the analytic union distance field on a grid, so the
    seam circle is handled exactly and the result is watertight.
    """
    from skimage import measure

    half = radius + offset + 4.0 / resolution
    xs = np.linspace(-half, half, resolution)
    step = xs[1] - xs[0]
    gx, gy, gz = np.meshgrid(xs, xs, xs, indexing="ij")
    pts = np.stack([gx, gy, gz], axis=-1)
    d1 = np.linalg.norm(pts - np.array([-offset, 0.0, 0.0]), axis=-1) - radius
    d2 = np.linalg.norm(pts - np.array([+offset, 0.0, 0.0]), axis=-1) - radius
    field = np.minimum(d1, d2)
    verts, faces, _, _ = measure.marching_cubes(field, level=0.0, spacing=(step, step, step))
    verts = verts + np.array([-half, -half, -half])
    mesh = TriangleMesh(verts, faces.astype(np.int32), watertight=True).cleaned()
    # skimage winds faces for a "descending" field (positive outside): ensure
    # outward normals by checking against the analytic outward direction.
    sample = mesh.corners().mean(axis=1)
    outward = np.where(
        (np.linalg.norm(sample - [-offset, 0, 0], axis=1)
         < np.linalg.norm(sample - [offset, 0, 0], axis=1))[:, None],
        sample - [-offset, 0, 0],
        sample - [offset, 0, 0],
    )
    agree = (mesh.face_normals() * outward).sum(axis=1) > 0
    if agree.mean() < 0.5:
        mesh = TriangleMesh(mesh.vertices, mesh.triangles[:, ::-1], watertight=True)
    return mesh
