"""Triangle meshes, oriented point clouds, and surface sampling.

All geometry lives in the normalized domain [-1, 1]^3. Meshes are cleaned on
construction: zero-area triangles and unreferenced vertices are dropped.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput

# Normalized modeling domain is [-1,1]^3; shapes are scaled so their longest
# bounding-box side covers this fraction of the domain side (2.0).
DOMAIN_HALF = 1.0
NORMALIZE_EXTENT = 0.9 * 2.0 * DOMAIN_HALF


@dataclass
class TriangleMesh:
    """Indexed triangle surface.

    vertices: (n, 3) float64, triangles: (m, 3) int32. `watertight` is a
    tracked flag, not a guarantee; it is set by producers that know better
    (e.g. marching cubes on an interior level set).
    """

    vertices: np.ndarray
    triangles: np.ndarray
    watertight: bool = False

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int32)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise InvalidInput("vertices must be (n, 3)")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise InvalidInput("triangles must be (m, 3)")
        if self.triangles.size and self.triangles.max() >= len(self.vertices):
            raise InvalidInput("triangle index out of range")
        if self.triangles.size and self.triangles.min() < 0:
            raise InvalidInput("negative triangle index")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def corners(self) -> np.ndarray:
        """(m, 3, 3) triangle corner positions."""
        return self.vertices[self.triangles]

    def face_normals(self, normalized: bool = True) -> np.ndarray:
        """Per-face normals from the winding order (CCW seen from outside)."""
        c = self.corners()
        n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        if normalized:
            lens = np.linalg.norm(n, axis=1, keepdims=True)
            lens[lens == 0.0] = 1.0
            n = n / lens
        return n

    def face_areas(self) -> np.ndarray:
        c = self.corners()
        return 0.5 * np.linalg.norm(
            np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1
        )

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if self.n_vertices == 0:
            raise InvalidInput("empty mesh has no bounds")
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def cleaned(self) -> "TriangleMesh":
        """Drop zero-area triangles and unreferenced vertices."""
        if self.n_triangles == 0:
            return TriangleMesh(self.vertices[:0], self.triangles[:0], self.watertight)
        keep = self.face_areas() > 0.0
        tris = self.triangles[keep]
        used = np.unique(tris)
        remap = np.full(self.n_vertices, -1, dtype=np.int32)
        remap[used] = np.arange(len(used), dtype=np.int32)
        return TriangleMesh(self.vertices[used], remap[tris], self.watertight)

    def transformed(self, tf: "NormalizationTransform") -> "TriangleMesh":
        return TriangleMesh(tf.apply(self.vertices), self.triangles.copy(), self.watertight)


@dataclass
class OrientedPointCloud:
    """Surface samples with unit normals."""

    points: np.ndarray
    normals: np.ndarray

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float64)
        self.normals = np.ascontiguousarray(self.normals, dtype=np.float64)
        if self.points.shape != self.normals.shape or self.points.ndim != 2 or self.points.shape[1] != 3:
            raise InvalidInput("points and normals must both be (n, 3)")
        if len(self.points):
            lens = np.linalg.norm(self.normals, axis=1)
            if not np.allclose(lens, 1.0, atol=1e-6):
                raise InvalidInput("normals must be unit length (|n| = 1 +- 1e-6)")

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class NormalizationTransform:
    """Map original coordinates into the normalized domain: x' = (x - center) * scale."""

    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.scale = float(self.scale)
        if self.scale <= 0.0:
            raise InvalidInput("scale must be positive")

    def apply(self, pts: np.ndarray) -> np.ndarray:
        return (np.asarray(pts, dtype=np.float64) - self.center) * self.scale

    def invert(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(pts, dtype=np.float64) / self.scale + self.center

    @property
    def is_identity(self) -> bool:
        return self.scale == 1.0 and not self.center.any()


def normalize_mesh(mesh: TriangleMesh) -> tuple[TriangleMesh, NormalizationTransform]:
    """Center the mesh at the origin and scale its longest bbox side to 0.9 * 2.

    Leaves margin inside [-1,1]^3 so near-surface query sampling and the
    periodic spectral solve do not wrap geometry across the domain boundary.
    """
    if mesh.n_triangles == 0:
        raise InvalidInput("cannot normalize an empty mesh")
    lo, hi = mesh.bounds()
    center = 0.5 * (lo + hi)
    extent = float((hi - lo).max())
    if extent == 0.0:
        raise InvalidInput("mesh has zero extent")
    scale = NORMALIZE_EXTENT / extent
    tf = NormalizationTransform(center=center, scale=scale)
    return mesh.transformed(tf), tf


def sample_surface(mesh: TriangleMesh, n: int, seed: int) -> OrientedPointCloud:
    """Draw n points area-uniformly on the mesh; normals copied from host faces.

    Deterministic for a given seed.
    """
    if n < 1:
        raise InvalidInput("n must be >= 1")
    areas = mesh.face_areas()
    total = areas.sum()
    if mesh.n_triangles == 0 or total <= 0.0:
        raise InvalidInput("mesh has zero total area")
    rng = np.random.default_rng(seed)
    probs = areas / total
    face_idx = rng.choice(mesh.n_triangles, size=n, p=probs)
    # uniform barycentric sampling via the square-root trick
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    c = mesh.corners()[face_idx]
    pts = (1.0 - r1)[:, None] * c[:, 0] + (r1 * (1.0 - r2))[:, None] * c[:, 1] + (r1 * r2)[:, None] * c[:, 2]
    normals = mesh.face_normals()[face_idx]
    return OrientedPointCloud(pts, normals)
