"""Frequency consolidation priors for signed distance fields.

Builds low/full-frequency SDF training pairs with an FFT Poisson solver,
learns a two-branch conditional neural SDF over disentangled embeddings, and
sharpens unseen low-frequency observations by test-time embedding recovery.
"""

from .mesh import (
    NormalizationTransform,
    OrientedPointCloud,
    TriangleMesh,
    normalize_mesh,
    sample_surface,
)
from .distance import MeshDistanceField, signed_distance
from .sampling import QueryBatch, sample_queries

__all__ = [
    "TriangleMesh",
    "OrientedPointCloud",
    "NormalizationTransform",
    "normalize_mesh",
    "sample_surface",
    "MeshDistanceField",
    "signed_distance",
    "QueryBatch",
    "sample_queries",
]

__version__ = "0.1.0"
