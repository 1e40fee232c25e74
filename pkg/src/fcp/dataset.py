"""Turns a mesh corpus into supervision pairs for the consolidation prior.

Per shape: normalize, sample a dense oriented cloud, reconstruct the full
frequency coverage, derive one low-frequency observation per subband plus
extra heavily-corrupted ones from the [3, 30] band, and persist query batches
carrying ground-truth signed distances to both the observation and the full
coverage.

Directory layout: <out>/<shape_id>/full.ply, obs_<cutoff>.ply,
batch_<cutoff>.fcpb, and a single <out>/manifest.json.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from . import fileio, spectral
from .distance import MeshDistanceField
from .errors import EmptySurface, InvalidInput, ShapeRejected
from .mesh import TriangleMesh, normalize_mesh, sample_surface
from .metrics import chamfer
from .sampling import QueryBatch, _gaussian_wave, QUERY_BOUND
from .spectral import FrequencyCutoff

EXTRA_BAND = (3, 30)


@dataclass
class GenerationConfig:
    resolution: int = 128
    cloud_points: int = 100_000
    extra_observations: int = 3
    queries_per_obs: int = 16_384
    sigma_broad: float = 8.0
    sigma_near: float = 0.2
    # near-surface queries seeded around both the observation and the full
    # coverage ("both"), or around the full coverage only ("full")
    query_source: str = "both"
    reject_cd: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.query_source not in ("both", "full"):
            raise InvalidInput("query_source must be 'both' or 'full'")
        if self.queries_per_obs % 2:
            raise InvalidInput("queries_per_obs must be even")
        if self.resolution < 128:
            # the observation band reaches wavenumber 64, which only exists
            # on grids of at least 128 cells per axis
            raise InvalidInput("generation resolution must be >= 128")


@dataclass
class TrainingShape:
    shape_id: str
    full_mesh: TriangleMesh
    observations: list[tuple[FrequencyCutoff, TriangleMesh]]
    source_path: str = ""
    seed: int = 0

    def observation_ids(self) -> list[str]:
        return [str(int(cut.f)) for cut, _ in self.observations]

    def get_observation(self, observation_id: str) -> tuple[FrequencyCutoff, TriangleMesh]:
        for cut, mesh in self.observations:
            if str(int(cut.f)) == observation_id:
                return cut, mesh
        raise InvalidInput(f"shape {self.shape_id} has no observation {observation_id}")


@dataclass
class DatasetManifest:
    config: dict
    shapes: list[dict] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({"config": self.config, "shapes": self.shapes},
                          indent=2, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "DatasetManifest":
        data = json.loads(text)
        return DatasetManifest(config=data["config"], shapes=data["shapes"])


def _draw_cutoffs(seed: int, extra_observations: int) -> list[FrequencyCutoff]:
    """One draw per subband plus extras from the [3,30] band, all distinct.

    Distinct integer cutoffs keep observation ids and file names unique;
    colliding draws are re-drawn deterministically. Draws of the Nyquist
    frequency itself are clamped one step down so every observation stays
    strictly below the full band.
    """
    rng = np.random.default_rng(seed)
    used: set[int] = set()
    cutoffs: list[FrequencyCutoff] = []
    for band in range(len(spectral.SUBBANDS)):
        lo, hi = spectral.SUBBANDS[band]
        for _ in range(64):
            f = int(rng.integers(lo, hi + 1))
            f = min(f, 63)
            if f not in used:
                break
        else:
            raise ShapeRejected(f"could not draw a distinct cutoff in subband {band}")
        used.add(f)
        cutoffs.append(FrequencyCutoff(float(f), subband_index=band))
    for _ in range(extra_observations):
        for _ in range(256):
            f = int(rng.integers(EXTRA_BAND[0], EXTRA_BAND[1] + 1))
            if f not in used:
                break
        else:
            raise ShapeRejected("could not draw a distinct extra cutoff in [3,30]")
        used.add(f)
        cutoffs.append(FrequencyCutoff(float(f)))
    return cutoffs


def build_training_shape(mesh: TriangleMesh | str | Path, config: GenerationConfig,
                         shape_id: str, shape_seed: Optional[int] = None) -> TrainingShape:
    """Normalize, reconstruct the full coverage, and derive all observations.

    The full coverage comes from the same spectral pipeline (not the source
    mesh), so supervision is watertight by construction. Shapes whose
    full-band reconstruction strays from the source by more than reject_cd
    are rejected.
    """
    source_path = ""
    if isinstance(mesh, (str, Path)):
        source_path = str(mesh)
        mesh = fileio.read_mesh(mesh)
    seed = config.seed if shape_seed is None else shape_seed
    normalized, _ = normalize_mesh(mesh.cleaned())
    cloud = sample_surface(normalized, config.cloud_points, seed=seed)

    sigma = spectral.default_smoothing_sigma(config.resolution)
    v = spectral.splat_normals(cloud, config.resolution)
    spectrum = spectral.poisson_spectrum(v, sigma)
    try:
        full_field = spectral.spectrum_to_field(spectrum, cloud.points)
        full_mesh = spectral.extract_isosurface(full_field, 0.0)
    except EmptySurface as exc:
        raise ShapeRejected(f"{shape_id}: full-band reconstruction failed ({exc})") from exc
    if not full_mesh.watertight:
        raise ShapeRejected(
            f"{shape_id}: full-band level set touches the domain boundary "
            "(open or sheet-like input)")

    gate = chamfer(full_mesh, normalized, n=10_000, order="L1", seed=seed)
    if gate > config.reject_cd:
        raise ShapeRejected(
            f"{shape_id}: full-band reconstruction deviates from source "
            f"(CD_L1 {gate:.4f} > {config.reject_cd})")

    observations = []
    for cutoff in _draw_cutoffs(seed + 1, config.extra_observations):
        limited = spectral.band_limit(spectrum, cutoff)
        try:
            obs_field = spectral.spectrum_to_field(limited, cloud.points)
            obs_mesh = spectral.extract_isosurface(obs_field, 0.0)
        except EmptySurface as exc:
            raise ShapeRejected(
                f"{shape_id}: observation at cutoff {int(cutoff.f)} is empty") from exc
        observations.append((cutoff, obs_mesh))
    return TrainingShape(shape_id=shape_id, full_mesh=full_mesh,
                         observations=observations, source_path=source_path, seed=seed)


def build_query_batches(shape: TrainingShape, queries_per_obs: int, seed: int,
                        sigma_broad: float = 8.0, sigma_near: float = 0.2,
                        query_source: str = "both") -> list[QueryBatch]:
    """Per observation: sample queries, record signed distances to both meshes.

    Layout per batch: the first half is broad (sigma_broad), the second half
    near-surface (sigma_near). The near half is seeded on the full coverage,
    or split between the observation and the full coverage when
    query_source='both'.
    """
    if queries_per_obs % 2:
        raise InvalidInput("queries_per_obs must be even")
    n_seeds = max(queries_per_obs, 20_000)
    full_pts = sample_surface(shape.full_mesh, n_seeds, seed=seed).points
    full_field = MeshDistanceField(shape.full_mesh)
    batches = []
    half = queries_per_obs // 2
    for k, (cutoff, obs_mesh) in enumerate(shape.observations):
        rng = np.random.default_rng((seed, k))
        broad = _gaussian_wave(full_pts, half, sigma_broad, rng, QUERY_BOUND)
        if query_source == "both":
            obs_pts = sample_surface(obs_mesh, n_seeds, seed=seed + 7 * k + 1).points
            near = np.concatenate([
                _gaussian_wave(full_pts, half - half // 2, sigma_near, rng, QUERY_BOUND),
                _gaussian_wave(obs_pts, half // 2, sigma_near, rng, QUERY_BOUND),
            ])
        else:
            near = _gaussian_wave(full_pts, half, sigma_near, rng, QUERY_BOUND)
        queries = np.concatenate([broad, near])
        obs_field = MeshDistanceField(obs_mesh)
        batches.append(QueryBatch(
            queries=queries,
            sdf_low=obs_field.signed(queries),
            sdf_full=full_field.signed(queries),
            shape_id=shape.shape_id,
            observation_id=str(int(cutoff.f)),
        ))
    return batches


def write_dataset(entries: list[tuple[TrainingShape, list[QueryBatch]]],
                  out_dir, config: GenerationConfig) -> DatasetManifest:
    """Persist shapes and batches; returns the manifest (also written to disk)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = DatasetManifest(config=asdict(config))
    for shape, batches in entries:
        shape_dir = out_dir / shape.shape_id
        shape_dir.mkdir(parents=True, exist_ok=True)
        fileio.write_ply_mesh(shape.full_mesh, shape_dir / "full.ply")
        cut_meta = []
        for cutoff, mesh in shape.observations:
            fileio.write_ply_mesh(mesh, shape_dir / f"obs_{int(cutoff.f)}.ply")
            cut_meta.append({"cutoff": int(cutoff.f), "subband": cutoff.subband_index})
        for batch in batches:
            fileio.write_batch(batch.queries, batch.sdf_low, batch.sdf_full,
                               shape_dir / f"batch_{batch.observation_id}.fcpb")
        manifest.shapes.append({
            "id": shape.shape_id,
            "source": shape.source_path,
            "seed": shape.seed,
            "observations": cut_meta,
            "observation_count": len(shape.observations),
        })
    (out_dir / "manifest.json").write_text(manifest.to_json())
    return manifest


def read_dataset(directory) -> Iterator[tuple[TrainingShape, list[QueryBatch]]]:
    """Stream back shapes and their persisted batches."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise InvalidInput(f"{directory} has no manifest.json")
    manifest = DatasetManifest.from_json(manifest_path.read_text())
    for entry in manifest.shapes:
        shape_dir = directory / entry["id"]
        full_mesh = fileio.read_ply_mesh(shape_dir / "full.ply")
        full_mesh.watertight = True
        observations = []
        batches = []
        for obs in entry["observations"]:
            cutoff = FrequencyCutoff(float(obs["cutoff"]), subband_index=obs["subband"])
            mesh = fileio.read_ply_mesh(shape_dir / f"obs_{obs['cutoff']}.ply")
            mesh.watertight = True
            observations.append((cutoff, mesh))
            batch_path = shape_dir / f"batch_{obs['cutoff']}.fcpb"
            if batch_path.exists():
                q, s_low, s_full = fileio.read_batch(batch_path)
                batches.append(QueryBatch(q, s_low, s_full,
                                          shape_id=entry["id"],
                                          observation_id=str(obs["cutoff"])))
        yield TrainingShape(shape_id=entry["id"], full_mesh=full_mesh,
                            observations=observations, source_path=entry["source"],
                            seed=entry["seed"]), batches


def shape_seed_for(master_seed: int, index: int) -> int:
    """Per-shape seed derivation; recorded in the manifest for regeneration."""
    return (master_seed * 1_000_003 + index * 7919) % (2 ** 63)


def build_dataset(meshes: list, out_dir, config: GenerationConfig,
                  shape_ids: Optional[list[str]] = None) -> DatasetManifest:
    """Build and persist a dataset from meshes or mesh paths.

    Rejected shapes are skipped with a warning entry in the manifest config
    snapshot rather than aborting the whole build.
    """
    entries = []
    rejected = []
    for i, mesh in enumerate(meshes):
        if shape_ids is not None:
            sid = shape_ids[i]
        elif isinstance(mesh, (str, Path)):
            sid = Path(mesh).stem
        else:
            sid = f"shape{i:03d}"
        seed_i = shape_seed_for(config.seed, i)
        try:
            shape = build_training_shape(mesh, config, sid, shape_seed=seed_i)
        except ShapeRejected as exc:
            rejected.append(f"{sid}: {exc}")
            continue
        batches = build_query_batches(shape, config.queries_per_obs, seed=seed_i + 1,
                                      sigma_broad=config.sigma_broad,
                                      sigma_near=config.sigma_near,
                                      query_source=config.query_source)
        entries.append((shape, batches))
    manifest = write_dataset(entries, out_dir, config)
    if rejected:
        manifest.config["rejected"] = rejected
        (Path(out_dir) / "manifest.json").write_text(manifest.to_json())
    return manifest
