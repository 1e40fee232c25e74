"""FFT Poisson surface reconstruction with radial band-limit filtering.

Pipeline: splat oriented point normals onto a grid, solve the Poisson
equation for a smoothed occupancy field in the frequency domain, optionally
zero all coefficients above a radial wavenumber cutoff, invert, shift so the
surface sits at level zero, and extract the isosurface with marching cubes.

The occupancy convention matches signed distances: negative inside, positive
outside. Wavenumbers are the integer DFT indices, so on the 128^3 generation
grid the radial band runs over [0, 64].
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DegenerateField, EmptySurface, InvalidInput
from .mesh import OrientedPointCloud, TriangleMesh

# Closed integer subbands tiling the generation band [0, 64]; the first two
# are fixed, the rest tile (10, 64] roughly geometrically.
SUBBANDS = ((3, 5), (5, 10), (10, 20), (20, 30), (30, 45), (45, 64))

# Default Gaussian smoothing of the occupancy spectrum, in grid cells.
SMOOTHING_CELLS = 2.0


def _check_resolution(resolution: int) -> int:
    resolution = int(resolution)
    if resolution < 16 or resolution & (resolution - 1):
        raise InvalidInput(f"resolution must be a power of two >= 16, got {resolution}")
    return resolution


@dataclass
class ScalarGrid3:
    """Real field on a cubic cell-centered lattice over [-1,1]^3; [ix,iy,iz]."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        r = _check_resolution(self.values.shape[0])
        if self.values.shape != (r, r, r):
            raise InvalidInput("scalar grid must be cubic")
        if not np.isfinite(self.values).all():
            raise InvalidInput("scalar grid contains non-finite values")

    @property
    def resolution(self) -> int:
        return self.values.shape[0]

    @property
    def cell_size(self) -> float:
        return 2.0 / self.resolution

    def interpolate(self, points: np.ndarray) -> np.ndarray:
        """Trilinear interpolation with periodic wrap (the FFT domain is periodic)."""
        return _trilinear(self.values, np.atleast_2d(points))


@dataclass
class VectorGrid3:
    """Three-channel field (splatted normals); values[ix,iy,iz,3]."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        r = _check_resolution(self.values.shape[0])
        if self.values.shape != (r, r, r, 3):
            raise InvalidInput("vector grid must be cubic with 3 channels")
        if not np.isfinite(self.values).all():
            raise InvalidInput("vector grid contains non-finite values")

    @property
    def resolution(self) -> int:
        return self.values.shape[0]


@dataclass
class SpectrumGrid3:
    """Complex DFT coefficients in standard numpy fftn layout."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        r = _check_resolution(self.values.shape[0])
        if self.values.shape != (r, r, r):
            raise InvalidInput("spectrum must be cubic")

    @property
    def resolution(self) -> int:
        return self.values.shape[0]

    def wavenumber_radii(self) -> np.ndarray:
        """Euclidean norm of the integer wavenumber at every coefficient."""
        return _wavenumber_radii(self.resolution)

    def conjugate_symmetry_error(self) -> float:
        """Max relative deviation from chi_hat(-k) == conj(chi_hat(k))."""
        v = self.values
        flipped = v[_negated_index(self.resolution)]
        scale = max(np.abs(v).max(), 1e-300)
        return float(np.abs(flipped - np.conj(v)).max() / scale)

    def energy(self) -> float:
        return float((np.abs(self.values) ** 2).sum())


@dataclass
class FrequencyCutoff:
    """Radial wavenumber cutoff; coefficients with ||k|| > f are removed."""

    f: float
    subband_index: Optional[int] = None

    def __post_init__(self):
        self.f = float(self.f)
        if self.f < 0.0:
            raise InvalidInput("cutoff must be non-negative")

    @staticmethod
    def full(resolution: int) -> "FrequencyCutoff":
        """A cutoff at the grid's maximum radial wavenumber (identity filter)."""
        r = _check_resolution(resolution)
        return FrequencyCutoff(f=(r / 2) * math.sqrt(3.0))


def _wavenumbers(resolution: int) -> np.ndarray:
    return (np.fft.fftfreq(resolution) * resolution).astype(np.float64)


def _wavenumber_radii(resolution: int) -> np.ndarray:
    k = _wavenumbers(resolution)
    kx, ky, kz = np.meshgrid(k, k, k, indexing="ij")
    return np.sqrt(kx * kx + ky * ky + kz * kz)


def _negated_index(resolution: int):
    idx = (-np.arange(resolution)) % resolution
    return np.ix_(idx, idx, idx)


def _trilinear(values: np.ndarray, points: np.ndarray) -> np.ndarray:
    r = values.shape[0]
    h = 2.0 / r
    u = (np.asarray(points, dtype=np.float64) + 1.0) / h - 0.5
    i0 = np.floor(u).astype(np.int64)
    frac = u - i0
    out = np.zeros(len(points))
    for dx in (0, 1):
        wx = frac[:, 0] if dx else 1.0 - frac[:, 0]
        ix = (i0[:, 0] + dx) % r
        for dy in (0, 1):
            wy = frac[:, 1] if dy else 1.0 - frac[:, 1]
            iy = (i0[:, 1] + dy) % r
            for dz in (0, 1):
                wz = frac[:, 2] if dz else 1.0 - frac[:, 2]
                iz = (i0[:, 2] + dz) % r
                out += wx * wy * wz * values[ix, iy, iz]
    return out


def splat_normals(cloud: OrientedPointCloud, resolution: int) -> VectorGrid3:
    """Distribute each normal to the 8 surrounding cell centers (trilinear).

    The grid is scaled by 1 / point count so the splat is an average, not a
    sum. Points must lie inside [-1,1]^3.
    """
    resolution = _check_resolution(resolution)
    if len(cloud) == 0:
        raise InvalidInput("cannot splat an empty cloud")
    pts = cloud.points
    outside = np.abs(pts).max(axis=1) > 1.0
    if outside.any():
        raise InvalidInput(f"point {int(np.argmax(outside))} lies outside [-1,1]^3")
    h = 2.0 / resolution
    u = (pts + 1.0) / h - 0.5
    i0 = np.floor(u).astype(np.int64)
    frac = u - i0
    grid = np.zeros((resolution, resolution, resolution, 3))
    for dx in (0, 1):
        wx = frac[:, 0] if dx else 1.0 - frac[:, 0]
        ix = (i0[:, 0] + dx) % resolution
        for dy in (0, 1):
            wy = frac[:, 1] if dy else 1.0 - frac[:, 1]
            iy = (i0[:, 1] + dy) % resolution
            for dz in (0, 1):
                wz = frac[:, 2] if dz else 1.0 - frac[:, 2]
                iz = (i0[:, 2] + dz) % resolution
                w = (wx * wy * wz)[:, None] * cloud.normals
                np.add.at(grid, (ix, iy, iz), w)
    grid /= len(cloud)
    return VectorGrid3(grid)


def default_smoothing_sigma(resolution: int) -> float:
    """Spectrum smoothing sigma in domain units (SMOOTHING_CELLS grid cells)."""
    return SMOOTHING_CELLS * 2.0 / resolution


def poisson_spectrum(v: VectorGrid3, smoothing_sigma: float) -> SpectrumGrid3:
    """Occupancy spectrum: chi_hat = g(k) * i 2pi (k . v_hat) / -(2pi ||k||)^2.

    g(k) = exp(-sigma^2 ||k||^2 / 2) is a Gaussian low-pass with sigma in
    domain units. chi_hat(0) = 0.
    """
    if smoothing_sigma < 0.0:
        raise InvalidInput("smoothing_sigma must be >= 0")
    if not v.values.any():
        raise DegenerateField("splatted normal field is identically zero")
    r = v.resolution
    k = _wavenumbers(r)
    # the unmatched Nyquist mode of an even-sized DFT must not feed the odd
    # (i k) multiplier, or the inverse transform stops being real
    kd = k.copy()
    kd[r // 2] = 0.0
    kx, ky, kz = np.meshgrid(k, k, k, indexing="ij")
    dx, dy, dz = np.meshgrid(kd, kd, kd, indexing="ij")
    k2 = kx * kx + ky * ky + kz * kz
    vx = np.fft.fftn(v.values[..., 0])
    vy = np.fft.fftn(v.values[..., 1])
    vz = np.fft.fftn(v.values[..., 2])
    div = 2.0j * np.pi * (dx * vx + dy * vy + dz * vz)
    with np.errstate(divide="ignore", invalid="ignore"):
        chi = div / (-(4.0 * np.pi ** 2) * k2)
    chi[0, 0, 0] = 0.0
    chi *= np.exp(-0.5 * smoothing_sigma ** 2 * k2)
    return SpectrumGrid3(chi)


def spectrum_to_field(spectrum: SpectrumGrid3, points: Optional[np.ndarray] = None) -> ScalarGrid3:
    """Inverse transform; if points are given, shift so their mean value is 0."""
    field = np.fft.ifftn(spectrum.values)
    imag = np.abs(field.imag).max()
    scale = max(np.abs(field.real).max(), 1e-300)
    if imag > max(1e-9, 1e-9 * scale):
        raise InvalidInput(f"spectrum is not conjugate-symmetric (imag residue {imag:g})")
    values = field.real.copy()
    if points is not None and len(points):
        values -= _trilinear(values, np.atleast_2d(points)).mean()
    return ScalarGrid3(values)


def solve_poisson(v: VectorGrid3, smoothing_sigma: float,
                  points: Optional[np.ndarray] = None) -> ScalarGrid3:
    """Smoothed occupancy field from a splatted normal field.

    The isolevel shift needs the splat's point locations; pass them to have
    the surface sit at level zero (mean interpolated value over the points).
    """
    return spectrum_to_field(poisson_spectrum(v, smoothing_sigma), points)


def band_limit(spectrum: SpectrumGrid3, cutoff: FrequencyCutoff) -> SpectrumGrid3:
    """Zero every coefficient with ||k||_2 > f; retained ones are bit-identical."""
    r = spectrum.resolution
    max_radius = (r / 2) * math.sqrt(3.0)
    if cutoff.f > max_radius + 1e-9:
        raise InvalidInput(f"cutoff {cutoff.f} exceeds the grid's maximum radius {max_radius:.3f}")
    mask = _wavenumber_radii(r) <= cutoff.f
    return SpectrumGrid3(np.where(mask, spectrum.values, 0.0 + 0.0j))


def sample_cutoff(subband_index: int, rng_seed: int) -> FrequencyCutoff:
    """Integer cutoff drawn uniformly from one of the six closed subbands."""
    if not 0 <= subband_index < len(SUBBANDS):
        raise InvalidInput(f"subband_index must be in [0, {len(SUBBANDS) - 1}]")
    lo, hi = SUBBANDS[subband_index]
    rng = np.random.default_rng(rng_seed)
    return FrequencyCutoff(f=float(rng.integers(lo, hi + 1)), subband_index=subband_index)


def extract_isosurface(grid: ScalarGrid3, isolevel: float = 0.0) -> TriangleMesh:
    """Marching-cubes triangulation of {field = isolevel} in domain coordinates.

    Faces are wound so normals point toward increasing field values (outward
    for the negative-inside convention). The mesh is closed whenever the
    level set stays away from the domain boundary; the watertight flag
    records that check.
    """
    from skimage import measure

    values = grid.values
    if isolevel <= values.min() or isolevel >= values.max():
        raise EmptySurface(f"level {isolevel} not crossed (field range "
                           f"[{values.min():.4g}, {values.max():.4g}])")
    h = grid.cell_size
    verts, faces, _, _ = measure.marching_cubes(
        values, level=isolevel, spacing=(h, h, h), gradient_direction="descent",
    )
    verts = verts + (-1.0 + 0.5 * h)
    boundary = np.concatenate([
        values[0].ravel(), values[-1].ravel(),
        values[:, 0].ravel(), values[:, -1].ravel(),
        values[:, :, 0].ravel(), values[:, :, -1].ravel(),
    ])
    closed = bool((boundary > isolevel).all() or (boundary < isolevel).all())
    return TriangleMesh(verts, faces.astype(np.int32), watertight=closed).cleaned()


def band_limited_field(cloud: OrientedPointCloud, resolution: int,
                       cutoff: FrequencyCutoff,
                       smoothing_sigma: Optional[float] = None) -> ScalarGrid3:
    """Splat, solve, band-limit, invert, and shift; the grid behind a reconstruction."""
    if smoothing_sigma is None:
        smoothing_sigma = default_smoothing_sigma(resolution)
    v = splat_normals(cloud, resolution)
    spec = band_limit(poisson_spectrum(v, smoothing_sigma), cutoff)
    return spectrum_to_field(spec, cloud.points)


def reconstruct_band_limited(cloud: OrientedPointCloud, resolution: int,
                             cutoff: FrequencyCutoff,
                             smoothing_sigma: Optional[float] = None) -> TriangleMesh:
    """Band-limited surface reconstruction from oriented points.

    With the full-band cutoff this is the plain spectral Poisson
    reconstruction (the full frequency coverage); lower cutoffs yield the
    smoothed low-frequency observations.
    """
    return extract_isosurface(band_limited_field(cloud, resolution, cutoff, smoothing_sigma), 0.0)
