import numpy as np
import pytest
from scipy.spatial import cKDTree

from fcp import fileio
from fcp.errors import InvalidInput
from fcp.mesh import TriangleMesh, sample_surface
from fcp.metrics import (benchmark, chamfer, evaluate_pair, format_table,
                         normal_consistency, summarize)
from fcp.primitives import make_box, make_cylinder, make_fused_spheres, make_icosphere


def _square(z: float, flip=False) -> TriangleMesh:
    verts = np.array([[0, 0, z], [1, 0, z], [1, 1, z], [0, 1, z]], dtype=float)
    tris = np.array([[0, 1, 2], [0, 2, 3]], dtype=np.int32)
    if flip:
        tris = tris[:, ::-1]
    return TriangleMesh(verts, tris)


RANDOM_MESHES = [
    make_box((1.0, 0.5, 0.8)),
    make_cylinder(0.4, 1.1),
    make_icosphere(0.6, 2),
    make_icosphere(0.3, 3, center=(0.2, 0.1, -0.2)),
    make_fused_spheres(0.35, 0.25, resolution=48),
]


@pytest.mark.parametrize("mesh", RANDOM_MESHES)
def test_identity_metrics(mesh):
    assert chamfer(mesh, mesh, n=2000, seed=3) == 0.0
    assert chamfer(mesh, mesh, n=2000, order="L2", seed=3) == 0.0
    assert normal_consistency(mesh, mesh, n=2000, seed=3) >= 1.0 - 1e-6


def test_parallel_planes_analytic():
    d = 0.1
    a, b = _square(0.0), _square(d)
    cd1 = chamfer(a, b, n=20_000, seed=0)
    cd2 = chamfer(a, b, n=20_000, order="L2", seed=0)
    assert cd1 == pytest.approx(d, rel=0.02)
    assert cd2 == pytest.approx(d ** 2, rel=0.02)


def test_chamfer_symmetry_bit_exact():
    a, b = make_box((1, 1, 1)), make_icosphere(0.6, 2)
    assert chamfer(a, b, n=3000, seed=1) == chamfer(b, a, n=3000, seed=1)


def test_nc_flipped_plane_is_one():
    a, b = _square(0.0), _square(0.0, flip=True)
    assert normal_consistency(a, b, n=5000, seed=2) == pytest.approx(1.0, abs=1e-9)


def test_nc_angled_planes_matches_brute_force():
    # two unit squares meeting at 60 degrees; compare against an O(n^2)
    # brute-force evaluation of the same statistic
    a = _square(0.0)
    ang = np.deg2rad(60.0)
    rot = np.array([[1, 0, 0],
                    [0, np.cos(ang), -np.sin(ang)],
                    [0, np.sin(ang), np.cos(ang)]])
    b = TriangleMesh(a.vertices @ rot.T, a.triangles.copy())
    n = 2000
    fast = normal_consistency(a, b, n=n, seed=4)

    ca = sample_surface(a, n, seed=4)
    cb = sample_surface(b, n, seed=4)
    d_ab = np.linalg.norm(ca.points[:, None] - cb.points[None], axis=2)
    idx_ab = d_ab.argmin(axis=1)
    idx_ba = d_ab.argmin(axis=0)
    cos_ab = np.abs((ca.normals * cb.normals[idx_ab]).sum(axis=1)).mean()
    cos_ba = np.abs((cb.normals * ca.normals[idx_ba]).sum(axis=1)).mean()
    brute = 0.5 * (cos_ab + cos_ba)
    assert fast == pytest.approx(brute, rel=0.01)
    # all pairings are across the two planes, so every |cos| is cos(60)
    assert fast == pytest.approx(np.cos(ang), rel=1e-6)


def test_scale_behavior():
    a, b = make_box((1, 0.8, 0.6)), make_icosphere(0.5, 2)
    s = 2.5
    a2 = TriangleMesh(a.vertices * s, a.triangles.copy())
    b2 = TriangleMesh(b.vertices * s, b.triangles.copy())
    cd1, cd1s = chamfer(a, b, n=4000, seed=5), chamfer(a2, b2, n=4000, seed=5)
    cd2, cd2s = (chamfer(a, b, n=4000, order="L2", seed=5),
                 chamfer(a2, b2, n=4000, order="L2", seed=5))
    nc, ncs = (normal_consistency(a, b, n=4000, seed=5),
               normal_consistency(a2, b2, n=4000, seed=5))
    assert cd1s == pytest.approx(s * cd1, rel=1e-6)
    assert cd2s == pytest.approx(s ** 2 * cd2, rel=1e-6)
    assert ncs == pytest.approx(nc, rel=1e-6)


def test_rigid_invariance():
    a, b = make_box((1, 0.8, 0.6)), make_icosphere(0.5, 2)
    rng = np.random.default_rng(8)
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    t = np.array([0.3, -1.2, 2.0])

    def move(m):
        return TriangleMesh(m.vertices @ q.T + t, m.triangles.copy())

    assert chamfer(move(a), move(b), n=4000, seed=6) == pytest.approx(
        chamfer(a, b, n=4000, seed=6), rel=1e-6)
    assert normal_consistency(move(a), move(b), n=4000, seed=6) == pytest.approx(
        normal_consistency(a, b, n=4000, seed=6), rel=1e-6)


def test_noise_monotonicity():
    base = make_icosphere(0.5, 3)
    truth = make_icosphere(0.5, 3)
    rng = np.random.default_rng(9)
    noise = rng.standard_normal(base.vertices.shape)
    cds = []
    for amp in (0.0, 0.01, 0.05):
        noisy = TriangleMesh(base.vertices + amp * noise, base.triangles.copy())
        cds.append(chamfer(noisy, truth, n=5000, seed=7))
    assert cds[0] <= cds[1] <= cds[2]


def test_empty_mesh_rejected():
    empty = TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int32))
    with pytest.raises(InvalidInput):
        chamfer(empty, make_box(), n=100, seed=0)


def test_benchmark_identical_pairs(tmp_path):
    for i, mesh in enumerate(RANDOM_MESHES[:3]):
        fileio.write_ply_mesh(mesh, tmp_path / f"m{i}.pred.ply")
        fileio.write_ply_mesh(mesh, tmp_path / f"m{i}.gt.ply")
    fileio.write_ply_mesh(RANDOM_MESHES[3], tmp_path / "orphan.pred.ply")
    reports, summary, exceptions = benchmark(tmp_path, n=2000, seed=0,
                                             csv_path=tmp_path / "metrics.csv")
    assert len(reports) == 3
    assert all(r.cd_l1 == 0.0 and r.cd_l2 == 0.0 for r in reports)
    assert all(r.nc >= 1.0 - 1e-6 for r in reports)
    assert summary["cd_l1_x10_mean"] == 0.0
    assert len(exceptions) == 1 and "orphan" in exceptions[0]
    lines = (tmp_path / "metrics.csv").read_text().splitlines()
    assert lines[0] == "pair_id,cd_l1_x10,cd_l2_x100,nc,n_samples,seed"
    assert len(lines) == 4
    table = format_table(reports, summary)
    assert "mean" in table and "variance" in table


def test_variance_protocol_over_observations():
    # mean/variance columns summarize repeated evaluations of one shape
    truth = make_box((1, 1, 1))
    reports = []
    rng = np.random.default_rng(11)
    for i in range(5):
        noisy = TriangleMesh(truth.vertices + 0.02 * rng.standard_normal(truth.vertices.shape),
                             truth.triangles.copy())
        reports.append(evaluate_pair(noisy, truth, f"obs{i}", n=2000, seed=1))
    summary = summarize(reports)
    vals = np.array([r.cd_l1 * 10 for r in reports])
    assert summary["cd_l1_x10_mean"] == pytest.approx(vals.mean(), rel=1e-12)
    assert summary["cd_l1_x10_var"] == pytest.approx(vals.var(), rel=1e-12)
    assert summary["pairs"] == 5
