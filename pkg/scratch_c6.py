"""Criterion-6 probe: one trained prior, several fit variants."""
import time

import numpy as np

from fcp.consolidate import FitConfig, fit_embedding, ingest_observation, sharpen
from fcp.dataset import GenerationConfig, build_query_batches, build_training_shape
from fcp.metrics import chamfer
from fcp.mesh import sample_surface
from fcp.network import ArchConfig
from fcp.primitives import make_box, make_cylinder, make_fused_spheres
from fcp import spectral as sp
from fcp.training import TrainConfig, train_prior

t_start = time.perf_counter()

corpus = [
    ("box_a", make_box((1.5, 0.45, 0.8))),
    ("cyl_a", make_cylinder(0.28, 1.45)),
    ("fused_a", make_fused_spheres(0.42, 0.30)),
    ("box_b", make_box((1.4, 1.0, 0.35))),
    ("cyl_b", make_cylinder(0.62, 0.5)),
]

gen = GenerationConfig(cloud_points=30_000, extra_observations=4,
                       queries_per_obs=2048, seed=31)
entries = []
for i, (sid, mesh) in enumerate(corpus):
    t0 = time.perf_counter()
    shape = build_training_shape(mesh, gen, sid, shape_seed=100 + i)
    batches = build_query_batches(shape, 2048, seed=200 + i)
    entries.append((shape, batches))
    print(f"built {sid}: {time.perf_counter()-t0:.1f} s, cutoffs "
          f"{[int(c.f) for c, _ in shape.observations]}", flush=True)

arch = ArchConfig(hidden=128, layers=8, dtype="float32")
tc = TrainConfig(epochs=250, queries_per_iter=2048, seed=5, lr_decay_every=100)
t0 = time.perf_counter()
result = train_prior(entries, tc, arch)
print(f"trained {result.iterations} iters in {time.perf_counter()-t0:.0f} s; "
      f"low/full {result.history[-1][2]:.4g}/{result.history[-1][3]:.4g}",
      flush=True)

for shape, _ in entries:
    m = sharpen(result.params, result.table.full[shape.shape_id], 128)
    print(f"self-decode {shape.shape_id}: "
          f"CD={chamfer(m, shape.full_mesh, n=8000, seed=1):.4f}", flush=True)

ids = [s.shape_id for s, _ in entries]
trained_e = np.stack([result.table.full[i] for i in ids])


def cosines(e):
    a = e / np.linalg.norm(e)
    b = trained_e / np.linalg.norm(trained_e, axis=1, keepdims=True)
    return b @ a


for reg in (0.0, 1e-4, 1e-3):
    wins = 0
    print(f"--- fit variant: code_reg={reg}", flush=True)
    for i, (shape, _) in enumerate(entries):
        trained_f0 = int(shape.observations[0][0].f)
        f_held = min(f for f in (3, 4, 5) if f != trained_f0)
        cloud = sample_surface(shape.full_mesh, 30_000, seed=900 + i)
        grid = sp.band_limited_field(cloud, 128, sp.FrequencyCutoff(float(f_held)))
        obs_mesh = sp.extract_isosurface(grid, 0.0)
        cd_obs = chamfer(obs_mesh, shape.full_mesh, n=8000, seed=3)
        obs = ingest_observation(obs_mesh, seed=40 + i)
        fit = FitConfig(iterations=400, queries_per_iter=2048, seed=40 + i,
                        code_reg=reg)
        t0 = time.perf_counter()
        eF, eC, hist = fit_embedding(obs, result.params, fit, table=result.table)
        out = sharpen(result.params, eF, 128)
        cd_out = chamfer(out, shape.full_mesh, n=8000, seed=3)
        win = cd_out < cd_obs
        wins += int(win)
        cos = cosines(eF)
        print(f"  {shape.shape_id}: f={f_held} cd_obs={cd_obs:.4f} "
              f"cd_out={cd_out:.4f} {'WIN ' if win else 'LOSS'} "
              f"loss={hist[-1]:.3g} |e|={np.linalg.norm(eF):.2f} "
              f"cos={np.round(cos, 2)} ({time.perf_counter()-t0:.0f} s)",
              flush=True)
    print(f"  wins: {wins}/5", flush=True)

print(f"total: {(time.perf_counter()-t_start)/60:.1f} min")
