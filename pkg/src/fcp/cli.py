"""Command-line front end: build-data, train, consolidate, eval, spectral,
decode-embedding.

Every subcommand honors --seed and writes a resolved-config snapshot next to
its outputs, so reruns are reproducible byte for byte. Exit codes: 0 success,
2 usage/config, 3 invalid input, 4 degenerate geometry, 5 I/O failure,
1 unexpected error. FCP_LOG sets the log level.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("fcp")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INVALID = 3
EXIT_DEGENERATE = 4
EXIT_IO = 5


def _setup_logging():
    level = os.environ.get("FCP_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _load_run_config(path):
    from .config import RunConfig, load_config

    return load_config(path) if path else RunConfig.defaults()


def _snapshot(run, directory: Path, name: str):
    from .config import dump_config

    directory.mkdir(parents=True, exist_ok=True)
    (directory / name).write_text(dump_config(run))


def _apply(obj, **overrides):
    for key, value in overrides.items():
        if value is not None:
            setattr(obj, key, value)
    return obj


def cmd_build_data(args) -> int:
    from .dataset import build_dataset

    run = _load_run_config(args.config)
    _apply(run.data, resolution=args.res, cloud_points=args.points,
           extra_observations=args.extras, queries_per_obs=args.queries,
           seed=args.seed)
    meshes = []
    for pattern in args.meshes:
        path = Path(pattern)
        if path.is_dir():
            meshes.extend(sorted(p for p in path.iterdir()
                                 if p.suffix.lower() in (".obj", ".ply")))
        else:
            meshes.append(path)
    if not meshes:
        log.error("no input meshes found")
        return EXIT_INVALID
    out = Path(args.out)
    if args.jobs > 1:
        manifest = _build_parallel(meshes, out, run.data, args.jobs)
    else:
        manifest = build_dataset(meshes, out, run.data)
    _snapshot(run, out, "resolved_config.cfg")
    print(f"built {len(manifest.shapes)} shapes -> {out}")
    for line in manifest.config.get("rejected", []):
        print(f"rejected: {line}", file=sys.stderr)
    return EXIT_OK


def _build_parallel(meshes, out, gen_cfg, jobs):
    from concurrent.futures import ProcessPoolExecutor

    from .dataset import write_dataset, shape_seed_for

    with ProcessPoolExecutor(max_workers=jobs) as pool:
        results = list(pool.map(
            _build_one,
            [(str(m), gen_cfg, Path(m).stem, shape_seed_for(gen_cfg.seed, i))
             for i, m in enumerate(meshes)]))
    entries = [r for r in results if r is not None]
    return write_dataset(entries, out, gen_cfg)


def _build_one(task):
    from .dataset import build_query_batches, build_training_shape
    from .errors import ShapeRejected

    path, cfg, sid, seed = task
    try:
        shape = build_training_shape(path, cfg, sid, shape_seed=seed)
    except ShapeRejected as exc:
        log.warning("%s", exc)
        return None
    batches = build_query_batches(shape, cfg.queries_per_obs, seed=seed + 1,
                                  sigma_broad=cfg.sigma_broad,
                                  sigma_near=cfg.sigma_near,
                                  query_source=cfg.query_source)
    return shape, batches


def cmd_train(args) -> int:
    from .dataset import read_dataset
    from .training import train_prior

    run = _load_run_config(args.config)
    _apply(run.train, epochs=args.epochs, queries_per_iter=args.queries, seed=args.seed)
    _apply(run.arch, hidden=args.hidden, layers=args.layers)
    entries = list(read_dataset(args.data))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _snapshot(run, out, "resolved_config.cfg")
    result = train_prior(entries, run.train, run.arch, out_dir=out, resume=args.resume)
    status = "diverged (restored last good checkpoint)" if result.diverged else "done"
    final = result.history[-1] if result.history else (0, 0, float("nan"), float("nan"))
    print(f"train {status}: {result.iterations} iterations, "
          f"final loss {final[2] + final[3]:.6g} -> {out / 'model_final.fcpc'}")
    return EXIT_OK


def cmd_consolidate(args) -> int:
    from .consolidate import consolidate
    from .network import load_checkpoint

    run = _load_run_config(args.config)
    cfg = _apply(run.fit, iterations=args.iters, lr=args.lr, seed=args.seed,
                 init=args.init)
    params, table, _, _ = load_checkpoint(args.model)
    mesh, report = consolidate(args.input, params, cfg, resolution=args.res,
                               table=table)
    from . import fileio

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fileio.write_mesh(mesh, out)
    _snapshot(run, out.parent, out.stem + "_config.cfg")
    if args.report:
        Path(args.report).write_text(json.dumps(report, indent=2, sort_keys=True))
    print(f"consolidated {args.input} -> {out} "
          f"({report['iterations']} iters, final loss {report['final_loss']:.6g})")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .metrics import benchmark, format_table

    run = _load_run_config(args.config)
    cfg = _apply(run.eval, samples=args.samples, seed=args.seed)
    if args.jobs > 1:
        reports, summary, exceptions = _eval_parallel(args.pairs, cfg, args.jobs, args.csv)
    else:
        reports, summary, exceptions = benchmark(args.pairs, n=cfg.samples,
                                                 seed=cfg.seed, csv_path=args.csv)
    print(format_table(reports, summary))
    if exceptions:
        print("\nexceptions:")
        for line in exceptions:
            print(f"  {line}")
    if args.csv:
        _snapshot(run, Path(args.csv).parent, "eval_config.cfg")
    return EXIT_OK


def _eval_parallel(pairs_dir, cfg, jobs, csv_path):
    import csv as csv_mod
    from concurrent.futures import ProcessPoolExecutor

    from .metrics import CSV_HEADER, discover_pairs, summarize

    pairs, exceptions = discover_pairs(pairs_dir)
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        reports = list(pool.map(_eval_one, [(p, cfg.samples, cfg.seed) for p in pairs]))
    summary = summarize(reports)
    if csv_path:
        with open(csv_path, "w", newline="") as fh:
            writer = csv_mod.writer(fh)
            writer.writerow(CSV_HEADER)
            for rep in reports:
                writer.writerow(rep.csv_row())
    return reports, summary, exceptions


def _eval_one(task):
    from . import fileio
    from .metrics import evaluate_pair

    (pair_id, pred_path, gt_path), n, seed = task
    return evaluate_pair(fileio.read_mesh(pred_path), fileio.read_mesh(gt_path),
                         pair_id, n, seed)


def cmd_spectral(args) -> int:
    from . import fileio, spectral
    from .consolidate import ingest_observation  # noqa: F401 (shared error types)
    from .errors import FcpError
    from .mesh import normalize_mesh, sample_surface

    run = _load_run_config(args.config)
    path = Path(args.input)
    try:
        cloud = fileio.read_ply_points(path)
    except FcpError:
        mesh = fileio.read_mesh(path)
        mesh, _ = normalize_mesh(mesh)
        cloud = sample_surface(mesh, args.points, seed=args.seed)
    cutoffs = [int(tok) for tok in str(args.cutoff).split(",")]
    out_prefix = Path(args.out) if args.out else path.with_suffix("")
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    sigma = spectral.default_smoothing_sigma(args.res)
    v = spectral.splat_normals(cloud, args.res)
    spectrum = spectral.poisson_spectrum(v, sigma)
    for f in cutoffs:
        cut = (spectral.FrequencyCutoff.full(args.res) if f >= args.res // 2
               else spectral.FrequencyCutoff(float(f)))
        limited = spectral.band_limit(spectrum, cut)
        grid = spectral.spectrum_to_field(limited, cloud.points)
        mesh_out = spectral.extract_isosurface(grid, 0.0)
        mesh_path = Path(f"{out_prefix}_cut{f:03d}.ply")
        grid_path = Path(f"{out_prefix}_cut{f:03d}.fcpg")
        fileio.write_ply_mesh(mesh_out, mesh_path)
        fileio.write_grid(grid.values, grid_path)
        print(f"cutoff {f}: {mesh_out.n_triangles} triangles -> {mesh_path}, {grid_path}")
    _snapshot(run, out_prefix.parent, out_prefix.name + "_spectral_config.cfg")
    return EXIT_OK


def cmd_decode_embedding(args) -> int:
    from . import fileio
    from .consolidate import sharpen
    from .errors import InvalidInput
    from .network import load_checkpoint

    params, table, _, _ = load_checkpoint(args.model)
    if args.list:
        for sid in sorted(table.full):
            print(sid)
        return EXIT_OK
    if args.shape_id is not None:
        if args.shape_id not in table.full:
            raise InvalidInput(f"unknown shape id {args.shape_id!r} "
                               f"(known: {', '.join(sorted(table.full)) or 'none'})")
        embedding = table.full[args.shape_id]
    elif args.embedding is not None:
        embedding = np.load(args.embedding)
    else:
        raise InvalidInput("need --shape-id or --embedding (or --list)")
    mesh = sharpen(params, embedding, args.res)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fileio.write_mesh(mesh, out)
    print(f"decoded embedding -> {out} ({mesh.n_triangles} triangles)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fcp",
        description="Frequency consolidation priors: spectral SDF data "
                    "generation, prior training, and test-time sharpening.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-data", help="build training shapes and query batches")
    p.add_argument("--meshes", nargs="+", required=True,
                   help="mesh files or directories of .obj/.ply files")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--config", help="run config file")
    p.add_argument("--res", type=int, help="generation grid resolution")
    p.add_argument("--points", type=int, help="surface samples per shape")
    p.add_argument("--extras", type=int, help="extra [3,30]-band observations")
    p.add_argument("--queries", type=int, help="queries per observation")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--jobs", type=int, default=1, help="parallel shape builds")
    p.set_defaults(func=cmd_build_data)

    p = sub.add_parser("train", help="learn the consolidation prior")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output directory for checkpoints")
    p.add_argument("--config", help="run config file")
    p.add_argument("--epochs", type=int)
    p.add_argument("--queries", type=int, help="queries per iteration")
    p.add_argument("--hidden", type=int, help="decoder hidden width")
    p.add_argument("--layers", type=int, help="decoder layer count")
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("consolidate", help="sharpen an observation with a trained prior")
    p.add_argument("--model", required=True, help="trained checkpoint (.fcpc)")
    p.add_argument("--input", required=True,
                   help="observation: mesh (.ply/.obj), SDF grid (.fcpg), or point-cloud .ply")
    p.add_argument("--out", required=True, help="output mesh path (.ply/.obj)")
    p.add_argument("--config", help="run config file")
    p.add_argument("--iters", type=int, help="fit iterations (default 800)")
    p.add_argument("--lr", type=float, help="fit learning rate (default 0.005)")
    p.add_argument("--res", type=int, default=256, choices=(64, 128, 256),
                   help="extraction grid resolution")
    p.add_argument("--seed", type=int)
    p.add_argument("--init", choices=("gaussian", "mean"), help="embedding init mode")
    p.add_argument("--report", help="write a JSON fit report here")
    p.set_defaults(func=cmd_consolidate)

    p = sub.add_parser("eval", help="Chamfer/normal-consistency benchmark over mesh pairs")
    p.add_argument("--pairs", required=True,
                   help="directory of <id>.pred.{ply,obj} + <id>.gt.{ply,obj}")
    p.add_argument("--config", help="run config file")
    p.add_argument("--samples", type=int, help="surface samples per mesh")
    p.add_argument("--seed", type=int)
    p.add_argument("--csv", help="CSV output path (default <pairs>/metrics.csv)")
    p.add_argument("--jobs", type=int, default=1, help="parallel pair evaluation")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("spectral", help="standalone band-limited reconstruction")
    p.add_argument("--in", dest="input", required=True,
                   help="oriented point cloud .ply or mesh (.obj/.ply)")
    p.add_argument("--cutoff", required=True,
                   help="radial cutoff, or comma list for an observation ladder")
    p.add_argument("--res", type=int, default=128, help="grid resolution")
    p.add_argument("--points", type=int, default=100_000,
                   help="surface samples when the input is a mesh")
    p.add_argument("--out", help="output path prefix (default: input stem)")
    p.add_argument("--config", help="run config file")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_spectral)

    p = sub.add_parser("decode-embedding",
                       help="debug: decode a raw identity embedding to a mesh")
    p.add_argument("--model", required=True, help="trained checkpoint (.fcpc)")
    p.add_argument("--shape-id", help="decode this trained shape's embedding")
    p.add_argument("--embedding", help=".npy file with a raw embedding vector")
    p.add_argument("--list", action="store_true", help="list trained shape ids")
    p.add_argument("--res", type=int, default=64, choices=(64, 128, 256))
    p.add_argument("--out", help="output mesh path", default="decoded.ply")
    p.set_defaults(func=cmd_decode_embedding)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    from .errors import (DegenerateField, EmptySurface, IngestError, InvalidInput,
                         ShapeRejected, TruncatedFile)

    try:
        return args.func(args)
    except (InvalidInput, IngestError) as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (DegenerateField, EmptySurface, ShapeRejected) as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (TruncatedFile, OSError) as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
