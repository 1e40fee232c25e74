"""Joint optimization of the two-branch SDF, its mappers, and all embeddings.

Each iteration takes one (shape, observation) pair, regresses both branches
against the recorded signed distances with a mean-squared loss, and applies
bias-corrected Adam with two learning-rate groups: decoders/mappers and
embeddings. Learning rates halve every `lr_decay_every` epochs, where an
epoch is one pass over all training pairs.

Per-iteration RNG is counter-based (seeded by (seed, iteration)), so resuming
from a checkpoint reproduces the continued run bit-exactly.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .dataset import TrainingShape
from .distance import MeshDistanceField
from .errors import InvalidInput
from .mesh import sample_surface
from .network import (ArchConfig, DecoderParams, EmbeddingTable, GradientBundle,
                      TwoBranchSDF, init_params, load_checkpoint, save_checkpoint)
from .sampling import QueryBatch, _gaussian_wave, QUERY_BOUND


@dataclass
class TrainConfig:
    epochs: int = 2000
    queries_per_iter: int = 16_384
    lr_embeddings: float = 0.0005
    lr_decoders: float = 0.001
    lr_decay_factor: float = 0.5
    lr_decay_every: int = 500
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    checkpoint_every_epochs: int = 0  # 0: only the final checkpoint
    log_every: int = 1
    train_subbands: tuple = (0, 1, 2, 3, 4)
    include_extras: bool = True
    online_sampling: bool = False
    sigma_broad: float = 8.0
    sigma_near: float = 0.2

    def __post_init__(self):
        if self.lr_embeddings <= 0 or self.lr_decoders <= 0:
            raise InvalidInput("learning rates must be positive")
        if not 0.0 < self.lr_decay_factor <= 1.0:
            raise InvalidInput("decay factor must be in (0, 1]")

    def lr_scale(self, epoch: int) -> float:
        return self.lr_decay_factor ** (epoch // self.lr_decay_every)


@dataclass
class AdamState:
    """Per-key first/second moments and step counters."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: dict = field(default_factory=dict)


def two_branch_mse(s_low, gt_low, s_full, gt_full):
    """Mean squared error of both branches, summed; returns (total, low, full)."""
    s_low = np.asarray(s_low)
    s_full = np.asarray(s_full)
    if len(s_low) != len(gt_low) or len(s_full) != len(gt_full):
        raise InvalidInput("prediction/target length mismatch")
    if not (np.isfinite(s_low).all() and np.isfinite(s_full).all()
            and np.isfinite(gt_low).all() and np.isfinite(gt_full).all()):
        raise InvalidInput("loss inputs contain non-finite values")
    loss_low = float(np.mean((s_low - gt_low) ** 2))
    loss_full = float(np.mean((s_full - gt_full) ** 2))
    return loss_low + loss_full, loss_low, loss_full


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Standard bias-corrected Adam update, in place, deterministic key order."""
    for key in sorted(grads):
        g = grads[key]
        if key not in state.m:
            state.m[key] = np.zeros_like(params[key])
            state.v[key] = np.zeros_like(params[key])
            state.t[key] = 0
        state.t[key] += 1
        t = state.t[key]
        m = state.m[key]
        v = state.v[key]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        params[key] -= lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class TrainResult:
    params: DecoderParams
    table: EmbeddingTable
    history: list  # rows of (iter, epoch, loss_low, loss_full, lr_emb, lr_dec)
    iterations: int
    diverged: bool = False


HISTORY_HEADER = ["iter", "epoch", "loss_low", "loss_full", "lr_emb", "lr_dec"]


def write_history_csv(history, path, log_every: int = 1) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_HEADER)
        for row in history:
            if row[0] % log_every == 0:
                writer.writerow([row[0], row[1], f"{row[2]:.8g}", f"{row[3]:.8g}",
                                 f"{row[4]:.8g}", f"{row[5]:.8g}"])


def training_pairs(entries, config: TrainConfig):
    """Ordered (shape_index, observation_index) pairs selected for training."""
    pairs = []
    for si, (shape, _) in enumerate(entries):
        for oi, (cutoff, _) in enumerate(shape.observations):
            if cutoff.subband_index is None:
                if config.include_extras:
                    pairs.append((si, oi))
            elif cutoff.subband_index in config.train_subbands:
                pairs.append((si, oi))
    if not pairs:
        raise InvalidInput("no training pairs selected")
    return pairs


class _OnlineSampler:
    """Fresh queries each iteration, ground truths from cached distance fields."""

    def __init__(self, entries, config: TrainConfig):
        self.entries = entries
        self.config = config
        self._fields: dict = {}
        self._seeds: dict = {}

    def _field(self, si, oi):
        key = (si, oi)
        if key not in self._fields:
            shape, _ = self.entries[si]
            mesh = shape.full_mesh if oi < 0 else shape.observations[oi][1]
            self._fields[key] = MeshDistanceField(mesh)
        return self._fields[key]

    def _seed_points(self, si, oi):
        key = (si, oi)
        if key not in self._seeds:
            shape, _ = self.entries[si]
            mesh = shape.full_mesh if oi < 0 else shape.observations[oi][1]
            n = max(self.config.queries_per_iter, 20_000)
            self._seeds[key] = sample_surface(mesh, n, seed=shape.seed + oi + 13).points
        return self._seeds[key]

    def batch(self, si, oi, iteration) -> QueryBatch:
        cfg = self.config
        rng = np.random.default_rng((cfg.seed, iteration))
        half = cfg.queries_per_iter // 2
        full_pts = self._seed_points(si, -1)
        obs_pts = self._seed_points(si, oi)
        broad = _gaussian_wave(full_pts, half, cfg.sigma_broad, rng, QUERY_BOUND)
        near = np.concatenate([
            _gaussian_wave(full_pts, half - half // 2, cfg.sigma_near, rng, QUERY_BOUND),
            _gaussian_wave(obs_pts, half // 2, cfg.sigma_near, rng, QUERY_BOUND),
        ])
        queries = np.concatenate([broad, near])
        shape, _ = self.entries[si]
        cutoff, _ = shape.observations[oi]
        return QueryBatch(queries,
                          self._field(si, oi).signed(queries),
                          self._field(si, -1).signed(queries),
                          shape_id=shape.shape_id,
                          observation_id=str(int(cutoff.f)))


def _embedding_param_view(table: EmbeddingTable):
    view = {}
    for sid, arr in table.full.items():
        view[f"embed_full/{sid}"] = arr
    for (sid, oid), arr in table.corr.items():
        view[f"embed_corr/{sid}\x1f{oid}"] = arr
    return view


def _adam_tensors(state: AdamState, prefix: str):
    out = {}
    for key, arr in state.m.items():
        out[f"{prefix}_m/{key}"] = arr
    for key, arr in state.v.items():
        out[f"{prefix}_v/{key}"] = arr
    for key, t in state.t.items():
        out[f"{prefix}_t/{key}"] = np.asarray(float(t), dtype=np.float32)
    return out


def _restore_adam(extra: dict, prefix: str) -> AdamState:
    state = AdamState()
    for name, arr in extra.items():
        kind, _, key = name.partition("/")
        if kind == f"{prefix}_m":
            state.m[key] = arr.copy()
        elif kind == f"{prefix}_v":
            state.v[key] = arr.copy()
        elif kind == f"{prefix}_t":
            state.t[key] = int(round(float(arr)))
    return state


def train_prior(entries, config: TrainConfig, arch: Optional[ArchConfig] = None,
                out_dir=None, resume: Optional[str] = None) -> TrainResult:
    """Learn the consolidation prior over a built dataset.

    entries: list of (TrainingShape, [QueryBatch]) as produced by
    dataset.read_dataset or dataset.build_* helpers. When out_dir is given,
    checkpoints and the training log are written there. `resume` restarts
    from a checkpoint path and continues the same seed stream.
    """
    entries = list(entries)
    if not entries:
        raise InvalidInput("dataset is empty")
    pairs = training_pairs(entries, config)
    batch_lookup = {}
    for si, (shape, batches) in enumerate(entries):
        for batch in batches:
            batch_lookup[(shape.shape_id, batch.observation_id)] = batch

    start_iter = 0
    dec_state = AdamState()
    emb_state = AdamState()
    if resume is not None:
        params, table, meta, extra = load_checkpoint(resume)
        arch = params.arch
        start_iter = int(meta["next_iter"])
        dec_state = _restore_adam(extra, "adam_dec")
        emb_state = _restore_adam(extra, "adam_emb")
    else:
        arch = arch or ArchConfig()
        shape_ids = tuple(shape.shape_id for shape, _ in entries)
        observation_ids = {}
        for si, oi in pairs:
            shape = entries[si][0]
            oid = str(int(shape.observations[oi][0].f))
            observation_ids.setdefault(shape.shape_id, []).append(oid)
        observation_ids = {k: tuple(v) for k, v in observation_ids.items()}
        params, table = init_params(arch, config.seed, shape_ids, observation_ids)

    net = TwoBranchSDF(params)
    sampler = _OnlineSampler(entries, config) if config.online_sampling else None
    history: list = []
    total_iters = config.epochs * len(pairs)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    snapshot = None  # (iter, params, table, dec_state, emb_state)
    diverged = False

    def take_snapshot(it):
        nonlocal snapshot
        snapshot = (
            it,
            params.copy(),
            EmbeddingTable(table.dim_full, table.dim_corr,
                           {k: v.copy() for k, v in table.full.items()},
                           {k: v.copy() for k, v in table.corr.items()}),
        )

    def save(path, next_iter):
        extra = {}
        extra.update(_adam_tensors(dec_state, "adam_dec"))
        extra.update(_adam_tensors(emb_state, "adam_emb"))
        save_checkpoint(path, params, table,
                        metadata={"next_iter": next_iter, "seed": config.seed,
                                  "epochs": config.epochs,
                                  "pairs": len(pairs)},
                        extra_tensors=extra)

    take_snapshot(start_iter)
    it = start_iter
    for it in range(start_iter, total_iters):
        epoch = it // len(pairs)
        si, oi = pairs[it % len(pairs)]
        shape = entries[si][0]
        cutoff, _ = shape.observations[oi]
        oid = str(int(cutoff.f))

        if sampler is not None:
            batch = sampler.batch(si, oi, it)
        else:
            batch = batch_lookup.get((shape.shape_id, oid))
            if batch is None:
                raise InvalidInput(
                    f"no persisted batch for {shape.shape_id}/{oid}; "
                    "enable online_sampling or rebuild the dataset")
            if len(batch) > config.queries_per_iter:
                rng = np.random.default_rng((config.seed, it))
                idx = rng.choice(len(batch), size=config.queries_per_iter, replace=False)
                batch = QueryBatch(batch.queries[idx], batch.sdf_low[idx],
                                   batch.sdf_full[idx], batch.shape_id,
                                   batch.observation_id)

        e_full = table.full[shape.shape_id]
        e_corr = table.corr[(shape.shape_id, oid)]
        s_low = net.forward_low(e_full, e_corr, batch.queries)
        s_full = net.forward_full(e_full, batch.queries)
        total, loss_low, loss_full = _safe_loss(s_low, batch.sdf_low, s_full, batch.sdf_full)

        scale = config.lr_scale(epoch)
        lr_emb = config.lr_embeddings * scale
        lr_dec = config.lr_decoders * scale
        history.append((it, epoch, loss_low, loss_full, lr_emb, lr_dec))

        if not np.isfinite(total):
            diverged = True
            snap_it, snap_params, snap_table = snapshot
            params.params.update(snap_params.params)
            table.full.update(snap_table.full)
            table.corr.update(snap_table.corr)
            break

        nb = len(batch)
        bundle = net.backward(grad_low=2.0 * (s_low - batch.sdf_low) / nb,
                              grad_full=2.0 * (s_full - batch.sdf_full) / nb)
        adam_step(params.params, bundle.params, dec_state, lr_dec,
                  config.beta1, config.beta2, config.eps)
        emb_view = _embedding_param_view(table)
        emb_grads = {
            f"embed_full/{shape.shape_id}": bundle.e_full,
            f"embed_corr/{shape.shape_id}\x1f{oid}": bundle.e_corr,
        }
        adam_step(emb_view, emb_grads, emb_state, lr_emb,
                  config.beta1, config.beta2, config.eps)

        epoch_done = (it + 1) % len(pairs) == 0
        epoch_next = (it + 1) // len(pairs)
        if epoch_done:
            take_snapshot(it + 1)
            if (out_dir is not None and config.checkpoint_every_epochs
                    and epoch_next % config.checkpoint_every_epochs == 0
                    and it + 1 < total_iters):
                save(out_dir / f"ckpt_epoch{epoch_next:06d}.fcpc", it + 1)

    final_iter = it + 1 if not diverged else snapshot[0]
    if out_dir is not None:
        save(out_dir / "model_final.fcpc", final_iter)
        write_history_csv(history, out_dir / "history.csv", config.log_every)
    return TrainResult(params=params, table=table, history=history,
                       iterations=final_iter, diverged=diverged)


def _safe_loss(s_low, gt_low, s_full, gt_full):
    """two_branch_mse that reports non-finite losses instead of raising."""
    s_low = np.asarray(s_low)
    s_full = np.asarray(s_full)
    loss_low = float(np.mean((s_low - gt_low) ** 2))
    loss_full = float(np.mean((s_full - gt_full) ** 2))
    return loss_low + loss_full, loss_low, loss_full
