"""Two-branch conditional neural SDF with hand-derived gradients.

Each branch is a DeepSDF-style fully connected decoder over [query, mapped
embedding] with the input re-concatenated halfway through (skip), preceded by
a 3-layer ReLU mapper that transforms the raw embedding vector. The low
branch is conditioned on the concatenation [e_full, e_corr]; the full branch
reads only e_full, which is what disentangles corruption from shape identity.

No autograd: the architecture is fixed, so reverse-mode gradients are written
out explicitly and checked against finite differences in the test suite.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from .errors import InvalidInput, StateError, TruncatedFile

CHECKPOINT_MAGIC = b"FCPC"
CHECKPOINT_VERSION = 1


@dataclass
class ArchConfig:
    """Network shape. Defaults follow the full-scale setup; tests shrink it."""

    hidden: int = 512
    layers: int = 8
    embed_full: int = 128
    embed_corr: int = 128
    mapper_hidden: int = 128
    mapper_layers: int = 3
    dtype: str = "float32"

    def __post_init__(self):
        if self.layers < 2 or self.mapper_layers < 1:
            raise InvalidInput("need at least 2 decoder layers and 1 mapper layer")
        if self.dtype not in ("float32", "float64"):
            raise InvalidInput("dtype must be float32 or float64")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    @property
    def skip_at(self) -> int:
        return self.layers // 2

    @property
    def decoder_in(self) -> int:
        return 3 + self.mapper_hidden


@dataclass
class DecoderParams:
    """All trainable weights, keyed 'dec_<branch>_W<i>' / 'map_<branch>_b<i>'."""

    arch: ArchConfig
    params: dict[str, np.ndarray]

    def branch(self, prefix: str) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.params.items() if k.startswith(prefix)}

    @property
    def theta_low(self):
        return self.branch("dec_low_")

    @property
    def theta_full(self):
        return self.branch("dec_full_")

    @property
    def mapper_low(self):
        return self.branch("map_low_")

    @property
    def mapper_full(self):
        return self.branch("map_full_")

    def byte_hash(self) -> str:
        digest = hashlib.sha256()
        for name in sorted(self.params):
            digest.update(name.encode())
            digest.update(self.params[name].tobytes())
        return digest.hexdigest()

    def copy(self) -> "DecoderParams":
        return DecoderParams(self.arch, {k: v.copy() for k, v in self.params.items()})


@dataclass
class EmbeddingTable:
    """e_full per shape (shared by all its observations), e_corr per observation."""

    dim_full: int = 128
    dim_corr: int = 128
    full: dict[str, np.ndarray] = field(default_factory=dict)
    corr: dict[tuple[str, str], np.ndarray] = field(default_factory=dict)

    def ensure(self, shape_id: str, observation_id: Optional[str], rng, dtype, std: float = 0.01):
        if shape_id not in self.full:
            self.full[shape_id] = (std * rng.standard_normal(self.dim_full)).astype(dtype)
        if observation_id is not None and (shape_id, observation_id) not in self.corr:
            self.corr[(shape_id, observation_id)] = (
                std * rng.standard_normal(self.dim_corr)
            ).astype(dtype)

    def byte_hash(self) -> str:
        digest = hashlib.sha256()
        for sid in sorted(self.full):
            digest.update(sid.encode())
            digest.update(self.full[sid].tobytes())
        for key in sorted(self.corr):
            digest.update(repr(key).encode())
            digest.update(self.corr[key].tobytes())
        return digest.hexdigest()


@dataclass
class GradientBundle:
    """Gradients mirroring DecoderParams plus the two embedding vectors."""

    params: dict[str, np.ndarray]
    e_full: Optional[np.ndarray] = None
    e_corr: Optional[np.ndarray] = None

    def add_(self, other: "GradientBundle") -> "GradientBundle":
        for k, v in other.params.items():
            if k in self.params:
                self.params[k] = self.params[k] + v
            else:
                self.params[k] = v
        for name in ("e_full", "e_corr"):
            mine, theirs = getattr(self, name), getattr(other, name)
            if theirs is not None:
                setattr(self, name, theirs if mine is None else mine + theirs)
        return self


def init_params(arch: ArchConfig, seed: int,
                shape_ids: tuple[str, ...] = (),
                observation_ids: dict[str, tuple[str, ...]] | None = None,
                embedding_std: float = 0.01) -> tuple[DecoderParams, EmbeddingTable]:
    """He-initialized decoders/mappers and Gaussian(0, 0.01) embeddings."""
    rng = np.random.default_rng(seed)
    dtype = arch.np_dtype
    params: dict[str, np.ndarray] = {}

    def he_layer(name: str, fan_in: int, fan_out: int):
        params[f"{name}_W"] = (
            np.sqrt(2.0 / fan_in) * rng.standard_normal((fan_in, fan_out))
        ).astype(dtype)
        params[f"{name}_b"] = np.zeros(fan_out, dtype=dtype)

    for branch, e_dim in (("low", arch.embed_full + arch.embed_corr), ("full", arch.embed_full)):
        d_in = e_dim
        for i in range(arch.mapper_layers):
            he_layer(f"map_{branch}_L{i}", d_in, arch.mapper_hidden)
            d_in = arch.mapper_hidden
        d_in = arch.decoder_in
        for i in range(arch.layers):
            fan_in = d_in + (arch.decoder_in if i == arch.skip_at else 0)
            fan_out = 1 if i == arch.layers - 1 else arch.hidden
            he_layer(f"dec_{branch}_L{i}", fan_in, fan_out)
            d_in = fan_out

    table = EmbeddingTable(dim_full=arch.embed_full, dim_corr=arch.embed_corr)
    observation_ids = observation_ids or {}
    for sid in shape_ids:
        table.ensure(sid, None, rng, dtype, embedding_std)
        for oid in observation_ids.get(sid, ()):
            table.ensure(sid, oid, rng, dtype, embedding_std)
    return DecoderParams(arch, params), table


def _relu(x):
    return np.maximum(x, 0.0)


class TwoBranchSDF:
    """Forward/backward evaluation over fixed DecoderParams.

    Forward caches activations for the subsequent backward call; caches are
    per-instance, so concurrent use needs one instance per thread.
    """

    def __init__(self, params: DecoderParams):
        self.p = params
        self.arch = params.arch
        self._cache_low = None
        self._cache_full = None

    # -- mapper ------------------------------------------------------------

    def _mapper_forward(self, branch: str, e: np.ndarray):
        dtype = self.arch.np_dtype
        h = np.asarray(e, dtype=dtype)
        inputs, preacts = [], []
        for i in range(self.arch.mapper_layers):
            W = self.p.params[f"map_{branch}_L{i}_W"]
            b = self.p.params[f"map_{branch}_L{i}_b"]
            inputs.append(h)
            z = h @ W + b
            preacts.append(z)
            h = _relu(z)
        return h, (inputs, preacts)

    def _mapper_backward(self, branch: str, cache, d_out: np.ndarray, grads: dict,
                         need_param_grads: bool):
        inputs, preacts = cache
        d = d_out
        for i in range(self.arch.mapper_layers - 1, -1, -1):
            W = self.p.params[f"map_{branch}_L{i}_W"]
            d = d * (preacts[i] > 0)
            if need_param_grads:
                grads[f"map_{branch}_L{i}_W"] = np.outer(inputs[i], d)
                grads[f"map_{branch}_L{i}_b"] = d.copy()
            d = d @ W.T
        return d  # gradient wrt the raw embedding vector

    # -- decoder -----------------------------------------------------------

    def _decoder_forward(self, branch: str, mapped: np.ndarray, queries: np.ndarray):
        arch = self.arch
        dtype = arch.np_dtype
        q = np.asarray(queries, dtype=dtype)
        if q.ndim != 2 or q.shape[1] != 3:
            raise InvalidInput("queries must be (n, 3)")
        if not np.isfinite(q).all():
            raise InvalidInput("queries contain non-finite values")
        x0 = np.concatenate([q, np.broadcast_to(mapped, (len(q), arch.mapper_hidden))], axis=1)
        h = x0
        inputs, preacts = [], []
        for i in range(arch.layers):
            W = self.p.params[f"dec_{branch}_L{i}_W"]
            b = self.p.params[f"dec_{branch}_L{i}_b"]
            inp = np.concatenate([h, x0], axis=1) if i == arch.skip_at else h
            inputs.append(inp)
            z = inp @ W + b
            if i < arch.layers - 1:
                preacts.append(z)
                h = _relu(z)
            else:
                h = z
        return h[:, 0], (x0, inputs, preacts)

    def _decoder_backward(self, branch: str, cache, d_out: np.ndarray, grads: dict,
                          need_param_grads: bool):
        arch = self.arch
        x0, inputs, preacts = cache
        d = d_out[:, None].astype(arch.np_dtype)
        d_x0 = np.zeros_like(x0)
        for i in range(arch.layers - 1, -1, -1):
            W = self.p.params[f"dec_{branch}_L{i}_W"]
            if i < arch.layers - 1:
                d = d * (preacts[i] > 0)
            if need_param_grads:
                grads[f"dec_{branch}_L{i}_W"] = inputs[i].T @ d
                grads[f"dec_{branch}_L{i}_b"] = d.sum(axis=0)
            d_inp = d @ W.T
            if i == arch.skip_at:
                d_x0 += d_inp[:, -x0.shape[1]:]
                d = d_inp[:, : -x0.shape[1]]
            else:
                d = d_inp
        d_x0 += d  # layer 0 consumed x0 directly
        return d_x0[:, 3:].sum(axis=0)  # gradient wrt the mapped embedding

    # -- public ------------------------------------------------------------

    def forward_low(self, e_full: np.ndarray, e_corr: np.ndarray, queries: np.ndarray) -> np.ndarray:
        """s_low = decoder_low(q | mapper_low([e_full, e_corr]))."""
        e = np.concatenate([
            np.asarray(e_full, dtype=self.arch.np_dtype),
            np.asarray(e_corr, dtype=self.arch.np_dtype),
        ])
        if not np.isfinite(e).all():
            raise InvalidInput("embedding contains non-finite values")
        mapped, m_cache = self._mapper_forward("low", e)
        out, d_cache = self._decoder_forward("low", mapped, queries)
        self._cache_low = (m_cache, d_cache)
        return out

    def forward_full(self, e_full: np.ndarray, queries: np.ndarray) -> np.ndarray:
        """s_full = decoder_full(q | mapper_full(e_full)); blind to e_corr."""
        e = np.asarray(e_full, dtype=self.arch.np_dtype)
        if not np.isfinite(e).all():
            raise InvalidInput("embedding contains non-finite values")
        mapped, m_cache = self._mapper_forward("full", e)
        out, d_cache = self._decoder_forward("full", mapped, queries)
        self._cache_full = (m_cache, d_cache)
        return out

    def backward(self, grad_low: Optional[np.ndarray] = None,
                 grad_full: Optional[np.ndarray] = None,
                 need_param_grads: bool = True) -> GradientBundle:
        """Exact reverse-mode gradients for the most recent forward passes.

        grad_low / grad_full are dLoss/ds for each branch; pass None to skip
        a branch. Setting need_param_grads=False limits the result to the
        embedding gradients (used by the test-time embedding fit).
        """
        if grad_low is None and grad_full is None:
            raise InvalidInput("nothing to backpropagate")
        grads: dict[str, np.ndarray] = {}
        e_full_grad = None
        e_corr_grad = None
        if grad_low is not None:
            if self._cache_low is None:
                raise StateError("backward(grad_low) requires a preceding forward_low")
            m_cache, d_cache = self._cache_low
            d_mapped = self._decoder_backward("low", d_cache, np.asarray(grad_low), grads,
                                              need_param_grads)
            d_e = self._mapper_backward("low", m_cache, d_mapped, grads, need_param_grads)
            e_full_grad = d_e[: self.arch.embed_full].copy()
            e_corr_grad = d_e[self.arch.embed_full:].copy()
        if grad_full is not None:
            if self._cache_full is None:
                raise StateError("backward(grad_full) requires a preceding forward_full")
            m_cache, d_cache = self._cache_full
            d_mapped = self._decoder_backward("full", d_cache, np.asarray(grad_full), grads,
                                              need_param_grads)
            d_e = self._mapper_backward("full", m_cache, d_mapped, grads, need_param_grads)
            e_full_grad = d_e if e_full_grad is None else e_full_grad + d_e
        return GradientBundle(params=grads, e_full=e_full_grad, e_corr=e_corr_grad)


# ---------------------------------------------------------------------------
# Checkpoint container: FCPC, version, JSON metadata, then named f32 tensors.


def _tensor_entries(params: DecoderParams, table: EmbeddingTable,
                    extra_tensors: Optional[dict[str, np.ndarray]]):
    entries: list[tuple[str, np.ndarray]] = []
    for name in sorted(params.params):
        entries.append((f"param/{name}", params.params[name]))
    for sid in sorted(table.full):
        entries.append((f"embed_full/{sid}", table.full[sid]))
    for sid, oid in sorted(table.corr):
        entries.append((f"embed_corr/{sid}\x1f{oid}", table.corr[(sid, oid)]))
    for name in sorted(extra_tensors or {}):
        entries.append((f"extra/{name}", extra_tensors[name]))
    return entries


def save_checkpoint(path, params: DecoderParams, table: EmbeddingTable,
                    metadata: Optional[dict] = None,
                    extra_tensors: Optional[dict[str, np.ndarray]] = None) -> None:
    """Write the versioned binary container (tensors stored as f32)."""
    if params.arch.dtype != "float32":
        raise InvalidInput("checkpoints store f32 tensors; float64 models are in-memory only")
    meta = dict(metadata or {})
    meta["arch"] = asdict(params.arch)
    meta_blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(meta_blob)))
        fh.write(meta_blob)
        entries = _tensor_entries(params, table, extra_tensors)
        fh.write(struct.pack("<I", len(entries)))
        for name, arr in entries:
            blob = name.encode("utf-8")
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            arr = np.asarray(arr, dtype="<f4")
            fh.write(struct.pack("<I", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(np.ascontiguousarray(arr).tobytes())


def load_checkpoint(path):
    """Read a container; returns (DecoderParams, EmbeddingTable, metadata, extra)."""
    with open(path, "rb") as fh:
        def need(n: int) -> bytes:
            raw = fh.read(n)
            if len(raw) != n:
                raise TruncatedFile(f"{path}: expected {n} more bytes")
            return raw

        if need(4) != CHECKPOINT_MAGIC:
            raise InvalidInput(f"{path}: not a checkpoint container")
        version = struct.unpack("<I", need(4))[0]
        if version != CHECKPOINT_VERSION:
            raise InvalidInput(f"{path}: unsupported checkpoint version {version}")
        meta = json.loads(need(struct.unpack("<I", need(4))[0]).decode("utf-8"))
        n_entries = struct.unpack("<I", need(4))[0]
        tensors: dict[str, np.ndarray] = {}
        for _ in range(n_entries):
            name = need(struct.unpack("<I", need(4))[0]).decode("utf-8")
            rank = struct.unpack("<I", need(4))[0]
            dims = [struct.unpack("<I", need(4))[0] for _ in range(rank)]
            count = int(np.prod(dims)) if dims else 1
            arr = np.frombuffer(need(4 * count), dtype="<f4").reshape(dims)
            tensors[name] = arr.astype(np.float32)
    arch = ArchConfig(**meta.pop("arch"))
    params: dict[str, np.ndarray] = {}
    table = EmbeddingTable(dim_full=arch.embed_full, dim_corr=arch.embed_corr)
    extra: dict[str, np.ndarray] = {}
    for name, arr in tensors.items():
        kind, _, rest = name.partition("/")
        if kind == "param":
            params[rest] = arr
        elif kind == "embed_full":
            table.full[rest] = arr
        elif kind == "embed_corr":
            sid, _, oid = rest.partition("\x1f")
            table.corr[(sid, oid)] = arr
        elif kind == "extra":
            extra[rest] = arr
        else:
            raise InvalidInput(f"{path}: unknown tensor namespace {kind!r}")
    return DecoderParams(arch, params), table, meta, extra
