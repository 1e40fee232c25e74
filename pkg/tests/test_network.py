import numpy as np
import pytest

from fcp.errors import InvalidInput, StateError
from fcp.network import (ArchConfig, EmbeddingTable, TwoBranchSDF, init_params,
                         load_checkpoint, save_checkpoint)

SMALL = ArchConfig(hidden=32, layers=4, embed_full=16, embed_corr=16,
                   mapper_hidden=24, mapper_layers=3, dtype="float64")


def reference_forward_low(params, arch, e_full, e_corr, queries):
    """Independent re-implementation with explicit loops (test oracle)."""
    e = np.concatenate([e_full, e_corr]).astype(np.float64)
    h = e
    for i in range(arch.mapper_layers):
        W = params[f"map_low_L{i}_W"]
        b = params[f"map_low_L{i}_b"]
        z = np.array([sum(h[k] * W[k, j] for k in range(len(h))) + b[j]
                      for j in range(W.shape[1])])
        h = np.maximum(z, 0.0)
    outs = []
    for q in queries:
        x0 = np.concatenate([q, h])
        x = x0
        for i in range(arch.layers):
            W = params[f"dec_low_L{i}_W"]
            b = params[f"dec_low_L{i}_b"]
            inp = np.concatenate([x, x0]) if i == arch.skip_at else x
            z = inp @ W + b
            x = np.maximum(z, 0.0) if i < arch.layers - 1 else z
        outs.append(x[0])
    return np.asarray(outs)


def test_forward_low_matches_reference_oracle():
    params, _ = init_params(SMALL, seed=12)
    rng = np.random.default_rng(0)
    e_full = rng.standard_normal(16)
    e_corr = rng.standard_normal(16)
    queries = rng.uniform(-1, 1, (5, 3))
    net = TwoBranchSDF(params)
    fast = net.forward_low(e_full, e_corr, queries)
    ref = reference_forward_low(params.params, SMALL, e_full, e_corr, queries)
    assert np.allclose(fast, ref, rtol=0, atol=1e-6)


def test_forward_collapses_to_bias_with_zero_weights():
    params, _ = init_params(SMALL, seed=0)
    for name in params.params:
        params.params[name][:] = 0.0
    params.params[f"dec_low_L{SMALL.layers - 1}_b"][:] = 2.5
    params.params[f"dec_full_L{SMALL.layers - 1}_b"][:] = -1.25
    net = TwoBranchSDF(params)
    q = np.random.default_rng(1).uniform(-1, 1, (7, 3))
    e = np.ones(16)
    assert np.array_equal(net.forward_low(e, e, q), np.full(7, 2.5))
    assert np.array_equal(net.forward_full(e, q), np.full(7, -1.25))


def test_permuting_batch_permutes_outputs():
    params, _ = init_params(SMALL, seed=3)
    rng = np.random.default_rng(4)
    e = rng.standard_normal(16)
    q = rng.uniform(-1, 1, (20, 3))
    perm = rng.permutation(20)
    net = TwoBranchSDF(params)
    out = net.forward_full(e, q)
    out_perm = net.forward_full(e, q[perm])
    assert np.array_equal(out[perm], out_perm)


def test_forward_deterministic_bitwise():
    params, _ = init_params(SMALL, seed=5)
    rng = np.random.default_rng(6)
    e = rng.standard_normal(16)
    q = rng.uniform(-1, 1, (64, 3))
    net = TwoBranchSDF(params)
    assert np.array_equal(net.forward_full(e, q), net.forward_full(e, q))


def test_full_branch_blind_to_corruption_embedding():
    params, table = init_params(SMALL, seed=7, shape_ids=("s",),
                                observation_ids={"s": ("3",)})
    net = TwoBranchSDF(params)
    q = np.random.default_rng(8).uniform(-1, 1, (16, 3))
    e_full = table.full["s"]
    out1 = net.forward_full(e_full, q)
    table.corr[("s", "3")][:] = 99.0  # mutate the corruption embedding
    out2 = net.forward_full(e_full, q)
    assert np.array_equal(out1, out2)


def test_shared_identity_embedding_object():
    params, table = init_params(SMALL, seed=9, shape_ids=("s",),
                                observation_ids={"s": ("3", "10")})
    # one e_full object serves every observation of the shape: mutations
    # through one view are visible through the other
    view_a = table.full["s"]
    view_b = table.full["s"]
    assert view_a is view_b
    view_a[0] = 123.0
    assert table.full["s"][0] == 123.0


def _find_kink_free(arch, margin=2e-3, n_queries=8):
    for seed in range(500):
        params, _ = init_params(arch, seed=seed)
        rng = np.random.default_rng(seed + 1000)
        e_full = rng.standard_normal(arch.embed_full)
        e_corr = rng.standard_normal(arch.embed_corr)
        queries = rng.uniform(-1, 1, (n_queries, 3))
        net = TwoBranchSDF(params)
        net.forward_low(e_full, e_corr, queries)
        net.forward_full(e_full, queries)
        mins = []
        for cache in (net._cache_low, net._cache_full):
            m_cache, d_cache = cache
            mins += [np.abs(z).min() for z in m_cache[1]]
            mins += [np.abs(z).min() for z in d_cache[2]]
        if min(mins) > margin:
            return params, e_full, e_corr, queries
    raise RuntimeError("no kink-free configuration found")


def test_backward_matches_central_finite_differences():
    # pre-activations clear the step size, so finite differences are valid
    params, e_full, e_corr, queries = _find_kink_free(SMALL)
    rng = np.random.default_rng(99)
    tgt_l = rng.standard_normal(len(queries))
    tgt_f = rng.standard_normal(len(queries))
    net = TwoBranchSDF(params)

    def loss():
        s_l = net.forward_low(e_full, e_corr, queries)
        s_f = net.forward_full(e_full, queries)
        return float(np.mean((s_l - tgt_l) ** 2) + np.mean((s_f - tgt_f) ** 2)), s_l, s_f

    _, s_l, s_f = loss()
    n = len(queries)
    g = net.backward(grad_low=2 * (s_l - tgt_l) / n, grad_full=2 * (s_f - tgt_f) / n)

    h = 1e-4
    worst = 0.0
    for name, arr in params.params.items():
        flat = arr.ravel()
        analytic = g.params[name].ravel()
        for i in rng.choice(flat.size, size=min(12, flat.size), replace=False):
            old = flat[i]
            flat[i] = old + h
            up, _, _ = loss()
            flat[i] = old - h
            dn, _, _ = loss()
            flat[i] = old
            fd = (up - dn) / (2 * h)
            worst = max(worst, abs(analytic[i] - fd) / max(abs(analytic[i]), abs(fd), 1e-8))
    for vec, analytic in ((e_full, g.e_full), (e_corr, g.e_corr)):
        for i in range(len(vec)):
            old = vec[i]
            vec[i] = old + h
            up, _, _ = loss()
            vec[i] = old - h
            dn, _, _ = loss()
            vec[i] = old
            fd = (up - dn) / (2 * h)
            worst = max(worst, abs(analytic[i] - fd) / max(abs(analytic[i]), abs(fd), 1e-8))
    assert worst < 1e-4


def test_zero_loss_grads_give_zero_gradients():
    params, _ = init_params(SMALL, seed=2)
    net = TwoBranchSDF(params)
    rng = np.random.default_rng(3)
    e = rng.standard_normal(16)
    q = rng.uniform(-1, 1, (6, 3))
    net.forward_low(e, e, q)
    net.forward_full(e, q)
    g = net.backward(grad_low=np.zeros(6), grad_full=np.zeros(6))
    assert all(not v.any() for v in g.params.values())
    assert not g.e_full.any() and not g.e_corr.any()


def test_embedding_gradient_is_sum_over_queries():
    params, _ = init_params(SMALL, seed=4)
    net = TwoBranchSDF(params)
    rng = np.random.default_rng(5)
    e = rng.standard_normal(16)
    q = rng.uniform(-1, 1, (5, 3))
    grad_out = rng.standard_normal(5)
    net.forward_full(e, q)
    batch_grad = net.backward(grad_full=grad_out).e_full
    single_sum = np.zeros_like(batch_grad)
    for i in range(5):
        net.forward_full(e, q[i:i + 1])
        single_sum += net.backward(grad_full=grad_out[i:i + 1]).e_full
    assert np.allclose(batch_grad, single_sum, rtol=1e-10, atol=1e-12)


def test_backward_requires_forward():
    params, _ = init_params(SMALL, seed=1)
    net = TwoBranchSDF(params)
    with pytest.raises(StateError):
        net.backward(grad_low=np.zeros(3))


def test_init_deterministic_and_shaped():
    a, _ = init_params(SMALL, seed=21)
    b, _ = init_params(SMALL, seed=21)
    assert set(a.params) == set(b.params)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert a.params["dec_low_L1_W"].shape == (32, 32)
    assert a.params["dec_low_L0_W"].shape == (SMALL.decoder_in, 32)
    skip = SMALL.skip_at
    assert a.params[f"dec_low_L{skip}_W"].shape == (32 + SMALL.decoder_in, 32)
    assert a.params[f"dec_low_L{SMALL.layers - 1}_W"].shape == (32, 1)
    assert a.params["map_low_L0_W"].shape == (32, 24)


def test_embedding_init_std():
    # >10k embedding entries drawn at std 0.01 land within 10%
    arch = ArchConfig(hidden=16, layers=2, embed_full=128, embed_corr=128,
                      mapper_hidden=8, mapper_layers=1, dtype="float32")
    ids = tuple(f"s{i}" for i in range(80))
    _, table = init_params(arch, seed=3, shape_ids=ids)
    values = np.concatenate([table.full[s] for s in ids])
    assert len(values) >= 10_000
    assert abs(values.std() - 0.01) < 0.001


def test_nan_embedding_rejected():
    params, _ = init_params(SMALL, seed=0)
    net = TwoBranchSDF(params)
    e = np.full(16, np.nan)
    with pytest.raises(InvalidInput):
        net.forward_full(e, np.zeros((2, 3)))


def test_checkpoint_roundtrip(tmp_path):
    arch = ArchConfig(hidden=16, layers=4, embed_full=8, embed_corr=8,
                      mapper_hidden=8, mapper_layers=2, dtype="float32")
    params, table = init_params(arch, seed=11, shape_ids=("a", "b"),
                                observation_ids={"a": ("3",), "b": ("5", "10")})
    extra = {"counter": np.asarray(7.0, dtype=np.float32)}
    path = tmp_path / "model.fcpc"
    save_checkpoint(path, params, table, metadata={"note": 1}, extra_tensors=extra)
    p2, t2, meta, ex2 = load_checkpoint(path)
    assert meta["note"] == 1
    assert p2.arch == arch
    assert all(np.array_equal(p2.params[k], params.params[k]) for k in params.params)
    assert set(t2.full) == {"a", "b"}
    assert np.array_equal(t2.corr[("b", "10")], table.corr[("b", "10")])
    assert float(ex2["counter"]) == 7.0
    # reserialize: byte-identical container
    path2 = tmp_path / "model2.fcpc"
    save_checkpoint(path2, p2, t2, metadata={"note": 1}, extra_tensors=ex2)
    assert path.read_bytes() == path2.read_bytes()


def test_checkpoint_rejects_float64(tmp_path):
    params, table = init_params(SMALL, seed=0)
    with pytest.raises(InvalidInput):
        save_checkpoint(tmp_path / "m.fcpc", params, table)
