import numpy as np
import pytest

from gofa.autodiff import ShapeError, Tensor
from gofa.compressor import ModelConfig, ParamStore
from gofa.gnn import gnn_layer, init_gnn_layer, representation_change_ratio

from conftest import assert_grad_close, finite_difference


def tiny_cfg(**kw):
    base = dict(d_model=8, n_heads=2, n_layers=2, memory_tokens=3, gnn_layers=(1,), max_seq_len=32)
    base.update(kw)
    return ModelConfig(**base)


def make_params(cfg, seed=0, gates=0.0):
    store = ParamStore(dtype=cfg.dtype)
    params = init_gnn_layer(store, "g", cfg, np.random.default_rng(seed))
    params["gate_gnn"].data = np.asarray(gates, dtype=cfg.dtype)
    params["gate_ff"].data = np.asarray(gates, dtype=cfg.dtype)
    return params


def star_arcs(n_leaves):
    """Leaves 1..n all point at hub 0."""
    src = np.array([i + 1 for i in range(n_leaves)])
    dst = np.zeros(n_leaves, dtype=np.int64)
    return src, dst


def dense_oracle(src, dst, node_mem, edge_mem, params, cfg):
    """Straight-line computation of the attention-GNN formula, written
    independently with loops over nodes, heads and token indices."""
    n, k, d = node_mem.shape
    heads, dh = cfg.n_heads, cfg.head_dim
    eps = 1e-6

    def rms(x, gain):
        return x / np.sqrt(np.mean(x * x) + eps) * gain

    p = {name: t.data for name, t in params.items()}
    hn = np.stack([[rms(node_mem[i, t], p["norm_nodes"]) for t in range(k)] for i in range(n)])
    he = np.stack([[rms(edge_mem[e, t], p["norm_edges"]) for t in range(k)] for e in range(len(src))])

    out = np.zeros_like(node_mem)
    for i in range(n):
        in_arcs = [e for e in range(len(src)) if dst[e] == i]
        if not in_arcs:
            continue
        for t in range(k):
            q = (hn[i, t] @ p["wq"]).reshape(heads, dh)
            collected = np.zeros(d)
            for h in range(heads):
                logits = []
                values = []
                for e in in_arcs:
                    kk = (hn[src[e], t] @ p["wk_node"] + he[e, t] @ p["wk_edge"]).reshape(heads, dh)[h]
                    vv = (hn[src[e], t] @ p["wv_node"] + he[e, t] @ p["wv_edge"]).reshape(heads, dh)[h]
                    logits.append(q[h] @ kk / np.sqrt(dh))
                    values.append(vv)
                logits = np.array(logits)
                weights = np.exp(logits - logits.max())
                weights /= weights.sum()
                collected.reshape(heads, dh)[h] = sum(w * v for w, v in zip(weights, values))
            out[i, t] = collected @ p["wo"]

    g1, g2 = np.tanh(p["gate_gnn"]), np.tanh(p["gate_ff"])
    h1 = node_mem.copy()
    result = node_mem.copy()
    for i in range(n):
        if not any(dst == i):
            continue
        h1[i] = node_mem[i] + g1 * out[i]
        for t in range(k):
            hf = rms(h1[i, t], p["ff_norm"])
            z = hf @ p["ff1"]
            ff = (z * (1 / (1 + np.exp(-z)))) @ p["ff2"]
            result[i, t] = h1[i, t] + g2 * ff
    return result


class TestGateZero:
    def test_identity_at_initialization(self, rng):
        cfg = tiny_cfg()
        params = make_params(cfg, gates=0.0)
        src, dst = star_arcs(3)
        node_mem = Tensor(rng.normal(size=(4, 3, 8)))
        edge_mem = Tensor(rng.normal(size=(3, 3, 8)))
        out = gnn_layer(src, dst, node_mem, edge_mem, params, cfg)
        assert np.array_equal(out.data, node_mem.data)

    def test_gates_initialized_at_zero(self):
        cfg = tiny_cfg()
        params = make_params(cfg)
        assert params["gate_gnn"].data == 0.0
        assert params["gate_ff"].data == 0.0


class TestStructure:
    def test_single_node_no_edges_identity_object(self, rng):
        cfg = tiny_cfg()
        params = make_params(cfg, gates=0.7)
        node_mem = Tensor(rng.normal(size=(1, 3, 8)))
        edge_mem = Tensor(np.zeros((0, 3, 8)))
        out = gnn_layer(np.array([], dtype=np.int64), np.array([], dtype=np.int64), node_mem, edge_mem, params, cfg)
        assert out is node_mem

    def test_isolated_nodes_pass_through(self, rng):
        cfg = tiny_cfg()
        params = make_params(cfg, gates=0.9)
        src, dst = star_arcs(2)  # nodes 1,2 -> 0; node 3 isolated
        node_mem = Tensor(rng.normal(size=(4, 3, 8)))
        edge_mem = Tensor(rng.normal(size=(2, 3, 8)))
        out = gnn_layer(src, dst, node_mem, edge_mem, params, cfg)
        assert np.array_equal(out.data[3], node_mem.data[3])
        # leaves have no in-arcs either; only the hub changes
        assert np.array_equal(out.data[1], node_mem.data[1])
        assert not np.allclose(out.data[0], node_mem.data[0])

    def test_token_index_isolation(self, rng):
        # Perturbing a neighbor memory at index k changes the hub only at k.
        cfg = tiny_cfg()
        params = make_params(cfg, gates=0.8, seed=3)
        src, dst = star_arcs(3)
        node_mem = rng.normal(size=(4, 3, 8))
        edge_mem = rng.normal(size=(3, 3, 8))
        base = gnn_layer(src, dst, Tensor(node_mem), Tensor(edge_mem), params, cfg).data
        for k_idx in range(3):
            bumped = node_mem.copy()
            bumped[1, k_idx] += 0.5
            out = gnn_layer(src, dst, Tensor(bumped), Tensor(edge_mem), params, cfg).data
            other = [t for t in range(3) if t != k_idx]
            assert np.array_equal(base[0][other], out[0][other])
            assert not np.allclose(base[0, k_idx], out[0, k_idx])

    def test_edge_memories_not_updated(self, rng):
        # The layer returns node memories only; callers keep edge memories as-is.
        cfg = tiny_cfg()
        params = make_params(cfg, gates=0.5)
        src, dst = star_arcs(2)
        edge_mem = Tensor(rng.normal(size=(2, 3, 8)))
        before = edge_mem.data.copy()
        gnn_layer(src, dst, Tensor(rng.normal(size=(3, 3, 8))), edge_mem, params, cfg)
        assert np.array_equal(edge_mem.data, before)

    def test_attention_rows_sum_to_one(self, rng):
        cfg = tiny_cfg()
        params = make_params(cfg, gates=0.6, seed=9)
        src = np.array([1, 2, 3, 2, 0])
        dst = np.array([0, 0, 0, 1, 1])
        collected = []
        gnn_layer(src, dst, Tensor(rng.normal(size=(4, 3, 8))), Tensor(rng.normal(size=(5, 3, 8))),
                  params, cfg, collect_attention=collected)
        alpha, dst_out = collected[0]
        for node in (0, 1):
            rows = alpha[dst_out == node]  # [n_in, K, heads]
            assert np.all(np.abs(rows.sum(axis=0) - 1.0) < 1e-12)

    def test_shape_mismatch_error(self, rng):
        cfg = tiny_cfg()
        params = make_params(cfg)
        src, dst = star_arcs(2)
        with pytest.raises(ShapeError):
            gnn_layer(src, dst, Tensor(rng.normal(size=(3, 3, 8))), Tensor(rng.normal(size=(1, 3, 8))), params, cfg)


class TestDenseOracle:
    def test_star_matches_dense_computation(self, rng):
        cfg = tiny_cfg()
        params = make_params(cfg, seed=4, gates=0.43)
        src, dst = star_arcs(2)
        node_mem = rng.normal(size=(3, 3, 8))
        edge_mem = rng.normal(size=(2, 3, 8))
        fast = gnn_layer(src, dst, Tensor(node_mem), Tensor(edge_mem), params, cfg).data
        slow = dense_oracle(src, dst, node_mem, edge_mem, params, cfg)
        assert np.allclose(fast, slow, atol=1e-12)

    def test_random_graph_matches_dense(self, rng):
        cfg = tiny_cfg(d_model=12, n_heads=3)
        params = make_params(cfg, seed=6, gates=-0.3)
        src = np.array([0, 1, 2, 3, 3, 0])
        dst = np.array([1, 2, 3, 0, 1, 2])
        node_mem = rng.normal(size=(4, 3, 12))
        edge_mem = rng.normal(size=(6, 3, 12))
        fast = gnn_layer(src, dst, Tensor(node_mem), Tensor(edge_mem), params, cfg).data
        slow = dense_oracle(src, dst, node_mem, edge_mem, params, cfg)
        assert np.allclose(fast, slow, atol=1e-12)


class TestEquivariance:
    def test_permutation_equivariance(self, rng):
        cfg = tiny_cfg()
        params = make_params(cfg, seed=8, gates=0.51)
        src = np.array([0, 1, 2, 3, 1])
        dst = np.array([1, 2, 3, 0, 0])
        node_mem = rng.normal(size=(4, 3, 8))
        edge_mem = rng.normal(size=(5, 3, 8))
        out = gnn_layer(src, dst, Tensor(node_mem), Tensor(edge_mem), params, cfg).data

        perm = np.array([2, 0, 3, 1])  # new index of each old node
        out_p = gnn_layer(perm[src], perm[dst], Tensor(node_mem[np.argsort(perm)]),
                          Tensor(edge_mem), params, cfg).data
        assert np.allclose(out_p[perm], out, atol=1e-9)


class TestGradients:
    def test_full_layer_gradient_vs_fd(self, rng):
        cfg = tiny_cfg()
        params = make_params(cfg, seed=11, gates=0.37)
        src = np.array([0, 1, 2, 3])
        dst = np.array([1, 2, 3, 0])
        node_data = rng.normal(size=(4, 3, 8))
        edge_data = rng.normal(size=(4, 3, 8))
        upstream = rng.normal(size=(4, 3, 8))

        node_mem = Tensor(node_data, requires_grad=True)
        checked = [node_mem, params["wq"], params["wk_edge"], params["wv_node"],
                   params["gate_gnn"], params["gate_ff"], params["ff1"], params["norm_nodes"]]

        def build():
            return (gnn_layer(src, dst, node_mem, Tensor(edge_data), params, cfg) * Tensor(upstream)).sum()

        loss = build()
        loss.backward()
        grads = [t.grad.copy() for t in checked]
        for ti, c, fd in finite_difference(lambda: build().item(), checked, max_coords=6, rng=rng):
            assert_grad_close(grads[ti].reshape(-1)[c], fd, rel_tol=1e-4)


class TestChangeRatio:
    def test_identical_tensors(self, rng):
        q = rng.normal(size=(3, 4))
        assert representation_change_ratio(q, q) == 0.0

    def test_doubled_tensor(self, rng):
        q = rng.normal(size=(5, 2))
        assert abs(representation_change_ratio(2 * q, q) - 1.0) < 1e-12

    def test_random_pair_vs_independent_norms(self, rng):
        h = rng.normal(size=(4, 6))
        q = rng.normal(size=(4, 6))
        want = np.sqrt(((h - q) ** 2).sum()) / np.sqrt((q**2).sum())
        assert abs(representation_change_ratio(h, q) - want) < 1e-12

    def test_zero_reference_rejected(self):
        with pytest.raises(ZeroDivisionError):
            representation_change_ratio(np.ones((2, 2)), np.zeros((2, 2)))
