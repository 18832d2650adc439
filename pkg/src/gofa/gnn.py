"""Token-level transformer-convolution GNN over memory embeddings.

Message passing runs independently at each of the K memory-token indices:
node i attends over its in-neighbors j (arcs j->i) with logits
(Wq h_i) . (Wk_node h_j + Wk_edge h_e) / sqrt(d_head), aggregates values
Wv_node h_j + Wv_edge h_e, and applies an output projection. A tanh-gated
residual plus a tanh-gated feed-forward sublayer follow, both pre-normed,
so a freshly initialized layer (gates at 0) is an exact identity. Edge
memories are read but never updated here. Nodes with no in-neighbors pass
through untouched.
"""

from __future__ import annotations

import numpy as np

from .autodiff import ShapeError, Tensor, gather_rows, rms_norm, segment_sum
from .compressor import ModelConfig, ParamStore


def init_gnn_layer(store: ParamStore, prefix: str, cfg: ModelConfig, rng) -> dict:
    d, ff = cfg.d_model, cfg.d_model * cfg.ff_mult
    w = lambda: rng.normal(0.0, cfg.init_std, (d, d))
    return {
        "norm_nodes": store.add(f"{prefix}.norm_nodes", np.ones(d)),
        "norm_edges": store.add(f"{prefix}.norm_edges", np.ones(d)),
        "wq": store.add(f"{prefix}.wq", w()),
        "wk_node": store.add(f"{prefix}.wk_node", w()),
        "wk_edge": store.add(f"{prefix}.wk_edge", w()),
        "wv_node": store.add(f"{prefix}.wv_node", w()),
        "wv_edge": store.add(f"{prefix}.wv_edge", w()),
        "wo": store.add(f"{prefix}.wo", w()),
        "gate_gnn": store.add(f"{prefix}.gate_gnn", np.zeros(())),
        "gate_ff": store.add(f"{prefix}.gate_ff", np.zeros(())),
        "ff_norm": store.add(f"{prefix}.ff_norm", np.ones(d)),
        "ff1": store.add(f"{prefix}.ff1", rng.normal(0.0, cfg.init_std, (d, ff))),
        "ff2": store.add(f"{prefix}.ff2", rng.normal(0.0, cfg.init_std, (ff, d))),
    }


def gnn_layer(
    src: np.ndarray,
    dst: np.ndarray,
    node_mem: Tensor,
    edge_mem: Tensor,
    params: dict,
    cfg: ModelConfig,
    collect_attention: list | None = None,
) -> Tensor:
    """One message-passing layer.

    ``src``/``dst`` are arc endpoint arrays; ``node_mem`` is [N, K, d] and
    ``edge_mem`` [E, K, d] (one row block per arc, already expanded from any
    shared text). Returns the updated [N, K, d] node memories.
    """
    n_nodes, k, d = node_mem.shape
    n_edges = len(src)
    if n_edges == 0:
        return node_mem
    if edge_mem.shape != (n_edges, k, d):
        raise ShapeError(f"edge memories {edge_mem.shape} do not match {n_edges} arcs of [{k}, {d}]")
    heads, dh = cfg.n_heads, cfg.head_dim
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)

    hn = rms_norm(node_mem, params["norm_nodes"])
    he = rms_norm(edge_mem, params["norm_edges"])

    def to_heads(t: Tensor, rows: int) -> Tensor:
        return t.reshape(rows, k, heads, dh)

    q = to_heads(gather_rows(hn @ params["wq"], dst), n_edges)
    h_src = gather_rows(hn, src)
    key = to_heads(h_src @ params["wk_node"] + he @ params["wk_edge"], n_edges)
    val = to_heads(h_src @ params["wv_node"] + he @ params["wv_edge"], n_edges)

    logits = (q * key).sum(axis=-1) * (1.0 / np.sqrt(dh))  # [E, K, heads]

    # Segment softmax over each destination's in-arcs; the max shift is a
    # constant, so gradients of the normalized weights stay exact.
    shift = np.full((n_nodes, k, heads), -np.inf, dtype=logits.dtype)
    np.maximum.at(shift, dst, logits.data)
    num = (logits - Tensor(shift[dst], dtype=logits.dtype)).exp()
    denom = segment_sum(num, dst, n_nodes)
    alpha = num / gather_rows(denom, dst)  # [E, K, heads]
    if collect_attention is not None:
        collect_attention.append((alpha.data.copy(), dst.copy()))

    weighted = val * alpha.reshape(n_edges, k, heads, 1)
    agg = segment_sum(weighted, dst, n_nodes).reshape(n_nodes, k, d)
    out = agg @ params["wo"]

    has_in = np.zeros((n_nodes, 1, 1), dtype=node_mem.dtype)
    has_in[np.unique(dst)] = 1.0
    mask = Tensor(has_in, dtype=node_mem.dtype)

    h1 = node_mem + (params["gate_gnn"].tanh() * out) * mask
    hf = rms_norm(h1, params["ff_norm"])
    ff_out = (hf @ params["ff1"]).silu() @ params["ff2"]
    return h1 + (params["gate_ff"].tanh() * ff_out) * mask


def representation_change_ratio(h, q) -> float:
    """Relative perturbation a GNN layer applied: ||H - Q||_F / ||Q||_F."""
    h = h.data if isinstance(h, Tensor) else np.asarray(h)
    q = q.data if isinstance(q, Tensor) else np.asarray(q)
    if h.shape != q.shape:
        raise ShapeError(f"shape mismatch {h.shape} vs {q.shape}")
    q_norm = float(np.linalg.norm(q))
    if q_norm == 0.0:
        raise ZeroDivisionError("representation_change_ratio undefined for a zero reference")
    return float(np.linalg.norm(h - q) / q_norm)
