"""k-hop rooted subgraph extraction with per-hop caps.

Frontier expansion treats arcs as undirected. When a hop frontier exceeds
the cap, nodes are kept by seeded priority; caps are applied incrementally
(cap = 1, 2, ...) so that raising ``max_per_hop`` under the same seed only
ever adds nodes, never removes one kept at a smaller cap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tag import TAG, EdgeRecord, GraphError, NodeRecord

MAX_HOPS = 8


@dataclass
class SamplerConfig:
    hops: int = 3
    max_per_hop: int = 5
    rng_seed: int = 0

    def __post_init__(self):
        if not 0 <= self.hops <= MAX_HOPS:
            raise GraphError(f"hops must be in [0, {MAX_HOPS}], got {self.hops}")
        if self.max_per_hop < 1:
            raise GraphError(f"max_per_hop must be >= 1, got {self.max_per_hop}")


def _check_content_only(graph: TAG) -> None:
    if graph.prompt_nodes():
        raise GraphError("sampling expects a content-only graph; prompt nodes present")


def _priorities(graph: TAG, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).random(len(graph.nodes))


def _capped_layers(graph: TAG, roots: list[int], cfg: SamplerConfig) -> list[int]:
    """Kept node set for one BFS, grown one cap unit at a time per hop."""
    prio = _priorities(graph, cfg.rng_seed)
    adj = [graph.undirected_neighbors(i) for i in range(len(graph.nodes))]

    layers: list[set[int]] = [set(roots)]
    for _ in range(cfg.hops):
        layers.append(set())
    for cap in range(1, cfg.max_per_hop + 1):
        for hop in range(1, cfg.hops + 1):
            kept_before = set().union(*layers[:hop])
            frontier = set()
            for u in layers[hop - 1]:
                frontier |= adj[u]
            frontier -= kept_before | layers[hop]
            if frontier and len(layers[hop]) < cap:
                best = min(frontier, key=lambda v: (prio[v], v))
                layers[hop].add(best)
    kept = []
    for layer in layers:
        kept.extend(sorted(layer))
    return kept


def _induce(graph: TAG, kept: list[int]) -> tuple[TAG, dict[int, int]]:
    """Induced subgraph over ``kept``; keeps every arc with both ends kept."""
    old_to_new = {old: new for new, old in enumerate(kept)}
    sub = TAG(directed=graph.directed)
    for new, old in enumerate(kept):
        n = graph.nodes[old]
        sub.nodes.append(NodeRecord(id=new, text=n.text, node_id_tag=n.node_id_tag, kind=n.kind))
    for e in graph.edges:
        if e.src in old_to_new and e.dst in old_to_new:
            sub.edges.append(EdgeRecord(old_to_new[e.src], old_to_new[e.dst], e.text))
    sub.validate()
    index_map = {new: old for old, new in old_to_new.items()}
    return sub, index_map


def sample_node_subgraph(
    graph: TAG, root: int, cfg: SamplerConfig
) -> tuple[TAG, dict[int, int]]:
    """k-hop rooted subgraph around ``root``; returns it with an index map
    from subgraph node indices back to original indices."""
    graph.check_node(root)
    _check_content_only(graph)
    kept = _capped_layers(graph, [root], cfg)
    kept = [root] + [v for v in kept if v != root]
    return _induce(graph, kept)


def sample_link_subgraph(
    graph: TAG, u: int, v: int, cfg: SamplerConfig
) -> tuple[TAG, dict[int, int]]:
    """Union of the two independently sampled rooted subgraphs, with edges
    induced over the merged node set. Both roots come first in the result."""
    graph.check_node(u)
    graph.check_node(v)
    if u == v:
        raise GraphError(f"link sampling requires distinct roots, got {u} twice")
    _check_content_only(graph)
    kept_u = _capped_layers(graph, [u], cfg)
    kept_v = _capped_layers(graph, [v], cfg)
    merged = [u, v]
    for node in kept_u + kept_v:
        if node not in merged:
            merged.append(node)
    return _induce(graph, merged)
