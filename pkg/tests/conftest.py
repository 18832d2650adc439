"""Shared test helpers: independent oracles and a finite-difference checker.

The oracles here are deliberately naive reimplementations (exhaustive DFS,
dense loops) kept separate from the library code paths they check.
"""

from __future__ import annotations

import numpy as np
import pytest

from gofa.tag import TAG


def random_tag(rng, n_nodes: int, edge_prob: float = 0.25, with_text: bool = True) -> TAG:
    g = TAG()
    for i in range(n_nodes):
        g.add_node(text=f"node number {i} text" if with_text else "")
    for u in range(n_nodes):
        for v in range(u + 1, n_nodes):
            if rng.random() < edge_prob:
                g.add_undirected_edge(u, v, "")
    return g


def undirected_adj(graph: TAG) -> dict[int, set[int]]:
    adj = {i: set() for i in range(graph.n_nodes())}
    prompt = [n.is_prompt() for n in graph.nodes]
    for e in graph.edges:
        if e.src != e.dst and not prompt[e.src] and not prompt[e.dst]:
            adj[e.src].add(e.dst)
            adj[e.dst].add(e.src)
    return adj


def brute_force_distance(graph: TAG, src: int) -> dict[int, int]:
    """Plain BFS distances, written independently of the library."""
    adj = undirected_adj(graph)
    dist = {src: 0}
    queue = [src]
    while queue:
        u = queue.pop(0)
        for v in sorted(adj[u]):
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def brute_force_all_paths(graph: TAG, src: int, dst: int, max_len: int) -> list[list[int]]:
    """Exhaustive DFS enumeration of simple paths up to max_len edges."""
    adj = undirected_adj(graph)
    out = []

    def walk(path):
        head = path[-1]
        if head == dst:
            out.append(list(path))
            return
        if len(path) - 1 >= max_len:
            return
        for nxt in sorted(adj[head]):
            if nxt not in path:
                walk(path + [nxt])

    walk([src])
    return out


def finite_difference(f, tensors: list, h: float = 1e-5, max_coords: int | None = None, rng=None):
    """Central finite differences of scalar-valued ``f`` w.r.t. raw arrays.

    Yields (tensor index, coordinate, fd value). ``f`` must recompute the
    scalar from the tensors' current ``.data`` on every call.
    """
    for ti, t in enumerate(tensors):
        flat = t.data.reshape(-1)
        coords = range(flat.size)
        if max_coords is not None and flat.size > max_coords:
            picker = rng if rng is not None else np.random.default_rng(0)
            coords = picker.choice(flat.size, size=max_coords, replace=False)
        for c in coords:
            old = flat[c]
            flat[c] = old + h
            up = f()
            flat[c] = old - h
            down = f()
            flat[c] = old
            yield ti, int(c), (up - down) / (2 * h)


def assert_grad_close(analytic: float, fd: float, rel_tol: float = 1e-4, abs_floor: float = 1e-7):
    scale = max(abs(analytic), abs(fd), abs_floor)
    assert abs(analytic - fd) / scale < rel_tol, f"grad mismatch: analytic {analytic} vs fd {fd}"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
