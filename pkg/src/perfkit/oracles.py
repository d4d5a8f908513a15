"""Exhaustive reference computations for small instances."""
from __future__ import annotations

import math

import numpy as np


def monotone_paths(n: int, m: int):
    """Every path from (0, 0) to (n-1, m-1) with steps (1,0), (0,1), (1,1)."""
    def walk(i, j, prefix):
        prefix = prefix + [(i, j)]
        if (i, j) == (n - 1, m - 1):
            yield prefix
            return
        for di, dj in ((1, 1), (1, 0), (0, 1)):
            if i + di < n and j + dj < m:
                yield from walk(i + di, j + dj, prefix)
    yield from walk(0, 0, [])


def brute_force_dtw_cost(cost_matrix) -> float:
    """Minimum over all monotone paths, summing costs in path order."""
    cost_matrix = np.asarray(cost_matrix, dtype=float)
    best = math.inf
    for path in monotone_paths(*cost_matrix.shape):
        total = 0.0
        for i, j in path:
            total = total + cost_matrix[i, j]
        best = min(best, total)
    return best


def graph_paths(n_nodes: int, edges, source: int, target: int):
    succ = {u: [] for u in range(n_nodes)}
    for u, v, _ in edges:
        succ[u].append(v)

    def walk(u, prefix):
        if u == target:
            yield prefix
            return
        for v in succ[u]:
            yield from walk(v, prefix + [v])
    yield from walk(source, [source])


def best_melody_probability(g) -> float:
    """Largest summed note probability over all start-to-end paths of a melody graph."""
    best = -math.inf
    for path in graph_paths(len(g.nodes), g.edges, g.start, g.end):
        best = max(best, sum(g.nodes[v].probability for v in path[1:-1]))
    return best
