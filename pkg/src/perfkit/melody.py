"""Melody line extraction from symbolic scores.

Per-note melody probabilities come from a probability piano roll (median over the
note's cells). A per-piece threshold is found by splitting the probabilities into
two single-linkage clusters. The retained notes form a DAG whose longest
probability path, found by Bellman-Ford on negated weights, is a strictly
monophonic melody.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import DataError, NoteList, PianoRoll, covered_cells

SCORE_CELLS_PER_BEAT = 8
OMEGA_PROBABILITY = -0.5
DEFAULT_SALIENCY_ITERS = 30000
DEFAULT_RECTS_PER_ITER = 5


def skyline(notes: NoteList) -> np.ndarray:
    """True for notes with no strictly higher pitch sounding at their onset."""
    onsets, offsets, pitches = notes.onsets, notes.offsets, notes.pitches
    labels = np.ones(len(notes), dtype=bool)
    for i in range(len(notes)):
        sounding = (onsets <= onsets[i]) & (offsets > onsets[i])
        labels[i] = not np.any(pitches[sounding] > pitches[i])
    return labels


def note_probabilities(prob_roll: PianoRoll, notes: NoteList) -> np.ndarray:
    """Median of each note's cells in a probability roll; even counts average the middle pair."""
    values = np.asarray(prob_roll.values, dtype=float)
    probs = np.empty(len(notes))
    for i, note in enumerate(notes):
        start, stop = covered_cells(note.onset, note.offset, prob_roll.cell_duration)
        stop = min(stop, values.shape[1])
        if stop <= start:
            raise DataError(f"note {i} covers no cell of the probability roll")
        probs[i] = np.median(values[note.pitch, start:stop])
    return probs


def cluster_threshold(probs) -> float:
    """Largest value of the lower of two single-linkage clusters.

    In one dimension the two-cluster cut is the widest gap between sorted
    distinct values; equal-width gaps resolve to the lowest one. Fewer than two
    distinct values gives ``-inf`` so every note is retained.
    """
    values = np.unique(np.asarray(probs, dtype=float))
    if len(values) < 2:
        return -np.inf
    cut = int(np.argmax(np.diff(values)))
    return float(values[cut])


@dataclass(frozen=True)
class MeloNode:
    onset: float
    end: float
    probability: float
    note_index: int  # -1 for the start and end nodes


@dataclass(frozen=True, eq=False)
class MeloDigraph:
    nodes: tuple
    edges: tuple  # (u, v, weight)
    notes: NoteList

    @property
    def start(self) -> int:
        return 0

    @property
    def end(self) -> int:
        return len(self.nodes) - 1

    def successors(self, u: int):
        return [(v, w) for a, v, w in self.edges if a == u]


def build_melo_digraph(notes: NoteList, probs, threshold: float) -> MeloDigraph:
    """Build the melody DAG.

    Notes strictly above ``threshold`` become nodes. From every node, edges go to
    the candidates with the smallest onset not earlier than its end time, and only
    to those whose probability is at least ``threshold``; the end node is always
    accepted.
    """
    probs = np.asarray(probs, dtype=float)
    if len(probs) != len(notes):
        raise DataError("probabilities and notes differ in length")
    nodes = [MeloNode(-np.inf, 0.0, 0.0, -1)]
    for i, (note, p) in enumerate(zip(notes, probs)):
        if p > threshold:
            nodes.append(MeloNode(note.onset, note.offset, float(p), i))
    nodes.append(MeloNode(np.inf, np.inf, OMEGA_PROBABILITY, -1))
    omega = len(nodes) - 1
    onsets = np.array([n.onset for n in nodes])

    edges = []
    for u, node in enumerate(nodes[:-1]):
        cand = np.flatnonzero(onsets[1:] >= node.end) + 1
        if len(cand) == 0:
            continue
        first = onsets[cand].min()
        for v in cand[onsets[cand] == first]:
            v = int(v)
            if v == omega or nodes[v].probability >= threshold:
                edges.append((u, v, -nodes[v].probability))
    return MeloDigraph(tuple(nodes), tuple(edges), notes)


def bellman_ford(n_nodes: int, edges, source: int):
    """Single-source shortest distances and predecessors; raises on a negative cycle."""
    dist = np.full(n_nodes, np.inf)
    pred = np.full(n_nodes, -1, dtype=int)
    dist[source] = 0.0
    for _ in range(n_nodes - 1):
        changed = False
        for u, v, w in edges:
            if dist[u] + w < dist[v]:
                dist[v] = dist[u] + w
                pred[v] = u
                changed = True
        if not changed:
            break
    else:
        for u, v, w in edges:
            if dist[u] + w < dist[v]:
                raise DataError("graph has a negative cycle")
    return dist, pred


def melody_path(g: MeloDigraph) -> list[int]:
    """Node ids of the shortest start-to-end path, empty if the end is unreachable."""
    _, pred = bellman_ford(len(g.nodes), g.edges, g.start)
    if g.end != g.start and pred[g.end] < 0:
        return []
    path = [g.end]
    while path[-1] != g.start:
        path.append(int(pred[path[-1]]))
    return path[::-1]


def extract_monophonic(g: MeloDigraph) -> NoteList:
    path = melody_path(g)
    return NoteList(g.notes[g.nodes[v].note_index] for v in path[1:-1])


def extract_melody(notes: NoteList, probs, method: str = "graph") -> NoteList:
    if method == "skyline":
        return NoteList(n for n, keep in zip(notes, skyline(notes)) if keep)
    if method == "threshold":
        thr = cluster_threshold(probs)
        return NoteList(n for n, p in zip(notes, probs) if p > thr)
    if method == "graph":
        return extract_monophonic(build_melo_digraph(notes, probs, cluster_threshold(probs)))
    raise DataError(f"unknown melody method {method!r}")


def pitch_height_predictor(roll: np.ndarray) -> np.ndarray:
    """Stand-in melody model: in each column, active cells scale with their pitch rank.

    The highest active pitch gets 1 and the lowest ``1 / (span + 1)``, where span
    is the pitch distance between them.
    """
    roll = np.asarray(roll)
    active = roll != 0
    out = np.zeros(roll.shape, dtype=float)
    rows = np.arange(roll.shape[0])[:, None]
    has = active.any(axis=0)
    if not has.any():
        return out
    lo = np.where(active, rows, roll.shape[0]).min(axis=0)
    hi = np.where(active, rows, -1).max(axis=0)
    span = (hi - lo + 1).astype(float)
    span[~has] = 1.0
    out[active] = ((rows - lo + 1) / span)[active]
    return out


@dataclass(frozen=True)
class QueryRegion:
    n_start: tuple
    n_end: tuple

    def bounds(self, shape) -> tuple[int, int, int, int]:
        r0, r1 = sorted((self.n_start[0], self.n_end[0]))
        c0, c1 = sorted((self.n_start[1], self.n_end[1]))
        if r0 < 0 or c0 < 0 or r1 >= shape[0] or c1 >= shape[1]:
            raise DataError(f"query region {self} outside roll of shape {shape}")
        return r0, r1 + 1, c0, c1 + 1

    def area(self) -> int:
        return (abs(self.n_end[0] - self.n_start[0]) + 1) * (abs(self.n_end[1] - self.n_start[1]) + 1)


def saliency_map(predictor: Callable[[np.ndarray], np.ndarray], roll, query: QueryRegion,
                 n_iters: int = DEFAULT_SALIENCY_ITERS, rects_per_iter: int = DEFAULT_RECTS_PER_ITER,
                 rng: np.random.Generator | None = None) -> np.ndarray:
    """Occlusion saliency of every note cell towards the prediction on ``query``.

    Each iteration zeroes ``rects_per_iter`` random rectangles (sides uniform in
    ``[1, dim // 4]``) and measures the mean prediction drop over the query
    region. The drop is credited to the note cells that were zeroed; iterations
    touching the query are discarded. Each cell's total is divided by the number
    of times it was zeroed.
    """
    values = np.asarray(roll.values if isinstance(roll, PianoRoll) else roll, dtype=float)
    n_rows, n_cols = values.shape
    qr0, qr1, qc0, qc1 = query.bounds(values.shape)
    area = (qr1 - qr0) * (qc1 - qc0)
    rng = np.random.default_rng() if rng is None else rng

    saliency = np.zeros(values.shape)
    counts = np.zeros(values.shape)
    if n_iters <= 0:
        return saliency
    base = np.asarray(predictor(values), dtype=float)
    if base.shape != values.shape:
        raise DataError(f"predictor returned shape {base.shape}, expected {values.shape}")

    max_h, max_w = max(1, n_rows // 4), max(1, n_cols // 4)
    heights = rng.integers(1, max_h + 1, size=(n_iters, rects_per_iter))
    widths = rng.integers(1, max_w + 1, size=(n_iters, rects_per_iter))
    rows0 = np.floor(rng.random((n_iters, rects_per_iter)) * (n_rows - heights + 1)).astype(int)
    cols0 = np.floor(rng.random((n_iters, rects_per_iter)) * (n_cols - widths + 1)).astype(int)
    notes_mask = values != 0

    for it in range(n_iters):
        mask = np.zeros(values.shape, dtype=bool)
        for k in range(rects_per_iter):
            r, c = rows0[it, k], cols0[it, k]
            mask[r:r + heights[it, k], c:c + widths[it, k]] = True
        if mask[qr0:qr1, qc0:qc1].any():
            continue
        occluded = values.copy()
        occluded[mask] = 0.0
        pred = np.asarray(predictor(occluded), dtype=float)
        if pred.shape != values.shape:
            raise DataError(f"predictor returned shape {pred.shape}, expected {values.shape}")
        d = (base[qr0:qr1, qc0:qc1] - pred[qr0:qr1, qc0:qc1]).sum() / area
        hit = mask & notes_mask
        saliency[hit] += d
        counts[hit] += 1
    return np.divide(saliency, counts, out=np.zeros_like(saliency), where=counts > 0)
