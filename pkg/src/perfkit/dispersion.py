"""Max-min p-dispersion selection.

The heuristics partition the points into p Ward clusters and keep one point per
cluster:

* A: farthest from the centroid of all other points in the dataset
* B: largest minimum distance to the other clusters' centroids
* C: largest minimum distance to the points of the other clusters
* D: largest minimum distance to every other point

Ties always go to the lowest index.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.cluster.hierarchy import cut_tree, linkage
from scipy.spatial.distance import cdist, pdist

from .core import DataError

METRICS = {"euclidean": "euclidean", "cityblock": "cityblock"}
METHODS = ("A", "B", "C", "D")
DEFAULT_BUDGET = 2_000_000


@dataclass(frozen=True, eq=False)
class PointSet:
    points: np.ndarray
    distance: str = "euclidean"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise DataError("points must form a non-empty n x d matrix")
        if not np.all(np.isfinite(pts)):
            raise DataError("points must be finite")
        if self.distance not in METRICS:
            raise DataError(f"unknown distance {self.distance!r}")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    def dist(self, a, b) -> np.ndarray:
        return cdist(np.atleast_2d(a), np.atleast_2d(b), METRICS[self.distance])


@dataclass(frozen=True)
class DispersionResult:
    selected: tuple
    min_dist: float

    def to_dict(self) -> dict:
        return {"selected": list(self.selected), "min_dist": self.min_dist}


def min_pairwise(ps: PointSet, idx) -> float:
    idx = list(idx)
    if len(idx) < 2:
        return math.inf
    return float(pdist(ps.points[idx], METRICS[ps.distance]).min())


def _relabel(labels) -> np.ndarray:
    """Number clusters by first appearance so labels are stable."""
    _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.argsort(np.argsort(first))
    return rank[inverse]


def ward_cluster(ps: PointSet, k: int) -> np.ndarray:
    """Agglomerative Ward clustering cut at exactly ``k`` clusters."""
    n = len(ps)
    if not 1 <= k <= n:
        raise DataError(f"k must lie in [1, {n}], got {k}")
    if n == 1:
        return np.zeros(1, dtype=int)
    tree = linkage(ps.points, method="ward")
    return _relabel(cut_tree(tree, n_clusters=k).ravel())


def _pick(scores, members) -> int:
    # argmax returns the first maximum; members are sorted ascending
    return int(members[int(np.argmax(scores))])


def select_dispersed(ps: PointSet, p: int, method: str = "A", exclude_cluster: bool = False) -> DispersionResult:
    """Ward-cluster into ``p`` groups and keep one point per group.

    With ``exclude_cluster`` Method A measures against the centroid of the points
    outside the candidate's cluster instead of all points but the candidate.
    """
    n = len(ps)
    if not 2 <= p <= n:
        raise DataError(f"p must lie in [2, {n}], got {p}")
    if method not in METHODS:
        raise DataError(f"unknown method {method!r}")
    pts = ps.points
    labels = ward_cluster(ps, p)
    centroids = np.array([pts[labels == c].mean(axis=0) for c in range(p)])
    total = pts.sum(axis=0)
    selected = []
    for c in range(p):
        members = np.flatnonzero(labels == c)
        others = np.flatnonzero(labels != c)
        if method == "A":
            if exclude_cluster:
                ref = pts[others].mean(axis=0)
                scores = ps.dist(pts[members], ref).ravel()
            else:
                # centroid of the dataset without the candidate itself
                refs = (total - pts[members]) / (n - 1)
                scores = np.array([ps.dist(pts[m], r)[0, 0] for m, r in zip(members, refs)])
        elif method == "B":
            other_c = np.delete(centroids, c, axis=0)
            scores = ps.dist(pts[members], other_c).min(axis=1)
        elif method == "C":
            scores = ps.dist(pts[members], pts[others]).min(axis=1)
        else:
            d = ps.dist(pts[members], pts)
            d[np.arange(len(members)), members] = np.inf
            scores = d.min(axis=1)
        selected.append(_pick(scores, members))
    selected = tuple(sorted(selected))
    return DispersionResult(selected, min_pairwise(ps, selected))


def brute_force_pdispersion(ps: PointSet, p: int, budget: int = DEFAULT_BUDGET) -> DispersionResult:
    """Exact max-min subset; ties resolve to the lexicographically smallest index set."""
    n = len(ps)
    if not 2 <= p <= n:
        raise DataError(f"p must lie in [2, {n}], got {p}")
    if math.comb(n, p) > budget:
        raise DataError(f"C({n}, {p}) = {math.comb(n, p)} subsets exceeds budget {budget}")
    dmat = cdist(ps.points, ps.points, METRICS[ps.distance])
    best, best_val = None, -math.inf
    for combo in itertools.combinations(range(n), p):
        sub = dmat[np.ix_(combo, combo)]
        val = sub[np.triu_indices(p, 1)].min()
        if val > best_val:
            best, best_val = combo, val
    return DispersionResult(tuple(best), float(best_val))


def medoid(ps: PointSet) -> int:
    totals = cdist(ps.points, ps.points, METRICS[ps.distance]).sum(axis=1)
    return int(np.argmin(totals))


def robin_hood(assignment, ps: PointSet, t: int, centroids=None) -> np.ndarray:
    """Move points from rich clusters (size > t) into poor ones (size < t).

    Each poor cluster receives, one at a time, the rich-cluster point nearest its
    current centroid (``centroids[c]`` when it is empty). Stops once no cluster is
    poor or no rich donor remains.
    """
    if t < 1:
        raise DataError("target cardinality must be at least 1")
    labels = np.array(assignment, dtype=int, copy=True)
    pts = ps.points
    k = int(labels.max()) + 1 if centroids is None else len(centroids)
    while True:
        sizes = np.bincount(labels, minlength=k)
        poor = np.flatnonzero(sizes < t)
        rich = np.flatnonzero(sizes > t)
        if len(poor) == 0 or len(rich) == 0:
            return labels
        moved = False
        for c in poor:
            sizes = np.bincount(labels, minlength=k)
            if sizes[c] >= t:
                continue
            donors = np.flatnonzero(np.isin(labels, np.flatnonzero(sizes > t)))
            if len(donors) == 0:
                return labels
            if sizes[c] > 0:
                centre = pts[labels == c].mean(axis=0)
            elif centroids is not None:
                centre = np.asarray(centroids[c], dtype=float)
            else:
                continue
            nearest = donors[int(np.argmin(ps.dist(pts[donors], centre).ravel()))]
            labels[nearest] = c
            moved = True
        if not moved:
            return labels


@dataclass(frozen=True, eq=False)
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    inertia_history: tuple

    @property
    def inertia(self) -> float:
        return self.inertia_history[-1]


def _kmeanspp(pts, k, rng):
    n = len(pts)
    centres = [pts[rng.integers(n)]]
    d2 = ((pts - centres[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centres.append(pts[idx])
        d2 = np.minimum(d2, ((pts - pts[idx]) ** 2).sum(axis=1))
    return np.array(centres)


def kmeans(ps: PointSet, k: int, rng: np.random.Generator, max_iter: int = 300) -> KMeansResult:
    """Lloyd iterations from k-means++ seeds; an emptied cluster keeps its last centroid."""
    pts = ps.points
    n = len(pts)
    if not 1 <= k <= n:
        raise DataError(f"k must lie in [1, {n}], got {k}")
    if k == n:
        # k-means++ can reseed duplicates; singletons are the exact optimum
        return KMeansResult(np.arange(n), pts.copy(), (0.0,))
    centres = _kmeanspp(pts, k, rng)
    labels = None
    history = []
    for _ in range(max_iter):
        d2 = ((pts[:, None, :] - centres[None, :, :]) ** 2).sum(axis=2)
        new_labels = np.argmin(d2, axis=1)
        history.append(float(d2[np.arange(n), new_labels].sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(k):
            members = labels == c
            if members.any():
                centres[c] = pts[members].mean(axis=0)
    return KMeansResult(labels, centres, tuple(history))
