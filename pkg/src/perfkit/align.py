"""Score-to-performance alignment.

Frame level: (Fast)DTW over the columns of two three-valued piano rolls, with
the warping path turned into a monotone score-time to performance-time map.
Note level: matched notes take the performance timing and unmatched score notes
are placed by linear interpolation between matched onsets.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import _dtw_kernels
from .core import (THREE_VALUED, DataError, NoteList, PianoRoll, WarpingPath, interp_extrapolate,
                   notes_to_pianoroll)

logger = logging.getLogger(__name__)

DEFAULT_RADIUS = 178
DEFAULT_DISTANCE = "cosine"
DEFAULT_CELL_DURATION = 0.05
DEFAULT_THRESHOLDS = tuple(np.round(np.arange(1, 101) * 0.01, 2))

DISTANCES = ("cosine", "euclidean", "sqeuclidean", "cityblock")


def _as_sequence(seq) -> np.ndarray:
    arr = np.asarray(seq, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise DataError("sequences must be non-empty and 1-D or 2-D")
    return arr


def pairwise_distance(x: np.ndarray, ys: np.ndarray, distance: str) -> np.ndarray:
    """Distance from vector ``x`` to each row of ``ys``.

    Cosine distance to a zero vector is 1, and 0 between two zero vectors.
    """
    if distance == "euclidean":
        return np.sqrt(((ys - x) ** 2).sum(axis=1))
    if distance == "sqeuclidean":
        return ((ys - x) ** 2).sum(axis=1)
    if distance == "cityblock":
        return np.abs(ys - x).sum(axis=1)
    if distance == "cosine":
        # identical summation path for all three products keeps d(x, x) == 0 exactly
        xx = (x * x)[None, :].sum(axis=1)[0]
        yy = (ys * ys).sum(axis=1)
        dots = (ys * x).sum(axis=1)
        out = np.ones(len(ys))
        both_zero = (yy == 0) & (xx == 0)
        nonzero = (yy > 0) & (xx > 0)
        out[both_zero] = 0.0
        out[nonzero] = np.maximum(1.0 - dots[nonzero] / np.sqrt(xx * yy[nonzero]), 0.0)
        return out
    raise DataError(f"unknown distance {distance!r}; choose from {DISTANCES}")


def _window_costs(a, b, lo, hi, distance):
    offs = np.zeros(len(lo), dtype=np.int64)
    offs[1:] = np.cumsum(hi - lo)[:-1]
    cost = np.empty(int((hi - lo).sum()))
    for i in range(len(lo)):
        cost[offs[i]:offs[i] + hi[i] - lo[i]] = pairwise_distance(a[i], b[lo[i]:hi[i]], distance)
    return cost, offs


def _run_window(cost, offs, lo, hi):
    acc, step = _dtw_kernels.accumulate(cost, offs, lo, hi)
    last = offs[-1] + hi[-1] - 1 - lo[-1]
    pi, pj = _dtw_kernels.backtrack(step, offs, lo, hi)
    return WarpingPath(zip(pi.tolist(), pj.tolist())), float(acc[last])


def _windowed_dtw(a, b, lo, hi, distance):
    cost, offs = _window_costs(a, b, lo, hi, distance)
    return _run_window(cost, offs, lo, hi)


def _full_window(n, m):
    return np.zeros(n, dtype=np.int64), np.full(n, m, dtype=np.int64)


def dtw_from_cost(cost_matrix) -> tuple[WarpingPath, float]:
    """Minimum-cost monotone path through a precomputed N x M cost matrix."""
    cost_matrix = np.asarray(cost_matrix, dtype=float)
    if cost_matrix.ndim != 2 or 0 in cost_matrix.shape:
        raise DataError("cost matrix must be a non-empty 2-D array")
    n, m = cost_matrix.shape
    lo, hi = _full_window(n, m)
    offs = np.arange(n, dtype=np.int64) * m
    return _run_window(cost_matrix.ravel().copy(), offs, lo, hi)


def dtw(seq_a, seq_b, distance: str = "euclidean") -> tuple[WarpingPath, float]:
    """Exact DTW with steps (1,0), (0,1), (1,1) and unit weights."""
    a, b = _as_sequence(seq_a), _as_sequence(seq_b)
    if a.shape[1] != b.shape[1]:
        raise DataError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    lo, hi = _full_window(len(a), len(b))
    return _windowed_dtw(a, b, lo, hi, distance)


def _halve(x):
    n = len(x) - len(x) % 2
    return (x[0:n:2] + x[1:n:2]) / 2


def _expand_window(path: WarpingPath, n: int, m: int, radius: int):
    """Project a coarse path onto the finer grid and widen it by ``radius`` coarse cells."""
    lo = np.full(n, m, dtype=np.int64)
    hi = np.zeros(n, dtype=np.int64)
    for ci, cj in path:
        r0, r1 = max(2 * (ci - radius), 0), min(2 * (ci + radius) + 2, n)
        c0, c1 = max(2 * (cj - radius), 0), min(2 * (cj + radius) + 2, m)
        lo[r0:r1] = np.minimum(lo[r0:r1], c0)
        hi[r0:r1] = np.maximum(hi[r0:r1], c1)
    # rows left uncovered by an odd-length tail inherit the previous range
    for i in range(1, n):
        if hi[i] <= lo[i]:
            lo[i], hi[i] = lo[i - 1], hi[i - 1]
    lo[0] = 0
    hi[-1] = m
    hi = np.maximum.accumulate(hi)
    lo = np.minimum.accumulate(lo[::-1])[::-1]
    lo[1:] = np.minimum(lo[1:], hi[:-1])
    return lo, hi


def fastdtw(seq_a, seq_b, radius: int = DEFAULT_RADIUS, distance: str = DEFAULT_DISTANCE):
    """Approximate DTW by recursive coarsening, projection and windowed refinement.

    Falls back to exact DTW once either sequence is shorter than ``radius + 2``,
    so a radius at least as long as both inputs reproduces :func:`dtw` exactly.
    """
    if radius < 0:
        raise DataError("radius must be non-negative")
    a, b = _as_sequence(seq_a), _as_sequence(seq_b)
    if a.shape[1] != b.shape[1]:
        raise DataError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    return _fastdtw(a, b, radius, distance)


def _fastdtw(a, b, radius, distance):
    min_size = radius + 2
    if len(a) < min_size or len(b) < min_size:
        lo, hi = _full_window(len(a), len(b))
        return _windowed_dtw(a, b, lo, hi, distance)
    coarse_path, _ = _fastdtw(_halve(a), _halve(b), radius, distance)
    lo, hi = _expand_window(coarse_path, len(a), len(b), radius)
    return _windowed_dtw(a, b, lo, hi, distance)


@dataclass(frozen=True, eq=False)
class TimeMapping:
    """Piecewise-linear monotone map from score seconds to performance seconds."""

    score_times: np.ndarray
    perf_times: np.ndarray

    def __call__(self, t):
        if len(self.score_times) < 2:
            return np.asarray(t, dtype=float) - self.score_times[0] + self.perf_times[0]
        return interp_extrapolate(t, self.score_times, self.perf_times)


def path_to_mapping(path: WarpingPath, cell_duration: float) -> TimeMapping:
    """Average the target columns of each source column, then scale to seconds."""
    arr = path.as_array()
    cols, inverse = np.unique(arr[:, 0], return_inverse=True)
    targets = np.bincount(inverse, weights=arr[:, 1]) / np.bincount(inverse)
    return TimeMapping(cols * cell_duration, targets * cell_duration)


def frame_align(score_roll: PianoRoll, perf_roll: PianoRoll, radius: int = DEFAULT_RADIUS,
                distance: str = DEFAULT_DISTANCE) -> TimeMapping:
    if score_roll.cell_duration != perf_roll.cell_duration:
        raise DataError("rolls must share cell_duration")
    for name, roll in (("score", score_roll), ("performance", perf_roll)):
        if roll.n_columns == 0 or not np.any(roll.values):
            raise DataError(f"{name} roll is all zero; cosine distance is undefined")
    path, _ = fastdtw(score_roll.values.T.astype(float), perf_roll.values.T.astype(float),
                      radius=radius, distance=distance)
    return path_to_mapping(path, score_roll.cell_duration)


def apply_mapping(notes: NoteList, mapping: TimeMapping) -> NoteList:
    onsets = mapping(notes.onsets)
    offsets = mapping(notes.offsets)
    out = []
    for note, on, off in zip(notes, onsets, offsets):
        if off <= on:
            off = on + note.duration
        out.append(note.replace(onset=float(on), offset=float(off)))
    return NoteList(out)


def frame_align_notes(score: NoteList, performance: NoteList, radius: int = DEFAULT_RADIUS,
                      cell_duration: float = DEFAULT_CELL_DURATION) -> NoteList:
    """Align score notes by DTW over three-valued piano rolls of both note lists."""
    score_roll = notes_to_pianoroll(score, cell_duration, THREE_VALUED)
    perf_roll = notes_to_pianoroll(performance, cell_duration, THREE_VALUED)
    return apply_mapping(score, frame_align(score_roll, perf_roll, radius))


@dataclass(frozen=True)
class NoteMatching:
    matched: tuple
    unmatched_score: tuple
    unmatched_perf: tuple

    def to_dict(self) -> dict:
        return {
            "matched": [list(p) for p in self.matched],
            "unmatched_score": list(self.unmatched_score),
            "unmatched_perf": list(self.unmatched_perf),
        }


def _skip_penalty(lane_onsets, fallback: float) -> float:
    if len(lane_onsets) >= 2:
        ioi = float(np.median(np.diff(np.sort(lane_onsets))))
        if ioi > 0:
            return 2 * ioi
    return fallback


def _global_fallback(score: NoteList) -> float:
    unique = np.unique(score.onsets)
    if len(unique) >= 2:
        return 2 * float(np.median(np.diff(unique)))
    return 1.0


def _match_lane(s_on, p_on, penalty):
    ns, np_ = len(s_on), len(p_on)
    acc = np.zeros((ns + 1, np_ + 1))
    acc[:, 0] = np.arange(ns + 1) * penalty
    acc[0, :] = np.arange(np_ + 1) * penalty
    for a in range(1, ns + 1):
        for b in range(1, np_ + 1):
            acc[a, b] = min(acc[a - 1, b - 1] + abs(s_on[a - 1] - p_on[b - 1]),
                            acc[a - 1, b] + penalty,
                            acc[a, b - 1] + penalty)
    pairs = []
    a, b = ns, np_
    while a > 0 and b > 0:
        if acc[a, b] == acc[a - 1, b - 1] + abs(s_on[a - 1] - p_on[b - 1]):
            pairs.append((a - 1, b - 1))
            a, b = a - 1, b - 1
        elif acc[a, b] == acc[a - 1, b] + penalty:
            a -= 1
        else:
            b -= 1
    return pairs[::-1]


def match_notes(score: NoteList, performance: NoteList) -> NoteMatching:
    """Per-pitch monotone matching minimizing total onset difference plus skip penalties.

    Each pitch lane is aligned by dynamic programming; skipping a note costs twice
    the median inter-onset interval of the score lane.
    """
    fallback = _global_fallback(score)
    s_pitch, p_pitch = score.pitches, performance.pitches
    s_on, p_on = score.onsets, performance.onsets
    matched = []
    for pitch in np.union1d(s_pitch, p_pitch):
        s_idx = np.flatnonzero(s_pitch == pitch)
        p_idx = np.flatnonzero(p_pitch == pitch)
        if len(s_idx) == 0 or len(p_idx) == 0:
            continue
        penalty = _skip_penalty(s_on[s_idx], _skip_penalty(p_on[p_idx], fallback))
        for a, b in _match_lane(s_on[s_idx], p_on[p_idx], penalty):
            matched.append((int(s_idx[a]), int(p_idx[b])))
    matched.sort()
    ms = {i for i, _ in matched}
    mp = {j for _, j in matched}
    return NoteMatching(
        matched=tuple(matched),
        unmatched_score=tuple(i for i in range(len(score)) if i not in ms),
        unmatched_perf=tuple(j for j in range(len(performance)) if j not in mp),
    )


def identity_matching(n: int) -> NoteMatching:
    return NoteMatching(tuple((i, i) for i in range(n)), (), ())


def note_align(score: NoteList, performance: NoteList, matching: NoteMatching) -> NoteList:
    """Give matched notes the performance timing and interpolate the rest.

    Anchors are matched (score onset, performance onset) pairs; anchors sharing a
    score onset are averaged. Notes outside the anchor span follow the slope of
    the nearest segment.
    """
    if len(matching.matched) < 2:
        raise DataError("note alignment needs at least 2 matched notes")
    for i, j in matching.matched:
        if not (0 <= i < len(score) and 0 <= j < len(performance)):
            raise DataError(f"matching pair {(i, j)} out of range")
    s_idx = np.array([i for i, _ in matching.matched])
    p_idx = np.array([j for _, j in matching.matched])
    anchor_s, inverse = np.unique(score.onsets[s_idx], return_inverse=True)
    anchor_p = np.bincount(inverse, weights=performance.onsets[p_idx]) / np.bincount(inverse)
    if len(anchor_s) < 2:
        raise DataError("matched notes share a single score onset; nothing to interpolate")
    times = {i: (performance[j].onset, performance[j].offset) for i, j in matching.matched}
    unmatched = [i for i in range(len(score)) if i not in times]
    if unmatched:
        on = interp_extrapolate(score.onsets[unmatched], anchor_s, anchor_p)
        off = interp_extrapolate(score.offsets[unmatched], anchor_s, anchor_p)
        for i, a, b in zip(unmatched, on, off):
            if b <= a:
                b = a + score[i].duration
            times[i] = (float(a), float(b))
    return NoteList(note.replace(onset=times[i][0], offset=times[i][1]) for i, note in enumerate(score))


@dataclass(frozen=True, eq=False)
class EvalCurve:
    thresholds: np.ndarray
    onset_ratio: np.ndarray
    offset_ratio: np.ndarray

    def to_dict(self) -> dict:
        return {
            "thresholds": np.asarray(self.thresholds, dtype=float).tolist(),
            "onset_ratio": np.asarray(self.onset_ratio, dtype=float).tolist(),
            "offset_ratio": np.asarray(self.offset_ratio, dtype=float).tolist(),
        }


def eval_matched_ratio(aligned: NoteList, ground_truth: NoteList, thresholds=DEFAULT_THRESHOLDS) -> EvalCurve:
    """Fraction of notes whose onset (offset) error is within each threshold."""
    if len(aligned) != len(ground_truth):
        raise DataError(f"length mismatch: {len(aligned)} aligned vs {len(ground_truth)} ground-truth notes")
    thresholds = np.asarray(thresholds, dtype=float)
    if len(aligned) == 0:
        ones = np.ones(len(thresholds))
        return EvalCurve(thresholds, ones, ones.copy())
    on_err = np.abs(aligned.onsets - ground_truth.onsets)
    off_err = np.abs(aligned.offsets - ground_truth.offsets)
    onset_ratio = (on_err[None, :] <= thresholds[:, None]).mean(axis=1)
    offset_ratio = (off_err[None, :] <= thresholds[:, None]).mean(axis=1)
    return EvalCurve(thresholds, onset_ratio, offset_ratio)


def macro_average(curves) -> EvalCurve:
    curves = list(curves)
    if not curves:
        raise DataError("no curves to average")
    thresholds = curves[0].thresholds
    for c in curves[1:]:
        if not np.array_equal(c.thresholds, thresholds):
            raise DataError("curves use different thresholds")
    return EvalCurve(
        thresholds,
        np.mean([c.onset_ratio for c in curves], axis=0),
        np.mean([c.offset_ratio for c in curves], axis=0),
    )
