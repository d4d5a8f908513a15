"""Transcription quality: note-level F1 and a linear measure on symbolic features."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from .core import DataError, NoteList, covered_cells, notes_to_pianoroll

FEATURE_CELL_DURATION = 0.005
ONSET_WINDOWS = (0.1, 1.0, 10.0)
FEATURE_NAMES = (
    "pitch_mean", "pitch_std", "velocity_mean", "velocity_std", "duration_mean", "duration_std",
    "polyphony_mean", "polyphony_std", "pitch_above_lowest_mean", "pitch_above_lowest_std",
    "onsets_0.1s_mean", "onsets_0.1s_std", "onsets_1s_mean", "onsets_1s_std",
    "onsets_10s_mean", "onsets_10s_std",
)


@dataclass(frozen=True)
class MatchCriteria:
    onset_tol: float = 0.05
    offset_tol: float = 0.05
    pitch_tol: float = 0.5  # semitones
    velocity_tol: float = 0.10  # fraction of the MIDI range

    def __post_init__(self):
        if min(self.onset_tol, self.offset_tol, self.pitch_tol, self.velocity_tol) <= 0:
            raise DataError("match tolerances must be positive")


def _hz(pitch):
    return 440.0 * 2.0 ** ((np.asarray(pitch, dtype=float) - 69) / 12)


def _velocity_fit(pred_v, target_v):
    """Least-squares slope and intercept mapping predicted onto target velocities."""
    if len(pred_v) == 0:
        return 1.0, 0.0
    if np.ptp(pred_v) == 0:
        return 1.0, float(np.mean(target_v - pred_v))
    slope, intercept = np.polyfit(pred_v, target_v, 1)
    return float(slope), float(intercept)


def obj_f1(prediction: NoteList, target: NoteList, criteria: MatchCriteria = MatchCriteria()):
    """(precision, recall, F1) under onset/offset/pitch/velocity tolerances.

    Velocities of candidate pairs are affinely rescaled by least squares before
    the velocity check; the final matching is a maximum-cardinality bipartite
    matching.
    """
    n_p, n_t = len(prediction), len(target)
    if n_p == 0 or n_t == 0:
        return 0.0, 0.0, 0.0
    on_ok = np.abs(prediction.onsets[:, None] - target.onsets[None, :]) <= criteria.onset_tol
    off_ok = np.abs(prediction.offsets[:, None] - target.offsets[None, :]) <= criteria.offset_tol
    cents = 1200 * np.abs(np.log2(_hz(prediction.pitches)[:, None] / _hz(target.pitches)[None, :]))
    pitch_ok = cents <= 100 * criteria.pitch_tol
    cand = on_ok & off_ok & pitch_ok
    pi, ti = np.nonzero(cand)
    pv = prediction.velocities.astype(float)
    tv = target.velocities.astype(float)
    slope, intercept = _velocity_fit(pv[pi], tv[ti])
    vel_ok = np.abs(slope * pv[pi] + intercept - tv[ti]) <= criteria.velocity_tol * 127
    pi, ti = pi[vel_ok], ti[vel_ok]
    if len(pi) == 0:
        return 0.0, 0.0, 0.0
    graph = csr_matrix((np.ones(len(pi)), (pi, ti)), shape=(n_p, n_t))
    n_match = int((maximum_bipartite_matching(graph, perm_type="column") >= 0).sum())
    precision, recall = n_match / n_p, n_match / n_t
    f1 = 0.0 if n_match == 0 else 2 * precision * recall / (precision + recall)
    return precision, recall, f1


def _mean_std(values):
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return 0.0, 0.0
    return float(values.mean()), float(values.std())


def onset_window_counts(onsets, start: float, end: float, size: float) -> np.ndarray:
    """Onsets per window ``[s, s + size)`` for starts every ``size / 2`` from ``start`` up to ``end``."""
    hop = size / 2
    n = max(1, int(np.ceil((end - start) / hop)))
    starts = start + hop * np.arange(n)
    onsets = np.sort(np.asarray(onsets, dtype=float))
    return np.searchsorted(onsets, starts + size, side="left") - np.searchsorted(onsets, starts, side="left")


def symbolic_features(notes: NoteList, cell_duration: float = FEATURE_CELL_DURATION) -> np.ndarray:
    """16 symbolic descriptors; see ``FEATURE_NAMES`` for the order."""
    if len(notes) == 0:
        raise DataError("symbolic features need at least one note")
    roll = notes_to_pianoroll(notes, cell_duration).values
    vel_roll = np.zeros(roll.shape)
    for note, on, off in zip(notes, notes.onsets, notes.offsets):
        a, b = covered_cells(on, off, cell_duration)
        vel_roll[note.pitch, a:b] = np.maximum(vel_roll[note.pitch, a:b], note.velocity)
    rows, cols = np.nonzero(roll)
    active_cols = np.unique(cols)
    lowest = np.full(roll.shape[1], -1)
    lowest_idx = roll.argmax(axis=0)
    lowest[active_cols] = lowest_idx[active_cols]

    feats = []
    feats += _mean_std(rows)
    feats += _mean_std(vel_roll[rows, cols])
    feats += _mean_std(notes.offsets - notes.onsets)
    feats += _mean_std(roll[:, active_cols].sum(axis=0))
    feats += _mean_std(rows - lowest[cols])
    start, end = notes.onsets.min(), notes.offsets.max()
    for size in ONSET_WINDOWS:
        feats += _mean_std(onset_window_counts(notes.onsets, start, end, size))
    return np.array(feats)


@dataclass(frozen=True, eq=False)
class ReferenceStats:
    """Standardization parameters of symbolic features over a reference corpus."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def from_corpus(cls, pieces, cell_duration: float = FEATURE_CELL_DURATION) -> "ReferenceStats":
        feats = np.array([symbolic_features(p, cell_duration) for p in pieces])
        std = feats.std(axis=0)
        return cls(feats.mean(axis=0), np.where(std > 0, std, 1.0))

    @classmethod
    def identity(cls) -> "ReferenceStats":
        return cls(np.zeros(len(FEATURE_NAMES)), np.ones(len(FEATURE_NAMES)))

    def standardize(self, feats) -> np.ndarray:
        return (np.asarray(feats, dtype=float) - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}


def measure_features(prediction: NoteList, target: NoteList, stats: ReferenceStats,
                     criteria: MatchCriteria = MatchCriteria()) -> np.ndarray:
    """Standardized target-minus-prediction feature differences with the OBJ F1 appended."""
    diff = stats.standardize(symbolic_features(target)) - stats.standardize(symbolic_features(prediction))
    return np.append(diff, obj_f1(prediction, target, criteria)[2])


@dataclass(frozen=True, eq=False)
class LinearMeasure:
    weights: np.ndarray
    intercept: float
    kept: np.ndarray  # boolean mask of features surviving pruning
    objective_history: tuple = ()
    stats: ReferenceStats | None = None

    def to_json(self) -> str:
        data = {"intercept": self.intercept, "weights": self.weights.tolist(), "kept": self.kept.astype(int).tolist()}
        if self.stats is not None:
            data.update(self.stats.to_dict())
        return json.dumps(data)

    @classmethod
    def from_json(cls, text: str) -> "LinearMeasure":
        try:
            d = json.loads(text)
            weights = np.array(d["weights"], dtype=float)
            stats = ReferenceStats(np.array(d["mean"], float), np.array(d["std"], float)) if "mean" in d else None
            kept = np.array(d.get("kept", [1] * len(weights)), dtype=bool)
            return cls(weights, float(d["intercept"]), kept, (), stats)
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed measure weights JSON: {exc}") from exc


def elastic_net_objective(X, y, w, b, l1, l2) -> float:
    r = y - b - X @ w
    return float(r @ r / (2 * len(y)) + l1 * np.abs(w).sum() + 0.5 * l2 * (w @ w))


def _soft(x, t):
    return np.sign(x) * max(abs(x) - t, 0.0)


def elastic_net(X, y, l1: float, l2: float, max_sweeps: int = 100000, tol: float = 1e-13):
    """Cyclic coordinate descent on (1/2n)|y - b - Xw|^2 + l1|w|_1 + (l2/2)|w|^2.

    The intercept is unpenalized and handled by centring. Returns weights,
    intercept and the objective after every sweep.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    x_mean, y_mean = X.mean(axis=0), y.mean()
    Xc, yc = X - x_mean, y - y_mean
    z = (Xc ** 2).sum(axis=0) / n
    w = np.zeros(d)
    r = yc.copy()
    history = [elastic_net_objective(Xc, yc, w, 0.0, l1, l2)]
    for _ in range(max_sweeps):
        max_step = 0.0
        for j in range(d):
            if z[j] == 0:
                continue
            rho = Xc[:, j] @ r / n + z[j] * w[j]
            new = _soft(rho, l1) / (z[j] + l2)
            step = new - w[j]
            if step != 0.0:
                r -= step * Xc[:, j]
                w[j] = new
                max_step = max(max_step, abs(step))
        history.append(elastic_net_objective(Xc, yc, w, 0.0, l1, l2))
        if max_step <= tol:
            break
    return w, float(y_mean - x_mean @ w), tuple(history)


def fit_linear_measure(X, y, l1: float, l2: float, prune: bool = True,
                       stats: ReferenceStats | None = None) -> LinearMeasure:
    """Elastic-net fit, then drop features with |weight| < 0.1 * training mean absolute error and refit."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y) or len(y) < 2:
        raise DataError("need at least 2 rows with matching features and ratings")
    d = X.shape[1]
    if np.ptp(y) == 0:
        return LinearMeasure(np.zeros(d), float(y[0]), np.zeros(d, dtype=bool), (), stats)
    w, b, history = elastic_net(X, y, l1, l2)
    kept = np.ones(d, dtype=bool)
    if prune:
        l1_error = float(np.abs(y - b - X @ w).mean())
        kept = np.abs(w) >= 0.1 * l1_error
        if not kept.all():
            w = np.zeros(d)
            if kept.any():
                w_kept, b, history = elastic_net(X[:, kept], y, l1, l2)
                w[kept] = w_kept
            else:
                b = float(y.mean())
    return LinearMeasure(w, b, kept, history, stats)


def apply_measure(model: LinearMeasure, features) -> float:
    features = np.asarray(features, dtype=float)
    if features.shape != model.weights.shape:
        raise DataError(f"expected {model.weights.shape[0]} features, got {features.shape}")
    return float(model.intercept + model.weights @ features)
