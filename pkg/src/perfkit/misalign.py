"""Statistical score misalignment, missing/extra note labels and chord clustering.

A fitted model holds six histograms: per-note standardized onset misalignment and
duration ratio, plus per-piece means and standard deviations of both quantities.
Sampling draws one mean/std pair per piece and one standardized value per note.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .core import DataError, NoteList

logger = logging.getLogger(__name__)

DEFAULT_BINS = 100
MAX_REDRAWS = 100
MIN_RATIO = 0.01

HISTOGRAM_NAMES = ("x_ons", "x_dur", "y_ons_mean", "y_ons_std", "y_dur_mean", "y_dur_std")


@dataclass(frozen=True, eq=False)
class Histogram:
    """Binned distribution over half-open bins ``[edges[i], edges[i+1])``.

    A single bin with equal edges is a point mass.
    """

    bin_edges: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.bin_edges, dtype=float)
        counts = np.asarray(self.counts, dtype=float)
        if edges.ndim != 1 or counts.ndim != 1 or len(edges) != len(counts) + 1 or len(counts) == 0:
            raise DataError("histogram needs B >= 1 counts and B + 1 edges")
        point_mass = len(counts) == 1 and edges[0] == edges[1]
        if not point_mass and not np.all(np.diff(edges) > 0):
            raise DataError("histogram edges must be strictly increasing")
        if np.any(counts < 0) or not np.all(np.isfinite(counts)):
            raise DataError("histogram counts must be finite and non-negative")
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def from_values(cls, values, bins: int = DEFAULT_BINS) -> "Histogram":
        values = np.asarray(values, dtype=float)
        if values.size == 0:
            return cls.empty()
        lo, hi = values.min(), values.max()
        if lo == hi:
            return cls.point(lo, values.size)
        counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
        return cls(edges, counts)

    @classmethod
    def point(cls, value: float, count: float = 1.0) -> "Histogram":
        return cls(np.array([value, value]), np.array([count]))

    @classmethod
    def empty(cls) -> "Histogram":
        return cls(np.array([0.0, 1.0]), np.array([0.0]))

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    def probabilities(self) -> np.ndarray:
        return self.counts / self.total

    def to_dict(self) -> dict:
        return {"edges": self.bin_edges.tolist(), "counts": self.counts.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Histogram":
        return cls(np.array(d["edges"], dtype=float), np.array(d["counts"], dtype=float))


def sample_histogram(h: Histogram, rng: np.random.Generator, size=None):
    """Pick a bin proportionally to its count, then a uniform value inside it."""
    if h.total <= 0:
        raise DataError("cannot sample from a histogram with zero total count")
    idx = rng.choice(len(h.counts), size=size, p=h.probabilities())
    lo = h.bin_edges[idx]
    hi = h.bin_edges[np.asarray(idx) + 1]
    u = rng.random(size=size)
    out = lo + u * (hi - lo)
    return float(out) if size is None else out


@dataclass(frozen=True, eq=False)
class MisalignmentModel:
    x_ons: Histogram
    x_dur: Histogram
    y_ons_mean: Histogram
    y_ons_std: Histogram
    y_dur_mean: Histogram
    y_dur_std: Histogram
    # pieces whose onset/duration std was zero and so contributed no std sample
    flagged_pieces: tuple = field(default=())

    def histograms(self) -> dict:
        return {name: getattr(self, name) for name in HISTOGRAM_NAMES}

    def to_json(self) -> str:
        data = {name: h.to_dict() for name, h in self.histograms().items()}
        data["flagged_pieces"] = list(self.flagged_pieces)
        return json.dumps(data)

    @classmethod
    def from_json(cls, text: str) -> "MisalignmentModel":
        try:
            data = json.loads(text)
            hists = {name: Histogram.from_dict(data[name]) for name in HISTOGRAM_NAMES}
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise DataError(f"malformed misalignment model JSON: {exc}") from exc
        return cls(**hists, flagged_pieces=tuple(data.get("flagged_pieces", ())))


def _matched_pairs(matching):
    pairs = getattr(matching, "matched", matching)
    return [(int(i), int(j)) for i, j in pairs]


def fit_misalignment_model(pairs, bins: int = DEFAULT_BINS) -> MisalignmentModel:
    """Fit the six histograms from ``(score, performance, matching)`` triples.

    ``matching`` is a :class:`~perfkit.align.NoteMatching` or a sequence of
    ``(score_index, perf_index)`` pairs. Scores should already be stretched to
    the performance span.
    """
    pairs = list(pairs)
    if not pairs:
        raise DataError("no pieces to fit")
    x_ons, x_dur = [], []
    y = {name: [] for name in HISTOGRAM_NAMES[2:]}
    flagged = []
    used = 0
    for piece, (score, perf, matching) in enumerate(pairs):
        matched = _matched_pairs(matching)
        if len(matched) < 2:
            logger.warning("piece %d skipped: fewer than 2 matched notes", piece)
            continue
        used += 1
        s_idx = np.array([i for i, _ in matched])
        p_idx = np.array([j for _, j in matched])
        ons = score.onsets[s_idx] - perf.onsets[p_idx]
        s_dur = score.offsets[s_idx] - score.onsets[s_idx]
        p_dur = perf.offsets[p_idx] - perf.onsets[p_idx]
        dur = s_dur / p_dur
        for values, x_acc, stat in ((ons, x_ons, "ons"), (dur, x_dur, "dur")):
            mean = values.mean()
            std = values.std()
            y[f"y_{stat}_mean"].append(mean)
            if std > 0:
                y[f"y_{stat}_std"].append(std)
                x_acc.extend((values - mean) / std)
            else:
                flagged.append((piece, stat))
                x_acc.extend(values - mean)
    if used == 0:
        raise DataError("no piece has at least 2 matched notes")
    return MisalignmentModel(
        x_ons=Histogram.from_values(x_ons, bins),
        x_dur=Histogram.from_values(x_dur, bins),
        **{name: Histogram.from_values(v, bins) for name, v in y.items()},
        flagged_pieces=tuple(f"{p}:{s}" for p, s in flagged),
    )


def _sample_std(h: Histogram, rng) -> float:
    # every fitted piece had zero spread
    if h.total <= 0:
        return 0.0
    return sample_histogram(h, rng)


def sample_misaligned(reference: NoteList, model: MisalignmentModel, rng: np.random.Generator) -> NoteList:
    """Create an artificially misaligned score from a reference performance."""
    if model is None:
        raise DataError("misalignment model is not fitted")
    if len(reference) == 0:
        raise DataError("reference note list is empty")
    ons_mean = sample_histogram(model.y_ons_mean, rng)
    ons_std = _sample_std(model.y_ons_std, rng)
    dur_mean = sample_histogram(model.y_dur_mean, rng)
    dur_std = _sample_std(model.y_dur_std, rng)

    notes = []
    for note in reference:
        shift = sample_histogram(model.x_ons, rng) * ons_std + ons_mean
        for _ in range(MAX_REDRAWS):
            ratio = sample_histogram(model.x_dur, rng) * dur_std + dur_mean
            if ratio > 0:
                break
        else:
            ratio = MIN_RATIO
        onset = note.onset + shift
        notes.append(note.replace(onset=onset, offset=onset + note.duration * ratio))
    return NoteList(notes)


@dataclass(frozen=True, eq=False)
class MissingExtraLabels:
    missing: np.ndarray
    extra: np.ndarray
    # (start, stop, p_missing, label) per tagged run
    runs: tuple = ()

    def to_dict(self) -> dict:
        return {
            "missing": self.missing.astype(int).tolist(),
            "extra": self.extra.astype(int).tolist(),
            "runs": [{"start": s, "stop": e, "p_missing": p, "label": lab} for s, e, p, lab in self.runs],
        }


def _target_count(n_notes: int, rng) -> int:
    lo_int = int(np.floor(0.1 * n_notes)) + 1
    hi_int = int(np.ceil(0.5 * n_notes)) - 1
    drawn = rng.uniform(0.1 * n_notes, 0.5 * n_notes)
    if hi_int < lo_int:
        # no integer lies strictly inside the interval (only for 2 notes)
        return 1
    return int(min(max(round(drawn), lo_int), hi_int))


def generate_missing_extra(notes: NoteList, rng: np.random.Generator) -> MissingExtraLabels:
    """Tag random contiguous runs of notes as missing or extra."""
    n_notes = len(notes)
    if n_notes < 2:
        raise DataError("need at least 2 notes to generate missing/extra labels")
    target = _target_count(n_notes, rng)
    tagged = np.zeros(n_notes, dtype=bool)
    missing = np.zeros(n_notes, dtype=bool)
    extra = np.zeros(n_notes, dtype=bool)
    runs = []
    remaining = target
    while remaining > 0:
        # lengths of the free gaps, to bound the run length by what can fit
        free_starts = []
        longest = 0
        i = 0
        while i < n_notes:
            if tagged[i]:
                i += 1
                continue
            j = i
            while j < n_notes and not tagged[j]:
                j += 1
            free_starts.append((i, j))
            longest = max(longest, j - i)
            i = j
        length = int(rng.integers(1, min(remaining, longest) + 1))
        starts = [s for a, b in free_starts for s in range(a, b - length + 1)]
        start = int(starts[rng.integers(len(starts))])
        stop = start + length
        p_missing = float(rng.uniform(0.25, 0.75))
        is_missing = bool(rng.random() < p_missing)
        tagged[start:stop] = True
        (missing if is_missing else extra)[start:stop] = True
        runs.append((start, stop, p_missing, "missing" if is_missing else "extra"))
        remaining -= length
    return MissingExtraLabels(missing, extra, tuple(runs))


def chord_clusters(onsets, t: float) -> np.ndarray:
    """Single-linkage cluster labels of 1-D onsets, merging while the nearest gap is < ``t``.

    In one dimension single linkage reduces to cutting every sorted gap >= ``t``.
    """
    onsets = np.asarray(onsets, dtype=float)
    labels = np.zeros(len(onsets), dtype=int)
    if len(onsets) == 0:
        return labels
    order = np.argsort(onsets, kind="stable")
    gaps = np.diff(onsets[order])
    labels[order] = np.concatenate([[0], np.cumsum(gaps >= t)])
    return labels


def cluster_chords(notes: NoteList, t: float) -> NoteList:
    """Snap near-simultaneous onsets to their cluster mean; offsets are kept."""
    if t <= 0:
        raise DataError("clustering threshold must be positive")
    if len(notes) == 0:
        return NoteList()
    onsets = notes.onsets
    labels = chord_clusters(onsets, t)
    means = np.bincount(labels, weights=onsets) / np.bincount(labels)
    out = []
    for note, lab in zip(notes, labels):
        onset = float(means[lab])
        offset = note.offset if note.offset > onset else onset + note.duration
        out.append(note.replace(onset=onset, offset=offset))
    return NoteList(out)
