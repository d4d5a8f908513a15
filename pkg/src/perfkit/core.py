"""Note events, piano rolls and warping paths.

Score times follow the 60 BPM convention: one beat is one second.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

N_PITCHES = 128

BOOLEAN = "boolean"
THREE_VALUED = "three_valued"
PROBABILITY = "probability"
ROLL_KINDS = (BOOLEAN, THREE_VALUED, PROBABILITY)


class DataError(ValueError):
    """Input data violates a documented precondition."""


@dataclass(frozen=True)
class NoteEvent:
    pitch: int
    onset: float
    offset: float
    velocity: int = 64

    def __post_init__(self):
        if not 0 <= self.pitch <= 127:
            raise DataError(f"pitch out of range: {self.pitch}")
        if not 0 <= self.velocity <= 127:
            raise DataError(f"velocity out of range: {self.velocity}")
        if not self.offset > self.onset:
            raise DataError(f"offset {self.offset} must exceed onset {self.onset}")

    @property
    def duration(self) -> float:
        return self.offset - self.onset

    def replace(self, **changes) -> "NoteEvent":
        fields = dict(pitch=self.pitch, onset=self.onset, offset=self.offset, velocity=self.velocity)
        fields.update(changes)
        return NoteEvent(**fields)

    def to_dict(self) -> dict:
        return {"pitch": self.pitch, "onset": self.onset, "offset": self.offset, "velocity": self.velocity}


class NoteList(Sequence):
    """Immutable note sequence kept sorted by (onset, pitch).

    The sort is stable, so notes sharing onset and pitch keep their input order.
    """

    __slots__ = ("_notes",)

    def __init__(self, notes: Iterable[NoteEvent] = ()):
        self._notes = tuple(sorted(notes, key=lambda n: (n.onset, n.pitch)))

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return NoteList(self._notes[idx])
        return self._notes[idx]

    def __len__(self):
        return len(self._notes)

    def __eq__(self, other):
        if isinstance(other, NoteList):
            return self._notes == other._notes
        return NotImplemented

    def __hash__(self):
        return hash(self._notes)

    def __repr__(self):
        return f"NoteList({list(self._notes)!r})"

    @classmethod
    def from_arrays(cls, pitches, onsets, offsets, velocities=None) -> "NoteList":
        if velocities is None:
            velocities = [64] * len(pitches)
        return cls(
            NoteEvent(int(p), float(on), float(off), int(v))
            for p, on, off, v in zip(pitches, onsets, offsets, velocities)
        )

    @property
    def pitches(self) -> np.ndarray:
        return np.array([n.pitch for n in self._notes], dtype=int)

    @property
    def onsets(self) -> np.ndarray:
        return np.array([n.onset for n in self._notes], dtype=float)

    @property
    def offsets(self) -> np.ndarray:
        return np.array([n.offset for n in self._notes], dtype=float)

    @property
    def velocities(self) -> np.ndarray:
        return np.array([n.velocity for n in self._notes], dtype=int)

    def to_json(self) -> str:
        return json.dumps({"notes": [n.to_dict() for n in self._notes]})

    @classmethod
    def from_json(cls, text: str) -> "NoteList":
        try:
            data = json.loads(text)
            return cls(
                NoteEvent(int(d["pitch"]), float(d["onset"]), float(d["offset"]), int(d.get("velocity", 64)))
                for d in data["notes"]
            )
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise DataError(f"malformed note-list JSON: {exc}") from exc


def load_notes(path) -> NoteList:
    with open(path, encoding="utf-8") as f:
        return NoteList.from_json(f.read())


def save_notes(notes: NoteList, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(notes.to_json())


@dataclass(frozen=True, eq=False)
class PianoRoll:
    """128 x T grid; ``cell_duration`` is seconds (or beats, at 60 BPM) per column."""

    values: np.ndarray
    cell_duration: float
    kind: str = BOOLEAN

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2 or values.shape[0] != N_PITCHES:
            raise DataError(f"piano roll must be {N_PITCHES} x T, got {values.shape}")
        if self.kind not in ROLL_KINDS:
            raise DataError(f"unknown roll kind {self.kind!r}")
        if self.cell_duration <= 0:
            raise DataError("cell_duration must be positive")
        if self.kind == THREE_VALUED and not np.isin(values, (0, 1, 2)).all():
            raise DataError("three-valued roll has cells outside {0, 1, 2}")
        if self.kind == PROBABILITY and values.size and (values.min() < 0 or values.max() > 1):
            raise DataError("probability roll has cells outside [0, 1]")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n_columns(self) -> int:
        return self.values.shape[1]


def covered_cells(onset: float, offset: float, cell_duration: float) -> tuple[int, int]:
    """Half-open column range [start, stop) of cells c with c*d < offset and (c+1)*d > onset."""
    start = max(int(math.floor(onset / cell_duration)), 0)
    while (start + 1) * cell_duration <= onset:
        start += 1
    while start > 0 and start * cell_duration > onset:
        start -= 1
    stop = int(math.ceil(offset / cell_duration))
    while stop * cell_duration < offset:
        stop += 1
    while stop > start and (stop - 1) * cell_duration >= offset:
        stop -= 1
    return start, stop


def notes_to_pianoroll(notes: NoteList, cell_duration: float, kind: str = BOOLEAN,
                       n_columns: int | None = None) -> PianoRoll:
    if cell_duration <= 0:
        raise DataError("cell_duration must be positive")
    if kind not in ROLL_KINDS:
        raise DataError(f"unknown roll kind {kind!r}")
    spans = []
    for note in notes:
        if note.onset < 0:
            raise DataError(f"negative onset {note.onset}")
        spans.append(covered_cells(note.onset, note.offset, cell_duration))
    if n_columns is None:
        n_columns = max((stop for _, stop in spans), default=0)
    dtype = np.int8 if kind == THREE_VALUED else (bool if kind == BOOLEAN else float)
    values = np.zeros((N_PITCHES, n_columns), dtype=dtype)
    for note, (start, stop) in zip(notes, spans):
        stop = min(stop, n_columns)
        if start >= stop:
            continue
        row = values[note.pitch]
        if kind == THREE_VALUED:
            sustain = row[start + 1:stop]
            sustain[sustain != 2] = 1
            row[start] = 2
        else:
            row[start:stop] = 1
    return PianoRoll(values, cell_duration, kind)


def stretch_to_duration(notes: NoteList, target_duration: float) -> NoteList:
    """Translate the first onset to 0 and scale all times so the span equals ``target_duration``."""
    if len(notes) == 0:
        raise DataError("cannot stretch an empty note list")
    if target_duration <= 0:
        raise DataError("target duration must be positive")
    start = notes.onsets.min()
    span = notes.offsets.max() - start
    if span <= 0:
        raise DataError("note list has zero span")
    factor = target_duration / span
    return NoteList(n.replace(onset=(n.onset - start) * factor, offset=(n.offset - start) * factor)
                    for n in notes)


@dataclass(frozen=True)
class WarpingPath:
    pairs: tuple

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple((int(i), int(j)) for i, j in self.pairs))

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def as_array(self) -> np.ndarray:
        return np.array(self.pairs, dtype=int).reshape(-1, 2)

    def is_valid(self, n: int, m: int) -> bool:
        if not self.pairs or self.pairs[0] != (0, 0) or self.pairs[-1] != (n - 1, m - 1):
            return False
        for (i0, j0), (i1, j1) in zip(self.pairs, self.pairs[1:]):
            di, dj = i1 - i0, j1 - j0
            if di not in (0, 1) or dj not in (0, 1) or di + dj == 0:
                return False
        return True


def interp_extrapolate(x, xp, fp):
    """Piecewise-linear interpolation that extends the first and last segments beyond the ends.

    ``xp`` must be strictly increasing with at least two points.
    """
    x = np.asarray(x, dtype=float)
    xp = np.asarray(xp, dtype=float)
    fp = np.asarray(fp, dtype=float)
    y = np.interp(x, xp, fp)
    lo = x < xp[0]
    hi = x > xp[-1]
    if lo.any():
        slope = (fp[1] - fp[0]) / (xp[1] - xp[0])
        y[lo] = fp[0] + (x[lo] - xp[0]) * slope
    if hi.any():
        slope = (fp[-1] - fp[-2]) / (xp[-1] - xp[-2])
        y[hi] = fp[-1] + (x[hi] - xp[-1]) * slope
    return y
