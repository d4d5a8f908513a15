"""Score-informed NMF note separation and MFCC features.

Every pitch owns 30 template columns: one attack column (first frame), fourteen
sustain columns of two frames each (the last one absorbs anything past 28
frames) and fifteen one-frame release columns starting at the note offset.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.fft import dct
from scipy.signal import get_window

from .core import DataError, NoteEvent, NoteList

SAMPLE_RATE = 22050
FRAME_SIZE = 2048
HOP_SIZE = 512
PIANO_PITCHES = tuple(range(21, 109))

N_ATTACK = 1
N_SUSTAIN = 14
SUSTAIN_FRAMES = 2
N_RELEASE = 15
COLS_PER_PITCH = N_ATTACK + N_SUSTAIN + N_RELEASE

N_WINDOWS = 5
N_ITER = 5
EPS = 1e-12
NOTE_FRAMES = 30

N_MELS = 40
N_MFCC = 13
LOG_FLOOR = 1e-10


@dataclass(frozen=True, eq=False)
class SpectrogramMatrix:
    values: np.ndarray
    frame_duration: float = HOP_SIZE / SAMPLE_RATE
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise DataError("spectrogram must be 2-D")
        if np.any(values < 0):
            raise DataError("spectrogram must be non-negative")
        object.__setattr__(self, "values", values)

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


def stft_magnitude(samples, sample_rate: int = SAMPLE_RATE, frame_size: int = FRAME_SIZE,
                   hop_size: int = HOP_SIZE) -> SpectrogramMatrix:
    """Hann-windowed magnitude STFT without padding; frame k starts at sample k * hop."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 1 or len(samples) < frame_size:
        raise DataError(f"need at least {frame_size} mono samples, got {samples.shape}")
    n_frames = 1 + (len(samples) - frame_size) // hop_size
    idx = np.arange(frame_size)[None, :] + hop_size * np.arange(n_frames)[:, None]
    frames = samples[idx] * get_window("hann", frame_size)
    mag = np.abs(np.fft.rfft(frames, axis=1)).T
    return SpectrogramMatrix(mag, hop_size / sample_rate, sample_rate)


@dataclass(frozen=True)
class TemplateLayout:
    pitches: tuple = PIANO_PITCHES

    @property
    def n_columns(self) -> int:
        return COLS_PER_PITCH * len(self.pitches)

    def first_row(self, pitch: int) -> int:
        try:
            return COLS_PER_PITCH * self.pitches.index(pitch)
        except ValueError:
            raise DataError(f"pitch {pitch} is not in the template layout") from None

    def rows(self, pitch: int) -> slice:
        start = self.first_row(pitch)
        return slice(start, start + COLS_PER_PITCH)


def note_frame_columns(on_frame: int, off_frame: int):
    """(frame, column-within-pitch) pairs for a note spanning ``[on_frame, off_frame)``."""
    off_frame = max(off_frame, on_frame + 1)
    out = [(on_frame, 0)]
    for f in range(on_frame + 1, off_frame):
        sustain = min((f - on_frame - 1) // SUSTAIN_FRAMES, N_SUSTAIN - 1)
        out.append((f, N_ATTACK + sustain))
    for r in range(N_RELEASE):
        out.append((off_frame + r, N_ATTACK + N_SUSTAIN + r))
    return out


def note_frames(note: NoteEvent, frame_duration: float) -> tuple[int, int]:
    on = int(round(note.onset / frame_duration))
    off = max(int(round(note.offset / frame_duration)), on + 1)
    return on, off


def synth_note(pitch: int, sample_rate: int = SAMPLE_RATE, duration: float = 1.5, release: float = 0.4,
               n_partials: int = 8, decay: float = 1.0, release_decay: float = 0.08,
               amplitude: float = 1.0) -> np.ndarray:
    """Harmonic tone: partials k*f0 with 1/k amplitude and exponential decay, faster after release."""
    f0 = 440.0 * 2 ** ((pitch - 69) / 12)
    n = int(round((duration + release) * sample_rate)) + FRAME_SIZE
    t = np.arange(n) / sample_rate
    env = np.exp(-t / decay)
    after = t > duration
    env[after] = np.exp(-duration / decay) * np.exp(-(t[after] - duration) / release_decay)
    tone = np.zeros(n)
    for k in range(1, n_partials + 1):
        if k * f0 < sample_rate / 2:
            tone += np.sin(2 * np.pi * k * f0 * t) / k
    return amplitude * env * tone


def _template_from_reference(spec: np.ndarray, n_note_frames: int) -> np.ndarray:
    """Average the reference frames falling in each of the 30 columns; unvisited columns
    take the mean of the visited ones."""
    n_bins, n_frames = spec.shape
    sums = np.zeros((n_bins, COLS_PER_PITCH))
    counts = np.zeros(COLS_PER_PITCH)
    for f, col in note_frame_columns(0, n_note_frames):
        if f < n_frames:
            sums[:, col] += spec[:, f]
            counts[col] += 1
    visited = counts > 0
    sums[:, visited] /= counts[visited]
    if not visited.all():
        sums[:, ~visited] = sums[:, visited].mean(axis=1, keepdims=True)
    return sums


def build_initial_template(layout: TemplateLayout = TemplateLayout(), reference=None,
                           sample_rate: int = SAMPLE_RATE, n_partials: int = 8) -> np.ndarray:
    """F x (30 * n_pitches) template matrix.

    ``reference`` maps each pitch to ``(magnitude spectrogram, note length in frames)``
    with the note starting at frame 0. Without it, every pitch is rendered with
    :func:`synth_note` and analysed with :func:`stft_magnitude`.
    """
    blocks = []
    for pitch in layout.pitches:
        if reference is None:
            duration = 1.5
            spec = stft_magnitude(synth_note(pitch, sample_rate, duration, n_partials=n_partials),
                                  sample_rate).values
            n_note = int(round(duration * sample_rate / HOP_SIZE))
        else:
            if pitch not in reference:
                raise DataError(f"no reference spectrogram for pitch {pitch}")
            spec, n_note = reference[pitch]
            spec = np.asarray(spec, dtype=float)
        if not np.any(spec > 0):
            raise DataError(f"reference for pitch {pitch} is silent")
        blocks.append(_template_from_reference(spec, int(n_note)))
    return np.hstack(blocks)


def build_initial_activation(notes: NoteList, layout: TemplateLayout, frame_duration: float,
                             n_frames: int) -> np.ndarray:
    """Score-informed activations at velocity / 127 on each note's attack, sustain and release rows."""
    H = np.zeros((layout.n_columns, n_frames))
    for note in notes:
        _paint_note(H, note, layout, frame_duration)
    return H


def _paint_note(H, note, layout, frame_duration):
    base = layout.first_row(note.pitch)
    on, off = note_frames(note, frame_duration)
    for f, col in note_frame_columns(on, off):
        if 0 <= f < H.shape[1]:
            H[base + col, f] = max(H[base + col, f], note.velocity / 127)


def note_activation(note: NoteEvent, layout: TemplateLayout, frame_duration: float, n_frames: int) -> np.ndarray:
    H = np.zeros((layout.n_columns, n_frames))
    _paint_note(H, note, layout, frame_duration)
    return H


@dataclass(frozen=True, eq=False)
class NMFState:
    W: np.ndarray
    H: np.ndarray
    layout: TemplateLayout
    errors: tuple = field(default=())  # Euclidean error before and after each step-B iteration

    def __post_init__(self):
        if self.W.shape[1] != self.H.shape[0] or self.W.shape[1] != self.layout.n_columns:
            raise DataError("W, H and layout disagree on the number of components")
        if np.any(self.W < 0) or np.any(self.H < 0):
            raise DataError("W and H must be non-negative")


def _normalize(M):
    top = M.max()
    return M / top if top > 0 else M


def euclidean_error(S, W, H) -> float:
    return float(np.linalg.norm(S - W @ H))


def _mult_update(M, num, den, eps):
    # components with no activity in the data have 0/0 ratios; leave them untouched
    return np.where(den > 0, M * num / (den + eps), M)


def _window_bounds(n_frames, n_windows):
    size = n_frames // n_windows
    bounds = [(k * size, (k + 1) * size) for k in range(n_windows)]
    bounds[-1] = (bounds[-1][0], n_frames)
    return [(a, b) for a, b in bounds if b > a]


def nmf_fit(S: SpectrogramMatrix, state: NMFState, n_windows: int = N_WINDOWS, n_iter: int = N_ITER,
            eps: float = EPS, callback=None) -> NMFState:
    """Two-step multiplicative-update NMF under the Euclidean distance.

    Step A updates W alone on ``n_windows`` consecutive, non-overlapping time
    windows (the last one takes the remainder). Step B runs ``n_iter`` standard
    updates of H then W. W and H are max-normalized before each step.
    ``callback(stage, W, H)`` sees every intermediate pair.
    """
    V = S.values if isinstance(S, SpectrogramMatrix) else np.asarray(S, dtype=float)
    if V.shape != (state.W.shape[0], state.H.shape[1]):
        raise DataError(f"spectrogram shape {V.shape} does not match W {state.W.shape} / H {state.H.shape}")
    if not np.any(V):
        return state
    W, H = _normalize(state.W.copy()), _normalize(state.H.copy())
    for lo, hi in _window_bounds(V.shape[1], n_windows):
        Hw = H[:, lo:hi]
        W = _mult_update(W, V[:, lo:hi] @ Hw.T, W @ Hw @ Hw.T, eps)
        if callback:
            callback("A", W, H)

    W, H = _normalize(W), _normalize(H)
    errors = [euclidean_error(V, W, H)]
    for _ in range(n_iter):
        H = _mult_update(H, W.T @ V, W.T @ W @ H, eps)
        if callback:
            callback("B-H", W, H)
        W = _mult_update(W, V @ H.T, W @ H @ H.T, eps)
        if callback:
            callback("B-W", W, H)
        errors.append(euclidean_error(V, W, H))
    return NMFState(W, H, state.layout, tuple(errors))


def extract_note_spectrogram(state: NMFState, note: NoteEvent, frame_duration: float,
                             n_out: int = NOTE_FRAMES) -> np.ndarray:
    """F x 30 spectrogram of one note: its template columns times its activations.

    Only the frames inside the note, ``[onset, offset)``, and the cells of its own
    score-informed activation are used; the rest is zero padding.
    """
    n_frames = state.H.shape[1]
    mask = note_activation(note, state.layout, frame_duration, n_frames) > 0
    if not mask.any():
        raise DataError(f"note {note} has no activation in the fitted state")
    on, off = note_frames(note, frame_duration)
    rows = state.layout.rows(note.pitch)
    out = np.zeros((state.W.shape[0], n_out))
    stop = min(off, n_frames, on + n_out)
    if stop > on:
        acts = np.where(mask[rows, on:stop], state.H[rows, on:stop], 0.0)
        out[:, :stop - on] = state.W[:, rows] @ acts
    return out


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


def mel_filterbank(n_bins: int, sample_rate: int = SAMPLE_RATE, n_mels: int = N_MELS) -> np.ndarray:
    """Triangular filters, peak 1, centres equally spaced on the mel scale from 0 Hz to Nyquist."""
    freqs = np.linspace(0, sample_rate / 2, n_bins)
    edges = mel_to_hz(np.linspace(0, hz_to_mel(sample_rate / 2), n_mels + 2))
    lower, centre, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lower) / (centre - lower)
    falling = (upper - freqs) / (upper - centre)
    return np.maximum(0.0, np.minimum(rising, falling))


def mfcc(spectral_column, sample_rate: int = SAMPLE_RATE, n_mels: int = N_MELS,
         n_coeffs: int = N_MFCC) -> np.ndarray:
    """First ``n_coeffs`` orthonormal DCT-II coefficients of the log mel power energies."""
    column = np.asarray(spectral_column, dtype=float)
    energies = mel_filterbank(len(column), sample_rate, n_mels) @ (column ** 2)
    return dct(np.log(np.maximum(energies, LOG_FLOOR)), type=2, norm="ortho")[:n_coeffs]


def separate_notes(samples, notes: NoteList, sample_rate: int = SAMPLE_RATE, layout: TemplateLayout | None = None):
    """Run the whole pipeline; returns one ``(30 x 13 MFCC, F x 30 spectrogram)`` pair per note."""
    S = stft_magnitude(samples, sample_rate)
    if layout is None:
        for note in notes:
            if note.pitch not in PIANO_PITCHES:
                raise DataError(f"pitch {note.pitch} outside the piano range")
        # rows of absent pitches stay zero under multiplicative updates
        layout = TemplateLayout(tuple(sorted(set(int(p) for p in notes.pitches))))
    W0 = build_initial_template(layout, sample_rate=sample_rate)
    H0 = build_initial_activation(notes, layout, S.frame_duration, S.n_frames)
    state = nmf_fit(S, NMFState(W0, H0, layout))
    out = []
    for note in notes:
        spec = extract_note_spectrogram(state, note, S.frame_duration)
        out.append((np.array([mfcc(spec[:, c], sample_rate) for c in range(spec.shape[1])]), spec))
    return out
