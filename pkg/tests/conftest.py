import numpy as np
import pytest

from perfkit.core import NoteEvent, NoteList


def random_notes(rng, n, max_onset=4.0, max_dur=1.0, pitch_range=(40, 90)):
    onsets = np.round(rng.uniform(0, max_onset, n), 3)
    durs = np.round(rng.uniform(0.05, max_dur, n), 3)
    return NoteList(
        NoteEvent(int(rng.integers(*pitch_range)), float(on), float(on + d), int(rng.integers(1, 128)))
        for on, d in zip(onsets, durs)
    )


@pytest.fixture
def report(capsys):
    """Print a criterion verdict outside pytest's capture, then assert it."""
    def _report(name, ok, detail=""):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}" + (f": {detail}" if detail else ""))
        assert ok, f"{name}: {detail}"
    return _report
