"""Quick brute-force oracle checks runnable from the command line."""
from __future__ import annotations

import math

import numpy as np

from . import align, dispersion, melody, misalign, notesep, oracles
from .core import NoteEvent, NoteList


def random_notes(rng, n, max_onset=4.0, max_dur=1.0):
    return NoteList(
        NoteEvent(int(rng.integers(40, 90)), float(on), float(on + d), int(rng.integers(1, 128)))
        for on, d in zip(np.round(rng.uniform(0, max_onset, n), 3), np.round(rng.uniform(0.05, max_dur, n), 3))
    )


def check_dtw(seeds=range(100)):
    for s in seeds:
        c = np.random.default_rng(s).random((5, 5))
        if align.dtw_from_cost(c)[1] != oracles.brute_force_dtw_cost(c):
            return False, f"seed {s}"
    return True, f"{len(seeds)} instances"


def check_fastdtw(seeds=range(20)):
    for s in seeds:
        rng = np.random.default_rng(s)
        a, b = rng.random((int(rng.integers(1, 20)), 3)), rng.random((int(rng.integers(1, 20)), 3))
        radius = max(len(a), len(b)) + int(rng.integers(0, 3))
        exact = align.dtw(a, b, "cosine")
        approx = align.fastdtw(a, b, radius, "cosine")
        if exact[1] != approx[1] or exact[0] != approx[0]:
            return False, f"seed {s}"
    return True, f"{len(seeds)} instances"


def check_melody(seeds=range(50)):
    for s in seeds:
        rng = np.random.default_rng(s)
        notes = random_notes(rng, int(rng.integers(1, 13)))
        probs = rng.random(len(notes))
        g = melody.build_melo_digraph(notes, probs, melody.cluster_threshold(probs))
        path = melody.melody_path(g)
        got = sum(g.nodes[v].probability for v in path[1:-1])
        if not math.isclose(got, oracles.best_melody_probability(g), abs_tol=1e-12):
            return False, f"seed {s}"
    return True, f"{len(seeds)} instances"


def check_dispersion(seeds=range(30)):
    for s in seeds:
        rng = np.random.default_rng(s)
        n = int(rng.integers(4, 12))
        ps = dispersion.PointSet(rng.normal(size=(n, 2)))
        p = int(rng.integers(2, min(4, n) + 1))
        best = dispersion.brute_force_pdispersion(ps, p).min_dist
        for m in dispersion.METHODS:
            if dispersion.select_dispersed(ps, p, m).min_dist > best:
                return False, f"seed {s} method {m}"
    return True, f"{len(seeds)} instances"


def check_chords(seeds=range(50)):
    for s in seeds:
        rng = np.random.default_rng(s)
        notes = random_notes(rng, int(rng.integers(1, 30)))
        t = float(rng.uniform(0.03, 0.07))
        out = np.unique(misalign.cluster_chords(notes, t).onsets)
        if len(out) > 1 and np.diff(out).min() < t:
            return False, f"seed {s}"
    return True, f"{len(seeds)} instances"


def check_mfcc():
    coeffs = notesep.mfcc(np.zeros(1025))
    ok = len(coeffs) == 13 and np.all(np.abs(coeffs[1:]) < 1e-9) and coeffs[0] != 0
    return bool(ok), "constant log-mel energies"


CHECKS = {
    "dtw-vs-enumeration": check_dtw,
    "fastdtw-degenerate-radius": check_fastdtw,
    "melody-vs-path-enumeration": check_melody,
    "dispersion-below-optimum": check_dispersion,
    "chord-cluster-gaps": check_chords,
    "mfcc-constant": check_mfcc,
}


def run_selftest(report=print) -> bool:
    ok_all = True
    for name, check in CHECKS.items():
        ok, detail = check()
        ok_all &= ok
        report(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return ok_all
