"""The twelve acceptance criteria, each reporting one PASS/FAIL line."""
import itertools
import json
import math
import time

import numpy as np
import pytest

from perfkit import align, dispersion, evalmeasure, melody, misalign, notesep
from perfkit.core import NoteEvent, NoteList

from conftest import random_notes


# ---------------------------------------------------------------- oracles

def enumerate_dtw(cost):
    """Minimum over every monotone (1,0)/(0,1)/(1,1) path, summed in path order."""
    n, m = cost.shape
    best = math.inf
    stack = [((0, 0), cost[0, 0])]
    while stack:
        (i, j), total = stack.pop()
        if (i, j) == (n - 1, m - 1):
            best = min(best, total)
            continue
        for di, dj in ((1, 0), (0, 1), (1, 1)):
            if i + di < n and j + dj < m:
                stack.append(((i + di, j + dj), total + cost[i + di, j + dj]))
    return best


def single_linkage_two_clusters(values):
    """Naive agglomeration down to two clusters; returns the max of the lower one."""
    clusters = [[v] for v in sorted(set(values))]
    while len(clusters) > 2:
        best = None
        for a, b in itertools.combinations(range(len(clusters)), 2):
            d = min(abs(x - y) for x in clusters[a] for y in clusters[b])
            if best is None or d < best[0]:
                best = (d, a, b)
        _, a, b = best
        clusters[a] = clusters[a] + clusters[b]
        del clusters[b]
    lower = min(clusters, key=lambda c: np.mean(c))
    return max(lower)


def alg1_graph(notes, probs, threshold):
    """Melo-digraph written straight from the algorithm: (node payloads, adjacency)."""
    nodes = [(-math.inf, 0.0, 0.0, None)]
    nodes += [(n.onset, n.offset, p, i) for i, (n, p) in enumerate(zip(notes, probs)) if p > threshold]
    nodes.append((math.inf, math.inf, -0.5, None))
    adj = {u: [] for u in range(len(nodes))}
    for u in range(len(nodes) - 1):
        later = [v for v in range(1, len(nodes)) if nodes[v][0] >= nodes[u][1]]
        if not later:
            continue
        first = min(nodes[v][0] for v in later)
        for v in later:
            if nodes[v][0] == first and (v == len(nodes) - 1 or nodes[v][2] >= threshold):
                adj[u].append(v)
    return nodes, adj


def best_path_probability(nodes, adj):
    end = len(nodes) - 1
    best = -math.inf
    stack = [(0, 0.0)]
    while stack:
        u, total = stack.pop()
        if u == end:
            best = max(best, total)
            continue
        for v in adj[u]:
            stack.append((v, total + (nodes[v][2] if v != end else 0.0)))
    return best


def naive_single_linkage(values, t):
    """Agglomerate clusters while some pair has nearest-member distance < t."""
    clusters = [[i] for i in range(len(values))]
    while len(clusters) > 1:
        best = None
        for a, b in itertools.combinations(range(len(clusters)), 2):
            d = min(abs(values[i] - values[j]) for i in clusters[a] for j in clusters[b])
            if best is None or d < best[0]:
                best = (d, a, b)
        d, a, b = best
        if d >= t:
            break
        clusters[a] = clusters[a] + clusters[b]
        del clusters[b]
    return clusters


def exhaustive_dispersion(points, p, metric):
    best = -math.inf
    for combo in itertools.combinations(range(len(points)), p):
        d = math.inf
        for i, j in itertools.combinations(combo, 2):
            diff = points[i] - points[j]
            d = min(d, float(np.sqrt(diff @ diff)) if metric == "euclidean" else float(np.abs(diff).sum()))
        best = max(best, d)
    return best


def direct_mfcc(column, sr, n_mels=40, n_coeffs=13):
    """Loop-by-loop mel filterbank, log and orthonormal DCT-II."""
    n_bins = len(column)
    nyq = sr / 2
    mel_max = 2595.0 * math.log10(1 + nyq / 700.0)
    edges = [700.0 * (10 ** (mel_max * k / (n_mels + 1) / 2595.0) - 1) for k in range(n_mels + 2)]
    energies = []
    for b in range(n_mels):
        lo, c, hi = edges[b], edges[b + 1], edges[b + 2]
        e = 0.0
        for k in range(n_bins):
            f = nyq * k / (n_bins - 1)
            if lo < f <= c:
                w = (f - lo) / (c - lo)
            elif c < f < hi:
                w = (hi - f) / (hi - c)
            else:
                w = 0.0
            e += w * column[k] ** 2
        energies.append(math.log(max(e, 1e-10)))
    out = []
    for q in range(n_coeffs):
        s = sum(energies[b] * math.cos(math.pi * q * (2 * b + 1) / (2 * n_mels)) for b in range(n_mels))
        out.append(s * math.sqrt((1 if q == 0 else 2) / n_mels))
    return np.array(out)


# ---------------------------------------------------------------- criteria

def test_01_dtw_optimality(report):
    start = time.perf_counter()
    mismatches = []
    for seed in range(100):
        cost = np.random.default_rng(seed).random((5, 5))
        path, total = align.dtw_from_cost(cost)
        if total != enumerate_dtw(cost) or not path.is_valid(5, 5):
            mismatches.append(seed)
    elapsed = time.perf_counter() - start
    report("1 DTW optimality", not mismatches and elapsed < 5.0,
           f"{100 - len(mismatches)}/100 exact, {elapsed:.2f} s")


def test_02_fastdtw_degeneracy(report):
    bad = []
    for seed in range(50):
        rng = np.random.default_rng(1000 + seed)
        n, m = rng.integers(1, 80, size=2)
        a = rng.random((n, 6)) * (rng.random((n, 1)) > 0.1)
        b = rng.random((m, 6)) * (rng.random((m, 1)) > 0.1)
        radius = int(max(n, m) + rng.integers(0, 5))
        exact_path, exact_cost = align.dtw(a, b, "cosine")
        path, cost = align.fastdtw(a, b, radius, "cosine")
        if path.pairs != exact_path.pairs or cost != exact_cost:
            bad.append(seed)
    report("2 FastDTW degeneracy", not bad, f"{50 - len(bad)}/50 bit-identical")


def test_03_note_alignment_interpolation(report):
    score = NoteList([NoteEvent(60, 0.0, 0.5), NoteEvent(62, 1.0, 1.5), NoteEvent(64, 2.0, 2.5)])
    perf = NoteList([NoteEvent(60, 0.0, 0.9), NoteEvent(64, 4.0, 4.8)])
    matching = align.NoteMatching(((0, 0), (2, 1)), (1,), ())
    out = align.note_align(score, perf, matching)
    interp = out[1]
    ok = (abs(interp.onset - 2.0) <= 1e-12 and abs(interp.offset - 3.0) <= 1e-12
          and (out[0].onset, out[0].offset) == (0.0, 0.9)
          and (out[2].onset, out[2].offset) == (4.0, 4.8))
    report("3 note-alignment interpolation", ok, f"unmatched onset -> {interp.onset!r}")


def test_04_melody_optimality(report):
    bad = []
    for seed in range(200):
        rng = np.random.default_rng(seed)
        notes = random_notes(rng, int(rng.integers(1, 13)))
        probs = np.round(rng.random(len(notes)), 3)
        thr = single_linkage_two_clusters(probs.tolist()) if len(set(probs)) >= 2 else -math.inf
        g = melody.build_melo_digraph(notes, probs, melody.cluster_threshold(probs))
        nodes, adj = alg1_graph(notes, probs, thr)
        oracle = best_path_probability(nodes, adj)
        mel = melody.extract_monophonic(g)
        got = float(sum(probs[g.nodes[v].note_index] for v in melody.melody_path(g)[1:-1]))
        overlap = any(a.offset > b.onset for a, b in zip(mel, list(mel)[1:]))
        if oracle == -math.inf:
            ok = len(mel) == 0
        else:
            ok = math.isclose(got, oracle, abs_tol=1e-9)
        if not ok or overlap:
            bad.append(seed)
    report("4 melody optimality", not bad, f"{200 - len(bad)}/200 match exhaustive paths, no overlaps")


def _fitted_model(seed=0):
    rng = np.random.default_rng(seed)
    pieces = []
    for _ in range(40):
        perf = random_notes(rng, int(rng.integers(20, 60)), max_onset=30.0)
        shift, spread = rng.normal(0, 0.2), rng.uniform(0.01, 0.1)
        notes = []
        for n in perf:
            on = max(0.0, n.onset + shift + rng.normal(0, spread))
            notes.append(n.replace(onset=on, offset=on + n.duration * rng.uniform(0.6, 1.6)))
        # NoteList sorts stably by (onset, pitch); track where each performance note lands
        order = sorted(range(len(notes)), key=lambda k: (notes[k].onset, notes[k].pitch))
        pieces.append((NoteList(notes), perf, [(j, k) for j, k in enumerate(order)]))
    return misalign.fit_misalignment_model(pieces)


def _tv(h, draws):
    if h.bin_edges[0] == h.bin_edges[-1]:
        return float(np.mean(draws != h.bin_edges[0]))
    counts, _ = np.histogram(draws, bins=h.bin_edges)
    return 0.5 * float(np.abs(counts / len(draws) - h.probabilities()).sum())


def test_05_misalignment_sampler(report):
    model = _fitted_model()
    tvs = {}
    for k, (name, h) in enumerate(model.histograms().items()):
        tvs[name] = _tv(h, misalign.sample_histogram(h, np.random.default_rng(k), size=100_000))
    tv_ok = all(v < 0.02 for v in tvs.values())

    fractions = []
    for seed in range(300):
        rng = np.random.default_rng(seed)
        notes = random_notes(rng, int(rng.integers(3, 200)))
        labels = misalign.generate_missing_extra(notes, rng)
        if np.any(labels.missing & labels.extra):
            fractions.append(-1.0)
        fractions.append(float((labels.missing | labels.extra).mean()))
    frac_ok = all(0.1 < f < 0.5 for f in fractions)

    ref = random_notes(np.random.default_rng(7), 50)

    def run(seed):
        rng = np.random.default_rng(seed)
        out = misalign.cluster_chords(misalign.sample_misaligned(ref, model, rng), 0.05)
        return out.to_json() + json.dumps(misalign.generate_missing_extra(out, rng).to_dict())
    rerun_ok = run(11) == run(11)

    report("5 misalignment sampler fidelity", tv_ok and frac_ok and rerun_ok,
           f"max TV {max(tvs.values()):.4f}, tagged fraction in [{min(fractions):.3f}, {max(fractions):.3f}], "
           f"rerun identical {rerun_ok}")


def test_06_chord_clustering(report):
    bad = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        notes = random_notes(rng, int(rng.integers(1, 40)), max_onset=3.0)
        t = float(rng.uniform(0.03, 0.07))
        out = misalign.cluster_chords(notes, t)
        distinct = np.unique(out.onsets)
        gaps_ok = len(distinct) < 2 or np.diff(distinct).min() >= t
        expected = []
        for members in naive_single_linkage(notes.onsets.tolist(), t):
            mean = sum(notes[i].onset for i in members) / len(members)
            for i in members:
                n = notes[i]
                off = n.offset if n.offset > mean else mean + n.duration
                expected.append((n.pitch, n.velocity, off, mean))
        got = sorted((n.pitch, n.velocity, n.offset, n.onset) for n in out)
        expected.sort()
        means_ok = len(got) == len(expected) and all(
            g[:2] == e[:2] and math.isclose(g[2], e[2], abs_tol=1e-12) and math.isclose(g[3], e[3], abs_tol=1e-12)
            for g, e in zip(got, expected))
        if not (gaps_ok and means_ok):
            bad.append(seed)
    report("6 chord clustering", not bad, f"{100 - len(bad)}/100 verified")


def test_07_pdispersion_soundness(report):
    bad = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(4, 15))
        p = int(rng.integers(2, min(4, n) + 1))
        metric = ("euclidean", "cityblock")[seed % 2]
        pts = rng.normal(size=(n, int(rng.integers(1, 4))))
        ps = dispersion.PointSet(pts, metric)
        opt = exhaustive_dispersion(pts, p, metric)
        for method in "ABCD":
            if dispersion.select_dispersed(ps, p, method).min_dist > opt + 1e-12:
                bad.append((seed, method))
    line = dispersion.PointSet(np.array([0, 1, 2, 10, 11, 12], dtype=float))
    exact = dispersion.brute_force_pdispersion(line, 2)
    report("7 p-dispersion soundness", not bad and exact.min_dist == 12.0,
           f"{400 - len(bad)}/400 heuristic runs below optimum, 1-D instance min_dist {exact.min_dist}")


def _factorizable_instance(seed):
    rng = np.random.default_rng(seed)
    layout = notesep.TemplateLayout((60, 64))
    F, T = 48, 60
    W0 = rng.random((F, layout.n_columns))
    H0 = rng.random((layout.n_columns, T)) * (rng.random((layout.n_columns, T)) < 0.3)
    S = notesep.SpectrogramMatrix(W0 @ H0)
    W_init = rng.random((F, layout.n_columns))
    H_init = np.where(H0 > 0, rng.random(H0.shape), 0.0)
    return S, notesep.NMFState(W_init, H_init, layout)


def _support(pitch, n_bins, n_partials, halfwidth=2):
    f0 = 440.0 * 2 ** ((pitch - 69) / 12)
    mask = np.zeros(n_bins, dtype=bool)
    for k in range(1, n_partials + 1):
        centre = k * f0 * notesep.FRAME_SIZE / notesep.SAMPLE_RATE
        mask[max(0, int(round(centre)) - halfwidth):int(round(centre)) + halfwidth + 1] = True
    return mask


def test_08_nmf(report):
    mono_ok, improve_ok, nonneg_ok = True, True, True
    for seed in range(20):
        S, state = _factorizable_instance(seed)
        mins = []
        fitted = notesep.nmf_fit(S, state, callback=lambda stage, W, H: mins.append(min(W.min(), H.min())))
        errs = np.array(fitted.errors)
        mono_ok &= bool(np.all(errs[1:] <= errs[:-1] * (1 + 1e-9)))
        improve_ok &= bool(errs[-1] < errs[0])
        nonneg_ok &= bool(min(mins) >= 0)

    sr, partials = notesep.SAMPLE_RATE, 4
    notes = NoteList([NoteEvent(60, 0.1, 0.8, 100), NoteEvent(64, 0.1, 0.8, 100)])
    onset = int(0.1 * sr)
    audio = np.zeros(onset + int(1.4 * sr))
    for n in notes:
        tone = notesep.synth_note(n.pitch, sr, duration=0.7, n_partials=partials)
        audio[onset:onset + len(tone)] += tone[:len(audio) - onset]
    S = notesep.stft_magnitude(audio, sr)
    layout = notesep.TemplateLayout((60, 64))
    W0 = notesep.build_initial_template(layout, n_partials=partials)
    H0 = notesep.build_initial_activation(notes, layout, S.frame_duration, S.n_frames)
    fitted = notesep.nmf_fit(S, notesep.NMFState(W0, H0, layout))
    shares = []
    for n in notes:
        spec = notesep.extract_note_spectrogram(fitted, n, S.frame_duration)
        energy = (spec ** 2).sum(axis=1)
        shares.append(float(energy[_support(n.pitch, len(energy), partials)].sum() / energy.sum()))
    sep_ok = min(shares) >= 0.9
    report("8 NMF monotonicity and separation", mono_ok and improve_ok and nonneg_ok and sep_ok,
           f"monotone {mono_ok}, improves {improve_ok}, non-negative {nonneg_ok}, "
           f"own-support energy {[round(s, 5) for s in shares]}")


def test_09_mfcc_oracle(report):
    worst = 0.0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        n_bins = int(rng.choice([257, 513, 1025]))
        column = rng.random(n_bins) * (rng.random(n_bins) < 0.7)
        worst = max(worst, float(np.abs(notesep.mfcc(column) - direct_mfcc(column, notesep.SAMPLE_RATE)).max()))
    const = notesep.mfcc(np.zeros(1025))
    const_ok = np.all(np.abs(const[1:]) < 1e-12) and const[0] != 0
    report("9 MFCC oracle", worst < 1e-6 and const_ok, f"max abs diff {worst:.2e}")


def _f1_instance(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 15))
    starts = np.cumsum(rng.uniform(0.5, 1.0, n))
    target = NoteList(NoteEvent(int(rng.integers(30, 90)), float(s), float(s + rng.uniform(0.1, 0.4)),
                                int(rng.integers(20, 100))) for s in starts)
    # predicted velocities are an unclipped affine image of the target ones, the
    # distortion the least-squares refit is meant to absorb
    slope = rng.uniform(0.8, 1.2)
    intercept = rng.uniform(1 - 20 * slope, 127 - 100 * slope)
    pred = []
    for note in target:
        if rng.random() < 0.2:
            continue
        on = note.onset + rng.normal(0, 0.05)
        off = note.offset + rng.normal(0, 0.05)
        vel = int(round(slope * note.velocity + intercept))
        pred.append(NoteEvent(note.pitch, max(on, 0.0), max(off, on + 0.01), vel))
    return NoteList(pred), target


def test_10_obj_f1(report):
    notes = NoteList([NoteEvent(60, 0.0, 0.5, 80), NoteEvent(64, 1.0, 1.5, 80)])
    shifted = NoteList([NoteEvent(60, 0.0, 0.5, 80), NoteEvent(64, 1.06, 1.5, 80)])
    identity = evalmeasure.obj_f1(notes, notes)[2]
    empty = evalmeasure.obj_f1(NoteList(), notes)[2]
    half = evalmeasure.obj_f1(shifted, notes)[2]
    bad = []
    tols = np.linspace(0.005, 0.3, 25)
    for seed in range(50):
        pred, target = _f1_instance(seed)
        f1s = [evalmeasure.obj_f1(pred, target, evalmeasure.MatchCriteria(t, t))[2] for t in tols]
        if np.any(np.diff(f1s) < 0):
            bad.append(seed)
    ok = identity == 1.0 and empty == 0.0 and half == 0.5 and not bad
    report("10 OBJ F1", ok, f"identity {identity}, empty {empty}, 0.06 s example {half}, "
                            f"{50 - len(bad)}/50 monotone in tolerance")


def test_11_evaluation_curves(report):
    ok = True
    for seed in range(30):
        rng = np.random.default_rng(seed)
        gt = random_notes(rng, int(rng.integers(3, 40)), max_onset=20.0)
        perfect = align.eval_matched_ratio(gt, gt)
        ok &= bool(np.all(perfect.onset_ratio == 1.0) and np.all(perfect.offset_ratio == 1.0))
        noisy = []
        for n in gt:
            on = n.onset + abs(rng.normal(0, 0.2))
            noisy.append(n.replace(onset=on, offset=on + n.duration * rng.uniform(0.5, 2.0)))
        noisy = NoteList(noisy)
        matching = align.identity_matching(len(gt))
        keep = [p for p in matching.matched if rng.random() < 0.7]
        if len({gt[i].onset for i, _ in keep}) >= 2:
            s = set(i for i, _ in keep)
            m = align.NoteMatching(tuple(keep), tuple(i for i in range(len(gt)) if i not in s), ())
            noisy = align.note_align(noisy, gt, m)
        curve = align.eval_matched_ratio(noisy, gt)
        for ratio in (curve.onset_ratio, curve.offset_ratio):
            ok &= bool(np.all(np.diff(ratio) >= 0) and ratio.min() >= 0 and ratio.max() <= 1)
    report("11 evaluation curves", ok, "30 pieces: monotone, bounded, perfect alignment gives 1.0")


def test_12_elastic_net(report):
    rng = np.random.default_rng(0)
    X = rng.normal(size=(200, 6))
    w_true = rng.normal(size=6)
    y = X @ w_true + 0.7
    w, b, _ = evalmeasure.elastic_net(X, y, 0.0, 0.0)
    recover = float(max(np.abs(w - w_true).max(), abs(b - 0.7)))
    w_big, _, _ = evalmeasure.elastic_net(X, y + rng.normal(0, 0.1, 200), 1e6, 0.1)
    shrink_ok = bool(np.all(w_big == 0.0))
    mono_ok = True
    for seed in range(10):
        r = np.random.default_rng(seed)
        Xs = r.normal(size=(50, 8))
        ys = Xs @ r.normal(size=8) + r.normal(0, 0.5, 50)
        _, _, hist = evalmeasure.elastic_net(Xs, ys, r.uniform(0.01, 0.5), r.uniform(0, 0.5))
        h = np.array(hist)
        mono_ok &= bool(np.all(h[1:] <= h[:-1] + 1e-12 * np.abs(h[:-1])))
    report("12 elastic net", recover < 1e-6 and shrink_ok and mono_ok,
           f"recovery error {recover:.1e}, full shrinkage {shrink_ok}, monotone objective {mono_ok}")
