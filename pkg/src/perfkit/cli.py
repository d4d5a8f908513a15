"""Command-line front end: ``perfkit <subcommand> ...``.

Exit status is 0 on success, 1 on usage errors and 2 on bad input data.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import secrets
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import align, dispersion, evalmeasure, melody, misalign, notesep, selftest
from .core import PROBABILITY, DataError, NoteList, PianoRoll, load_notes, notes_to_pianoroll, stretch_to_duration

THREADS_ENV = "PERFKIT_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _workers() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        raise DataError(f"{THREADS_ENV} must be an integer") from None


def _check_inputs(*paths):
    for p in paths:
        if p is not None and not os.path.isfile(p):
            raise DataError(f"input file not found: {p}")


def _load(path) -> NoteList:
    try:
        return load_notes(path)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from exc


def read_matrix(path) -> np.ndarray:
    """Numeric CSV, skipping a header row when the first row is not numeric."""
    with open(path, newline="", encoding="utf-8") as f:
        rows = [r for r in csv.reader(f) if r and any(c.strip() for c in r)]
    if rows:
        try:
            [float(c) for c in rows[0]]
        except ValueError:
            rows = rows[1:]
    try:
        data = np.array([[float(c) for c in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric CSV cell ({exc})") from exc
    if data.size == 0:
        raise DataError(f"{path}: no data rows")
    if data.ndim != 2:
        raise DataError(f"{path}: rows have different lengths")
    return data


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _emit(text: str, out):
    if out is None:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        with open(out, "w", encoding="utf-8") as f:
            f.write(text)


def _notes_text(notes: NoteList, fmt: str) -> str:
    if fmt == "csv":
        return _csv_text(["pitch", "onset", "offset", "velocity"],
                         [[n.pitch, repr(n.onset), repr(n.offset), n.velocity] for n in notes])
    return notes.to_json()


def _curve_text(curve: align.EvalCurve, fmt: str) -> str:
    if fmt == "csv":
        rows = zip(curve.thresholds.tolist(), np.asarray(curve.onset_ratio).tolist(),
                   np.asarray(curve.offset_ratio).tolist())
        return _csv_text(["threshold", "onset_ratio", "offset_ratio"], rows)
    return json.dumps(curve.to_dict())


def _rng(args):
    if args.seed is None:
        args.seed = secrets.randbits(63)
        print(f"seed: {args.seed}", file=sys.stderr)
    return np.random.default_rng(args.seed)


# ---------------------------------------------------------------- subcommands

def cmd_misalign_fit(args):
    if len(args.score) != len(args.perf):
        raise UsageError("misalign fit: give one --perf per --score")
    _check_inputs(*args.score, *args.perf)
    pieces = []
    for s_path, p_path in zip(args.score, args.perf):
        score, perf = _load(s_path), _load(p_path)
        if len(score) == 0 or len(perf) == 0:
            raise DataError(f"{s_path} / {p_path}: empty note list")
        score = stretch_to_duration(score, perf.offsets.max() - perf.onsets.min())
        if args.match == "identity":
            if len(score) != len(perf):
                raise DataError(f"{s_path} / {p_path}: identity matching needs equal note counts")
            matching = align.identity_matching(len(score))
        else:
            matching = align.match_notes(score, perf)
        pieces.append((score, perf, matching))
    model = misalign.fit_misalignment_model(pieces, args.bins)
    _emit(model.to_json(), args.out)


def cmd_misalign_sample(args):
    _check_inputs(args.model, args.notes)
    with open(args.model, encoding="utf-8") as f:
        model = misalign.MisalignmentModel.from_json(f.read())
    reference = _load(args.notes)
    rng = _rng(args)
    notes = misalign.sample_misaligned(reference, model, rng)
    t = args.threshold if args.threshold is not None else float(rng.uniform(0.03, 0.07))
    notes = misalign.cluster_chords(notes, t)
    if args.labels_out:
        labels = misalign.generate_missing_extra(notes, rng)
        data = {"seed": args.seed, "threshold": t, **labels.to_dict()}
        _emit(json.dumps(data), args.labels_out)
    _emit(_notes_text(notes, args.format), args.out)


def cmd_align(args):
    _check_inputs(args.score, args.perf, args.gt)
    score, perf = _load(args.score), _load(args.perf)
    if args.stretch and len(score) and len(perf):
        score = stretch_to_duration(score, perf.offsets.max() - perf.onsets.min())
    if args.mode == "frame":
        aligned = align.frame_align_notes(score, perf, args.radius, args.cell_duration)
    else:
        aligned = align.note_align(score, perf, align.match_notes(score, perf))
    if args.gt:
        curve = align.eval_matched_ratio(aligned, _load(args.gt), _thresholds(args))
        _emit(_curve_text(curve, args.format), args.curve_out)
    _emit(_notes_text(aligned, args.format if not args.gt else "json"), args.out)


def _thresholds(args):
    if args.thresholds is None:
        return align.DEFAULT_THRESHOLDS
    try:
        values = sorted(float(x) for x in args.thresholds.split(",") if x.strip())
    except ValueError:
        raise UsageError(f"--thresholds must be comma-separated numbers, got {args.thresholds!r}") from None
    return tuple(values)


def cmd_eval(args):
    if len(args.aligned) != len(args.gt):
        raise UsageError("eval: give one --gt per --aligned")
    _check_inputs(*args.aligned, *args.gt)
    thresholds = _thresholds(args)
    jobs = list(zip(args.aligned, args.gt))

    def one(pair):
        return align.eval_matched_ratio(_load(pair[0]), _load(pair[1]), thresholds)

    with ThreadPoolExecutor(max_workers=_workers()) as pool:
        curves = list(pool.map(one, jobs))  # map keeps input order
    _emit(_curve_text(align.macro_average(curves), args.format), args.out)


def _parse_query(text):
    try:
        r0, c0, r1, c1 = (int(x) for x in text.split(","))
    except ValueError:
        raise UsageError(f"--query must be 'row0,col0,row1,col1', got {text!r}") from None
    return melody.QueryRegion((r0, c0), (r1, c1))


def cmd_melody(args):
    _check_inputs(args.notes, args.probs)
    notes = _load(args.notes)
    roll = notes_to_pianoroll(notes, args.cell_duration) if len(notes) else None
    if args.probs:
        probs = read_matrix(args.probs).ravel()
        if len(probs) != len(notes):
            raise DataError(f"{args.probs}: {len(probs)} probabilities for {len(notes)} notes")
        if np.any((probs < 0) | (probs > 1)):
            raise DataError(f"{args.probs}: probabilities must lie in [0, 1]")
    elif len(notes):
        prob_roll = PianoRoll(melody.pitch_height_predictor(roll.values), args.cell_duration, PROBABILITY)
        probs = melody.note_probabilities(prob_roll, notes)
    else:
        probs = np.zeros(0)
    result = melody.extract_melody(notes, probs, args.method)
    if args.saliency_out:
        if roll is None:
            raise DataError(f"{args.notes}: no notes to compute saliency on")
        if args.query is None:
            raise UsageError("--saliency-out needs --query")
        sal = melody.saliency_map(melody.pitch_height_predictor, roll, _parse_query(args.query),
                                  args.iters, args.rects, _rng(args))
        _emit(_csv_text(None, [[repr(float(v)) for v in row] for row in sal]), args.saliency_out)
    _emit(_notes_text(result, args.format), args.out)


def cmd_disperse(args):
    _check_inputs(args.points)
    ps = dispersion.PointSet(read_matrix(args.points), args.distance)
    if args.method == "exact":
        res = dispersion.brute_force_pdispersion(ps, args.p)
    else:
        res = dispersion.select_dispersed(ps, args.p, args.method, args.exclude_cluster)
    if args.format == "csv":
        text = _csv_text(["index"], [[i] for i in res.selected])
    else:
        text = json.dumps({"method": args.method, **res.to_dict()})
    _emit(text, args.out)


def _read_audio(path, pcm):
    if pcm or not path.lower().endswith(".csv"):
        raw = np.fromfile(path, dtype="<i2")
        return raw.astype(float) / 32768.0
    return read_matrix(path).ravel()


def cmd_separate(args):
    _check_inputs(args.audio, args.notes)
    samples = _read_audio(args.audio, args.pcm)
    notes = _load(args.notes)
    results = notesep.separate_notes(samples, notes, args.rate)
    if args.format == "csv":
        header = ["note", "frame"] + [f"mfcc{k}" for k in range(notesep.N_MFCC)]
        rows = [[i, f, *(repr(float(v)) for v in feats[f])]
                for i, (feats, _) in enumerate(results) for f in range(len(feats))]
        text = _csv_text(header, rows)
    else:
        text = json.dumps({"notes": [{"index": i, "mfcc": feats.tolist()} for i, (feats, _) in enumerate(results)]})
    _emit(text, args.out)


def cmd_measure(args):
    _check_inputs(args.pred, args.target, args.weights)
    pred, target = _load(args.pred), _load(args.target)
    p, r, f1 = evalmeasure.obj_f1(pred, target)
    out = {"precision": p, "recall": r, "f1": f1}
    if args.weights:
        with open(args.weights, encoding="utf-8") as f:
            model = evalmeasure.LinearMeasure.from_json(f.read())
        stats = model.stats or evalmeasure.ReferenceStats.identity()
        out["measure"] = evalmeasure.apply_measure(model, evalmeasure.measure_features(pred, target, stats))
    if args.format == "csv":
        _emit(_csv_text(list(out), [list(out.values())]), args.out)
    else:
        _emit(json.dumps(out), args.out)


def cmd_selftest(args):
    return 0 if selftest.run_selftest() else 2


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="RNG seed (printed when omitted)")
    common.add_argument("--out", default=None, help="output path (stdout when omitted)")
    common.add_argument("--format", choices=("json", "csv"), default="json")

    parser = _Parser(prog="perfkit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    mis = sub.add_parser("misalign", help="fit or sample the misalignment model")
    mis_sub = mis.add_subparsers(dest="action", required=True, parser_class=_Parser)
    fit = mis_sub.add_parser("fit", parents=[common])
    fit.add_argument("--score", action="append", required=True)
    fit.add_argument("--perf", action="append", required=True)
    fit.add_argument("--bins", type=int, default=misalign.DEFAULT_BINS)
    fit.add_argument("--match", choices=("auto", "identity"), default="auto")
    fit.set_defaults(func=cmd_misalign_fit)
    smp = mis_sub.add_parser("sample", parents=[common])
    smp.add_argument("--model", required=True)
    smp.add_argument("--notes", required=True)
    smp.add_argument("--threshold", type=float, default=None,
                     help="chord clustering threshold in seconds (drawn from [0.03, 0.07] when omitted)")
    smp.add_argument("--labels-out", default=None, help="write missing/extra labels here")
    smp.set_defaults(func=cmd_misalign_sample)

    al = sub.add_parser("align", parents=[common], help="align a score to a performance")
    al.add_argument("--score", required=True)
    al.add_argument("--perf", required=True)
    al.add_argument("--mode", choices=("frame", "note"), default="frame")
    al.add_argument("--radius", type=int, default=align.DEFAULT_RADIUS)
    al.add_argument("--cell-duration", type=float, default=align.DEFAULT_CELL_DURATION)
    al.add_argument("--no-stretch", dest="stretch", action="store_false",
                    help="skip stretching the score to the performance span")
    al.add_argument("--gt", default=None, help="ground truth for an evaluation curve")
    al.add_argument("--curve-out", default=None)
    al.add_argument("--thresholds", default=None)
    al.set_defaults(func=cmd_align)

    ev = sub.add_parser("eval", parents=[common], help="matched-ratio curves, macro-averaged")
    ev.add_argument("--aligned", action="append", required=True)
    ev.add_argument("--gt", action="append", required=True)
    ev.add_argument("--thresholds", default=None, help="comma-separated seconds")
    ev.set_defaults(func=cmd_eval)

    me = sub.add_parser("melody", parents=[common], help="extract a melody line")
    me.add_argument("--notes", required=True)
    me.add_argument("--method", choices=("skyline", "threshold", "graph"), default="graph")
    me.add_argument("--probs", default=None, help="CSV with one probability per note")
    me.add_argument("--cell-duration", type=float, default=1.0 / melody.SCORE_CELLS_PER_BEAT)
    me.add_argument("--saliency-out", default=None)
    me.add_argument("--query", default=None, help="row0,col0,row1,col1")
    me.add_argument("--iters", type=int, default=melody.DEFAULT_SALIENCY_ITERS)
    me.add_argument("--rects", type=int, default=melody.DEFAULT_RECTS_PER_ITER)
    me.set_defaults(func=cmd_melody)

    di = sub.add_parser("disperse", parents=[common], help="max-min diverse subset")
    di.add_argument("--points", required=True)
    di.add_argument("--p", type=int, required=True)
    di.add_argument("--method", choices=(*dispersion.METHODS, "exact"), default="A")
    di.add_argument("--distance", choices=tuple(dispersion.METRICS), default="euclidean")
    di.add_argument("--exclude-cluster", action="store_true")
    di.set_defaults(func=cmd_disperse)

    se = sub.add_parser("separate", parents=[common], help="NMF note separation to MFCCs")
    se.add_argument("--audio", required=True, help="samples CSV or 16-bit little-endian PCM")
    se.add_argument("--notes", required=True)
    se.add_argument("--rate", type=int, default=notesep.SAMPLE_RATE)
    se.add_argument("--pcm", action="store_true", help="treat --audio as raw PCM whatever its name")
    se.set_defaults(func=cmd_separate)

    ms = sub.add_parser("measure", parents=[common], help="OBJ F1 and optional linear measure")
    ms.add_argument("--pred", required=True)
    ms.add_argument("--target", required=True)
    ms.add_argument("--weights", default=None)
    ms.set_defaults(func=cmd_measure)

    st = sub.add_parser("selftest", help="run the brute-force oracle checks")
    st.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args) or 0
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (DataError, ValueError, OSError) as exc:
        print(f"perfkit: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
