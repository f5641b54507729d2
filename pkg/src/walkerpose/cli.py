"""Command line interface: ``walkerpose <verb> [options]``.

Exit codes: 0 success, 2 configuration error, 3 runtime stage failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import errors
from .filter import OneEuroConfig, filter_sequence
from .geometry import default_rig, load_rig, save_rig
from .lifter import Lifter, ProjectionResidualLifter, VARIANTS, load_model
from .metrics import evaluate
from .preprocess import downsample_sequence, read_frame_dir
from .skeleton import default_topology, format_sequence, read_sequence, write_sequence
from .synthgait import NOISE_PRESETS, SPEEDS, TRIALS, record, render_frame, split_subjects

log = logging.getLogger("walkerpose")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
_CONFIG_ERRORS = (errors.ConfigError, errors.CalibrationError, errors.ModelFormatError,
                  errors.SequenceFormatError, FileNotFoundError, IsADirectoryError)


def _recording_stem(subject, speed, trial):
    return f"s{subject:02d}_v{int(round(speed * 100)):03d}_{trial}"


# ---------------------------------------------------------------------------
# verbs


def cmd_gen(args):
    out = Path(args.out)
    (out / "sequences").mkdir(parents=True, exist_ok=True)
    noise = NOISE_PRESETS[args.noise_preset]
    if args.dead_pixel_rate is not None:
        noise = replace(noise, dead_pixel_rate=args.dead_pixel_rate)
    rig = load_rig(args.calib) if args.calib else default_rig()
    save_rig(rig, out / "calibration.json")
    splits = split_subjects(args.subjects)
    split_of = {s: name for name, ids in splits.items() for s in ids}
    recordings = []
    for subject in range(args.subjects):
        for speed in args.speeds:
            for trial in args.trials:
                rec = record(subject, speed, trial, args.duration, args.rate, noise, args.seed, rig)
                stem = _recording_stem(subject, speed, trial)
                write_sequence(out / "sequences" / f"{stem}.gt.csv", rec.timestamps, rec.gt, "3d")
                write_sequence(out / "sequences" / f"{stem}.det.csv", rec.timestamps, rec.detections, "2d")
                recordings.append({"subject": subject, "speed": speed, "trial": trial, "split": split_of[subject],
                                   "gt": f"sequences/{stem}.gt.csv", "detections": f"sequences/{stem}.det.csv",
                                   "frames": len(rec.timestamps)})
                log.info("wrote %s (%d frames)", stem, len(rec.timestamps))
    manifest = {"seed": args.seed, "rate": args.rate, "duration": args.duration,
                "noise": {"preset": args.noise_preset, **noise.__dict__}, "speeds": list(args.speeds),
                "trials": list(args.trials), "splits": splits, "calibration": "calibration.json",
                "recordings": recordings}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=list) + "\n", encoding="utf-8")
    print(f"wrote {len(recordings)} recordings to {out}")
    return EXIT_OK


def _load_manifest(data):
    path = Path(data) / "manifest.json"
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise errors.ConfigError(f"no manifest.json in {data}; run 'gen' first") from None
    except json.JSONDecodeError as exc:
        raise errors.ConfigError(f"bad manifest {path}: {exc}") from None


def load_split(data, split, hz=None):
    """Stack one dataset split: ``(observations, ground truth)`` with absolute ground truth."""
    manifest = _load_manifest(data)
    xs, gs = [], []
    for rec in manifest["recordings"]:
        if rec["split"] != split:
            continue
        ts, det, _, _ = read_sequence(Path(data) / rec["detections"])
        ts_gt, gt, _, _ = read_sequence(Path(data) / rec["gt"])
        if len(ts) != len(ts_gt):
            raise errors.LengthMismatch(f"{rec['detections']} and {rec['gt']} differ in length")
        sel = slice(None) if hz is None else downsample_sequence(ts, manifest["rate"], hz)
        xs.append(det[sel])
        gs.append(gt[sel])
    if not xs:
        raise errors.ConfigError(f"split {split!r} is empty in {data}")
    return np.concatenate(xs), np.concatenate(gs)


def _root_relative(gt):
    r = default_topology().root_index
    return gt - gt[:, r:r + 1]


def cmd_train(args):
    manifest = _load_manifest(args.data)
    rig = load_rig(Path(args.data) / manifest["calibration"])
    X, gt = load_split(args.data, "train", args.train_hz)
    Xv, gtv = load_split(args.data, "val", args.train_hz)
    params = dict(epochs=args.epochs, batch_size=args.batch, lr_init=args.lr, seed=args.seed,
                  hidden_width=args.hidden, n_blocks=args.blocks)
    if args.variant == "projection-residual":
        est = ProjectionResidualLifter(rig=rig, **params)
    else:
        est = Lifter(variant=args.variant, **params)
    log.info("training %s on %d samples", args.variant, len(X))
    est.fit(X, _root_relative(gt), eval_set=(Xv, _root_relative(gtv)))
    for h in est.history_:
        log.info("epoch %d lr %.3g loss %.6f val %.2f mm", h["epoch"], h["lr"], h["train_loss"], h["val_mpjpe_mm"])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    est.save(out)
    params = {k: v for k, v in est.get_params(deep=False).items() if k != "rig"}
    history = {"variant": args.variant, "params": params,
               "samples": len(X), "history": est.history_}
    Path(str(out) + ".history.json").write_text(json.dumps(history, indent=2, sort_keys=True) + "\n")
    best = min(est.history_, key=lambda h: h["val_mpjpe_mm"])
    print(f"saved {out} (best epoch {best['epoch']}, val MPJPE {best['val_mpjpe_mm']:.2f} mm)")
    return EXIT_OK


def cmd_eval(args):
    from .runtime import predict_absolute

    if args.model:
        if not args.data:
            raise errors.ConfigError("--model needs --data")
        manifest = _load_manifest(args.data)
        rig = load_rig(Path(args.data) / manifest["calibration"])
        X, gt = load_split(args.data, args.split)
        pred = predict_absolute(load_model(args.model, rig=rig), X, rig)
        space = "3d"
    else:
        if not (args.pred and args.gt):
            raise errors.ConfigError("eval needs --pred and --gt, or --model and --data")
        _, pred, kind_p, _ = read_sequence(args.pred)
        _, gt, kind_g, _ = read_sequence(args.gt)
        space = args.space or kind_g
        if space == "2d" and kind_g == "2d":
            gt = gt[..., :2]
        if space == "2d":
            pred = pred[..., :2]
    report = evaluate(pred, gt, space=space, pck_threshold=args.pck_threshold)
    print(report.to_text())
    if args.json:
        Path(args.json).write_text(report.to_json() + "\n", encoding="utf-8")
    else:
        print(report.to_json())
    if args.per_joint:
        Path(args.per_joint).write_text(report.per_joint_table(), encoding="utf-8")
    return EXIT_OK


def cmd_filter(args):
    ts, vals, kind, topo = read_sequence(args.input)
    cfg = OneEuroConfig(args.fc_min, args.beta, args.d_cutoff)
    out = vals.copy()
    if len(vals):
        if kind == "3d":
            out = filter_sequence(ts, vals, cfg)
        else:
            out[..., :2] = filter_sequence(ts, vals[..., :2], cfg)
    text = format_sequence(ts, out, kind, topo)
    _emit(text, args.output)
    return EXIT_OK


def _emit(text, dest):
    if dest in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(dest).write_text(text, encoding="utf-8")


def cmd_run(args):
    from .runtime import ExternalStreamDetector, Pipeline, PipelineConfig, SyntheticDetector

    cfg = PipelineConfig(rig=args.calib, model=args.model, fc_min=args.fc_min, beta=args.beta,
                         d_cutoff=args.d_cutoff, filter_enabled=not args.no_filter, detector=args.detector,
                         detections=args.detections, frames=args.frames, output=args.output,
                         threaded=args.threaded, queue_size=args.queue_size, drop_policy=args.drop_policy).validate()
    rig = cfg.load_rig()
    lifter = cfg.load_lifter(rig)
    stream = None
    if cfg.detector == "external-stream":
        if cfg.detections is None:
            raise errors.ConfigError("external-stream detector needs --detections (file or '-')")
        stream = sys.stdin if cfg.detections == "-" else open(cfg.detections, encoding="utf-8")
        detector = ExternalStreamDetector(stream)
        if cfg.frames:
            frames = enumerate(read_frame_dir(cfg.frames))
        else:
            frames = _unbounded_none()
    else:
        noise = NOISE_PRESETS[args.noise_preset]
        rec = record(args.subject, args.speed, args.trial, args.duration, 30.0, noise, args.seed, rig)
        detector = SyntheticDetector(rec.detections, rec.timestamps)
        frames = ((i, render_frame(rec.detections[i], rec.timestamps[i])) for i in range(len(rec.timestamps)))
    pipe = Pipeline(lifter, detector, rig, cfg.filter_config(), filter_2d=args.filter_2d)
    ts, coords = [], []
    try:
        for res in pipe.run(frames, threaded=cfg.threaded, queue_size=cfg.queue_size, drop_policy=cfg.drop_policy):
            ts.append(res.skeleton.timestamp)
            coords.append(res.skeleton.coords)
    finally:
        if stream is not None and stream is not sys.stdin:
            stream.close()
    _emit(format_sequence(ts, np.array(coords).reshape(len(coords), -1, 3), "3d"), cfg.output)
    s = pipe.stats
    print(f"processed {s.processed} frames, dropped {s.dropped}, stage overruns {s.timeouts}, "
          f"flagged keypoints {s.flagged}", file=sys.stderr)
    for index, reason in s.errors:
        log.warning("frame %d: %s", index, reason)
    return EXIT_OK


def _unbounded_none():
    i = 0
    while True:
        yield i, None
        i += 1


def cmd_bench(args):
    from .runtime import Pipeline, SyntheticDetector, bench, untrained_lifter

    rig = load_rig(args.calib) if args.calib else default_rig()
    lifter = load_model(args.model, rig=rig) if args.model else untrained_lifter(args.variant, rig, args.seed)
    total = args.n_frames + args.warmup
    rec = record(8, 0.5, "forward", total / 30.0 + 0.1, 30.0, NOISE_PRESETS["paper-like"], args.seed, rig)
    frames = ((i, render_frame(rec.detections[i], rec.timestamps[i])) for i in range(len(rec.timestamps)))
    pipe = Pipeline(lifter, SyntheticDetector(rec.detections, rec.timestamps), rig)
    report = bench(pipe, frames, args.n_frames, args.warmup)
    print(report.to_text())
    print(f"non-detector stages mean {report.non_detector_mean_ms:.3f} ms")
    if args.json:
        Path(args.json).write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_calib_check(args):
    from .synthgait import generate_sequence, render_observations, subject_params

    rig = load_rig(args.calib)
    for name in ("posture", "gait"):
        c = rig.camera(name)
        print(f"{name:<8} fx={c.fx:g} fy={c.fy:g} cx={c.cx:g} cy={c.cy:g} {c.width}x{c.height} "
              f"depth ({c.depth_min:g}, {c.depth_max:g}] m")
    t = rig.gait_to_posture
    print(f"gait->posture translation {np.round(t.translation, 4).tolist()} m")
    if args.frustum:
        for speed in SPEEDS:
            for trial in TRIALS:
                seq = generate_sequence(subject_params(0, 0, speed=speed, trial=trial, duration=4.0))
                try:
                    render_observations(seq, rig)
                except errors.OutOfFrustum as exc:
                    raise errors.CalibrationError("extrinsics", f"synthetic walker leaves the view: {exc}") from None
        print("synthetic walker stays inside both views")
    print("calibration OK")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _global_flags(parser, suppress):
    default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--config", default=default(None), help="JSON file with option defaults")
    parser.add_argument("--seed", type=int, default=default(0), help="random seed (default 0)")
    parser.add_argument("-v", "--verbose", action="count", default=default(0), help="more logging (repeatable)")


def build_parser():
    p = argparse.ArgumentParser(prog="walkerpose", description="Walker-mounted 3D gait pose toolkit")
    _global_flags(p, suppress=False)
    sub = p.add_subparsers(dest="verb", required=True, metavar="VERB")

    def verb(name, fn, help_):
        sp = sub.add_parser(name, help=help_, description=help_)
        _global_flags(sp, suppress=True)
        sp.set_defaults(func=fn)
        return sp

    g = verb("gen", cmd_gen, "generate a synthetic dataset (sequence files, calibration, manifest)")
    g.add_argument("--out", required=True)
    g.add_argument("--subjects", type=int, default=10)
    g.add_argument("--speeds", type=float, nargs="+", default=list(SPEEDS))
    g.add_argument("--trials", nargs="+", choices=TRIALS, default=list(TRIALS))
    g.add_argument("--duration", type=float, default=20.0, help="seconds per recording")
    g.add_argument("--rate", type=float, default=30.0, help="frame rate, Hz")
    g.add_argument("--noise-preset", choices=sorted(NOISE_PRESETS), default="paper-like")
    g.add_argument("--dead-pixel-rate", type=float, default=None, help="override the preset's dead-pixel rate")
    g.add_argument("--calib", help="rig calibration to render with (default: built-in rig)")

    t = verb("train", cmd_train, "train a lifting model on a generated dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--variant", choices=VARIANTS, default="default")
    t.add_argument("--epochs", type=int, default=30)
    t.add_argument("--batch", type=int, default=32)
    t.add_argument("--lr", type=float, default=2e-3, help="initial learning rate")
    t.add_argument("--hidden", type=int, default=256)
    t.add_argument("--blocks", type=int, default=2)
    t.add_argument("--train-hz", type=float, default=10.0, help="downsample training data to this rate")

    e = verb("eval", cmd_eval, "score predictions against ground truth")
    e.add_argument("--pred")
    e.add_argument("--gt")
    e.add_argument("--model", help="evaluate a model on a dataset split instead of --pred/--gt")
    e.add_argument("--data")
    e.add_argument("--split", default="test", choices=("train", "val", "test"))
    e.add_argument("--space", choices=("2d", "3d"))
    e.add_argument("--pck-threshold", type=float)
    e.add_argument("--json", help="write the JSON summary here instead of stdout")
    e.add_argument("--per-joint", help="write a per-joint boxplot table here")

    f = verb("filter", cmd_filter, "one-euro filter a skeleton sequence file")
    f.add_argument("--input", required=True)
    f.add_argument("--output", default="-")
    f.add_argument("--fc-min", type=float, default=1.5)
    f.add_argument("--beta", type=float, default=0.15)
    f.add_argument("--d-cutoff", type=float, default=1.0)

    r = verb("run", cmd_run, "stream detections through lift and filter")
    r.add_argument("--model", required=True)
    r.add_argument("--calib")
    r.add_argument("--detector", choices=("external-stream", "synthetic"), default="external-stream")
    r.add_argument("--detections", help="2d sequence file, or '-' for stdin")
    r.add_argument("--frames", help="frame blob directory to preprocess alongside the detections")
    r.add_argument("--output", default="-")
    r.add_argument("--threaded", action="store_true")
    r.add_argument("--queue-size", type=int, default=4)
    r.add_argument("--drop-policy", choices=("block", "keep-latest"), default="block")
    r.add_argument("--no-filter", action="store_true")
    r.add_argument("--filter-2d", action="store_true", help="also smooth 2D detections before lifting")
    r.add_argument("--fc-min", type=float, default=1.5)
    r.add_argument("--beta", type=float, default=0.15)
    r.add_argument("--d-cutoff", type=float, default=1.0)
    r.add_argument("--subject", type=int, default=8, help="synthetic detector: subject id")
    r.add_argument("--speed", type=float, default=0.5)
    r.add_argument("--trial", choices=TRIALS, default="forward")
    r.add_argument("--duration", type=float, default=10.0)
    r.add_argument("--noise-preset", choices=sorted(NOISE_PRESETS), default="paper-like")

    b = verb("bench", cmd_bench, "time every pipeline stage with the synthetic detector")
    b.add_argument("--model", help="model file (default: untrained network of the same size)")
    b.add_argument("--variant", choices=VARIANTS, default="default")
    b.add_argument("--calib")
    b.add_argument("--n-frames", type=int, default=1000)
    b.add_argument("--warmup", type=int, default=10)
    b.add_argument("--json")

    c = verb("calib-check", cmd_calib_check, "validate a rig calibration file")
    c.add_argument("calib")
    c.add_argument("--frustum", action="store_true", help="also check the synthetic walker stays in view")
    return p


def _config_path(argv):
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if a.startswith("--config="):
            return a.split("=", 1)[1]
    return None


def _apply_config(parser, argv, path):
    """Use a JSON object of option values as defaults for the chosen verb.

    Top-level scalar keys apply to any verb; a nested object keyed by the verb
    name applies to that verb only.
    """
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise errors.ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise errors.ConfigError("config must be a JSON object")
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    verb = next((a for a in argv if a in subparsers.choices), None)
    if verb is None:
        return
    values = {k.replace("-", "_"): v for k, v in doc.items() if not isinstance(v, dict)}
    values.update({k.replace("-", "_"): v for k, v in doc.get(verb, {}).items()})
    sub = subparsers.choices[verb]
    known = {a.dest for a in sub._actions} - {"help", "config"}
    unknown = sorted(set(values) - known)
    if unknown:
        raise errors.ConfigError(f"unknown config keys for {verb}: {unknown}")
    sub.set_defaults(**values)
    for a in sub._actions:
        if a.dest in values:
            a.required = False


def main(argv=None):
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        path = _config_path(argv)
        if path is not None:
            _apply_config(parser, argv, path)
        args = parser.parse_args(argv)
    except errors.WalkerPoseError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:
        return int(exc.code or 0)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except _CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except errors.WalkerPoseError as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
