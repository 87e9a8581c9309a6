"""Command line entry point.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .bvh import BVHParseError, read_bvh, write_bvh
from .dataset import DatasetError, build_dataset, load_dataset
from .features import RecordingError, read_recording, synthesize_trackers, write_recording
from .losses import NonFiniteLossError
from .net import CheckpointError, NonFiniteError, grad_check, load_params
from .rotation import DegenerateRotationError
from .runtime import (Calibration, CalibrationError, Server, StreamSession, calibrate,
                      frame_vectors, replay)
from .skeleton import CATEGORIES, MotionClip, load_description, resample, retarget_scale
from .standard import CMU_ANNOTATION

log = logging.getLogger("lobstr")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
DATA_ERRORS = (DatasetError, BVHParseError, RecordingError, CheckpointError, CalibrationError,
               cfgmod.ConfigError, FileNotFoundError, IsADirectoryError, KeyError)
NUMERIC_ERRORS = (NonFiniteLossError, NonFiniteError, DegenerateRotationError, FloatingPointError)


class UsageError(Exception):
    pass


class NumericFailure(Exception):
    pass


# -- subcommands ----------------------------------------------------------------

def cmd_prepare(args, cfg):
    data = cfg["data"]
    clips = []
    if args.synthetic:
        from .synth import synthetic_idle, synthetic_walk
        for item in args.synthetic:
            kind, _, secs = item.partition(":")
            secs = float(secs or 60)
            if kind == "walk":
                clips.append(synthetic_walk(secs, seed=len(clips), name=f"walk{len(clips)}"))
            elif kind == "idle":
                clips.append(synthetic_idle(secs, seed=len(clips), name=f"idle{len(clips)}"))
            else:
                raise UsageError(f"unknown synthetic clip kind {kind!r}")
    desc = load_description(args.skeleton) if args.skeleton else CMU_ANNOTATION
    cats = json.loads(Path(args.categories).read_text()) if args.categories else {}
    for path in _bvh_paths(args.bvh):
        cat = cats.get(path.stem, args.category)
        if cat not in CATEGORIES:
            raise DatasetError(f"{path.name}: unknown category {cat!r}")
        skel, clip = read_bvh(path, category=cat)
        clip = MotionClip(skel.annotate(desc), clip.fps, clip.root_pos, clip.root_rot,
                          clip.local_rot, clip.name, clip.category)
        clip = retarget_scale(clip, args.scale, args.root_shift)
        clips.append(resample(clip, 45.0))
    if not clips:
        raise UsageError("nothing to prepare: give --bvh files or --synthetic clips")
    manifest = build_dataset(clips, args.out, seed=int(data.get("seed", 0)),
                             sigma=float(data.get("sigma", 0.01)),
                             max_angle_deg=float(data.get("max_angle_deg", 1.5)),
                             noise=not args.no_noise)
    print(json.dumps(manifest["categories"], indent=2, sort_keys=True))
    return EXIT_OK


def _bvh_paths(items):
    out = []
    for item in items or ():
        p = Path(item)
        out.extend(sorted(p.glob("*.bvh")) if p.is_dir() else [p])
    return out


def cmd_train(args, cfg):
    from .train import train
    from .plotting import loss_curve
    ds = load_dataset(args.data)
    tc = cfgmod.train_config(cfg, epochs=args.epochs, batch_size=args.batch_size,
                             batches_per_epoch=args.batches_per_epoch, lr=args.lr, seed=args.seed)
    nc = cfgmod.net_config(cfg)
    params = None
    if args.resume:
        params, _ = load_params(args.resume, nc)
    t0 = time.perf_counter()

    def progress(row):
        if row["epoch"] % args.log_every == 0:
            print(f"epoch {row['epoch']:5d}  lr {row['lr']:.3e}  total {row['total']:.6f}  "
                  f"pose {row['pose']:.6f}  ({time.perf_counter() - t0:.0f}s)", flush=True)
    train(ds, tc, args.out, nc, params, progress)
    loss_curve(Path(args.out) / "loss.csv", Path(args.out) / "loss.png")
    return EXIT_OK


def cmd_eval(args, cfg):
    from .evaluate import run_evaluation
    ds = load_dataset(args.data)
    params, meta = load_params(args.checkpoint, cfgmod.net_config(cfg) if args.use_config else None)
    mode = meta.get("train_config", {}).get("angular_mode", "relative")
    report, _ = run_evaluation(ds, params, args.out, args.checkpoint, cfg, mode,
                               float(cfg["ik"].get("contact_threshold", 0.5)),
                               figures=not args.no_figures)
    t = report.total
    print("category,frames,contact_accuracy,rot_err_deg,pos_err_cm,toe_dist_err_cm,body_move_deg")
    for name, m in [*sorted(report.categories.items()), ("total", t)]:
        print(f"{name},{m.frames},{m.contact_accuracy:.4f},{m.rotational_error_deg:.3f},"
              f"{m.positional_error_cm:.3f},{m.toe_distance_error_cm:.3f},"
              f"{m.body_movement_deg:.3f}")
    return EXIT_OK


def _session_factory(args, cfg):
    params, meta = load_params(args.checkpoint)
    mode = meta.get("train_config", {}).get("angular_mode", "relative")
    cal = Calibration.load(args.calibration) if args.calibration else None
    ik = cfgmod.ik_config(cfg)
    post = not getattr(args, "no_postprocess", False)
    params.fast()
    return lambda: StreamSession(params, calibration=cal, ik=ik, angular_mode=mode,
                                 postprocess=post)


def cmd_replay(args, cfg):
    session = _session_factory(args, cfg)()
    results = replay(args.recording, session, args.out, args.bvh)
    print(f"{len(results)} pose frames written to {args.out}")
    return EXIT_OK


def cmd_serve(args, cfg):
    rt = cfg["runtime"]
    host = args.host or rt.get("host", "127.0.0.1")
    port = args.port if args.port is not None else int(rt.get("port", 7745))
    server = Server((host, port), _session_factory(args, cfg), args.max_connections)
    print(f"serving on {host}:{server.port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
    return EXIT_OK


def cmd_calibrate(args, cfg):
    frames, _ = read_recording(args.recording)
    if args.frames:
        frames = frames[:args.frames]
    skel = None
    if args.skeleton:
        from .skeleton import Skeleton
        skel = Skeleton.from_description(load_description(args.skeleton))
    cal = calibrate(frames, skel)
    cal.save(args.out)
    print(f"height scale {cal.height_scale:.6f}; calibration written to {args.out}")
    return EXIT_OK


def cmd_gradcheck(args, cfg):
    from .train import gradcheck_problem
    params, loss_fn = gradcheck_problem(args.hidden, args.latent, args.window, args.batch,
                                        args.seed)
    t0 = time.perf_counter()
    rep = grad_check(params, loss_fn, args.tolerance, args.eps)
    print("tensor,max_rel_error")
    for name, err in rep["per_tensor"].items():
        print(f"{name},{err:.3e}")
    print(f"# max {rep['max_rel_error']:.3e} tolerance {args.tolerance:g} "
          f"{'PASS' if rep['passed'] else 'FAIL'} ({time.perf_counter() - t0:.1f}s)")
    if not rep["passed"]:
        raise NumericFailure("gradient check failed")
    return EXIT_OK


def cmd_bvh_info(args, cfg):
    skel, clip = read_bvh(args.file)
    print(f"joints {len(skel)}  frames {len(clip)}  fps {clip.fps:g}  "
          f"duration {len(clip) / clip.fps:.2f}s")
    for j, name in enumerate(skel.names):
        depth = len(skel.chain(j)) - 1
        print(f"{'  ' * depth}{name}  offset {np.round(skel.offsets[j], 4).tolist()}")
    return EXIT_OK


def cmd_synth(args, cfg):
    from .synth import synthetic_idle, synthetic_walk, tpose_clip
    if args.kind == "tpose":
        clip = tpose_clip(max(1, int(round(args.seconds * 45))))
    else:
        fn = synthetic_walk if args.kind == "walk" else synthetic_idle
        clip = fn(args.seconds, seed=args.seed)
    if args.bvh:
        Path(args.bvh).write_text(write_bvh(clip))
    if args.recording:
        write_recording(synthesize_trackers(clip).frames(), args.recording)
    if not (args.bvh or args.recording):
        raise UsageError("synth needs --bvh and/or --recording")
    return EXIT_OK


def cmd_bench(args, cfg):
    from .plotting import latency_histogram
    session = _session_factory(args, cfg)()
    frames, _ = read_recording(args.recording)
    vecs = frame_vectors(frames)
    if len(vecs) < 47:
        raise DatasetError("benchmark recording needs at least 47 frames")
    lat = []
    k = 0
    while len(lat) < args.frames:
        r = session.step_vector(vecs[k % len(vecs)])
        k += 1
        if r.status == "ok":
            lat.append(r.latency_us["total"] / 1000.0)
        if k % len(vecs) == 0:
            session.reset()
    lat = np.array(lat)
    print(f"frames {lat.size}  mean {lat.mean():.2f} ms  p50 {np.percentile(lat, 50):.2f} ms  "
          f"p99 {np.percentile(lat, 99):.2f} ms")
    if args.plot:
        latency_histogram(lat, args.plot)
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lobstr", description=(
        "Lower-body pose and foot contact from head, hand and pelvis trackers."))
    ap.add_argument("--config", help=f"key-value config file (default: ${cfgmod.ENV_VAR})")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="build a training dataset from BVH or synthetic clips")
    p.add_argument("--bvh", nargs="*", help="BVH files or directories")
    p.add_argument("--synthetic", nargs="*", help="kind[:seconds], kind in {walk, idle}")
    p.add_argument("--skeleton", help="skeleton description JSON with annotations")
    p.add_argument("--categories", help="JSON mapping clip stem -> category")
    p.add_argument("--category", default="other", choices=CATEGORIES)
    p.add_argument("--scale", type=float, default=1.0, help="unit scale for BVH offsets/root")
    p.add_argument("--root-shift", type=float, default=0.0, help="root height shift after scaling")
    p.add_argument("--no-noise", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a network on a prepared dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--batches-per-epoch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--log-every", type=int, default=10)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metrics report, per-frame CSV and figures")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--use-config", action="store_true", help="take network sizes from config")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_eval)

    for name, fn, hlp in (("replay", cmd_replay, "offline replay of a tracker recording"),
                          ("serve", cmd_serve, "TCP streaming service (one client at a time)"),
                          ("bench", cmd_bench, "per-frame step latency")):
        p = sub.add_parser(name, help=hlp)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--calibration")
        p.add_argument("--no-postprocess", action="store_true")
        if name == "replay":
            p.add_argument("recording")
            p.add_argument("--out", required=True, help="JSON Lines output")
            p.add_argument("--bvh", help="also write a BVH of the result")
        elif name == "serve":
            p.add_argument("--host")
            p.add_argument("--port", type=int)
            p.add_argument("--max-connections", type=int)
        else:
            p.add_argument("recording")
            p.add_argument("--frames", type=int, default=1000)
            p.add_argument("--plot", help="latency histogram PNG")
        p.set_defaults(func=fn)

    p = sub.add_parser("calibrate", help="offsets and height scale from a T-pose recording")
    p.add_argument("recording")
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, help="use only the first N frames")
    p.add_argument("--skeleton", help="skeleton description JSON (default: standard)")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    p.add_argument("--hidden", type=int, default=16)
    p.add_argument("--latent", type=int, default=8)
    p.add_argument("--window", type=int, default=8)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bvh-info", help="print a BVH hierarchy summary")
    p.add_argument("file")
    p.set_defaults(func=cmd_bvh_info)

    p = sub.add_parser("synth", help="write a synthetic clip as BVH and/or tracker recording")
    p.add_argument("--kind", choices=("walk", "idle", "tpose"), default="walk")
    p.add_argument("--seconds", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bvh")
    p.add_argument("--recording")
    p.set_defaults(func=cmd_synth)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = cfgmod.load_config(args.config)
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NUMERIC_ERRORS + (NumericFailure,) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DATA_ERRORS + (ValueError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
