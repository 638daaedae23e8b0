"""Command-line entry point: ``flashstereo <subcommand> ...``.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__, io
from .errors import ConfigError, FlashStereoError, StageError

logger = logging.getLogger("flashstereo")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _overrides(pairs: list[str] | None) -> dict:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = _parse_value(v)
    return out


def _limit_threads(n: int | None) -> None:
    if n is None:
        return
    if n < 1:
        raise ConfigError("--threads must be >= 1")
    # BLAS pools read these lazily on first use
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    from .sim import (
        load_sim_config,
        make_patch_corpus,
        render_frames,
        SceneRenderer,
        sim_config_dict,
        simulate_detections,
    )
    from .pipeline import set_dotted

    d = io.read_json(args.config) if args.config else {}
    for k, v in _overrides(args.set).items():
        set_dotted(d, k, v)
    sc, rig, art, dims = load_sim_config(d)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(out / "sim_config.json", sim_config_dict(sc, rig, art, dims))
    truth = {"t": rig.pose.t.tolist(), "R": rig.pose.R.tolist(), "delta_k": rig.delta_k,
             "separation_m": rig.separation_m, "fps": rig.fps}
    io.write_json(out / "rig_truth.json", truth)
    run_cfg = {"version": 1, "separation_m": rig.separation_m, "height_m": rig.height_m, "fps": rig.fps,
               "n_frames": sc.duration_frames, "seed": sc.seed, "output_dir": "run"}
    if args.mode == "detections":
        res = simulate_detections(sc, rig, dims)
        io.write_detections(out / "detections_cam1.csv", res.det1)
        io.write_detections(out / "detections_cam2.csv", res.det2)
        res.write_ground_truth(out / "ground_truth.csv")
        run_cfg.update(camera1={"detections": "detections_cam1.csv"}, camera2={"detections": "detections_cam2.csv"})
        print(f"simulated {len(res.events)} flashes: {len(res.det1)} / {len(res.det2)} detections -> {out}")
    else:
        r = render_frames(sc, rig, art, dims, out, threads=args.threads or 1)
        run_cfg.update(camera1={"frames": "cam1"}, camera2={"frames": "cam2"})
        print(f"rendered {r.n_frames} frames per camera at {dims.width}x{dims.height} -> {out}")
    if args.patches:
        ds = make_patch_corpus(SceneRenderer(sc, rig, art, dims), out / "patches", args.patches, seed=sc.seed)
        print(f"patch corpus: {int(ds.labels.sum())} flash / {int((1 - ds.labels).sum())} artifact -> {out / 'patches'}")
    io.write_json(out / "run_config.json", run_cfg)
    return 0


def cmd_detect(args) -> int:
    from .detect import detect_frames

    dets = list(detect_frames(io.open_frames(args.frames), args.threshold, args.tau, args.fps, args.blur, args.camera))
    io.write_detections(args.out, dets)
    print(f"{len(dets)} detections -> {args.out}")
    return 0


def cmd_train(args) -> int:
    from .classify import Hyperparams, PatchDataset, chroma_ablation, evaluate, train

    ds = PatchDataset.from_patches(io.read_patch_dir(args.patches))
    hp = Hyperparams(learning_rate=args.lr, epochs=args.epochs, l2=args.l2, seed=args.seed)
    tr, val = ds.split(args.val_fraction, args.seed) if args.val_fraction > 0 else (ds, None)
    model = train(tr, hp)
    model.save(args.out)
    msg = f"trained on {len(tr)} patches -> {args.out}"
    if val is not None and len(val):
        rep = evaluate(model, val).to_dict()
        msg += f"; validation F1 {rep['f1']:.3f} (n={rep['n']})"
        if args.ablation:
            rep["chroma_ablation"] = chroma_ablation(tr, val, hp)
        if args.metrics:
            io.write_json(args.metrics, rep)
    print(msg)
    return 0


def cmd_classify(args) -> int:
    from .classify import filter_detections, load_classifier

    model = load_classifier(args.model)
    dets = io.read_detections(args.detections)
    annotated = filter_detections(dets, io.FrameStore(args.frames), model)
    kept = [d for d in annotated if d.prob >= args.min_prob]
    io.write_detections(args.out, kept if not args.keep_all else annotated, with_prob=True)
    print(f"{len(kept)} of {len(dets)} detections classified as flashes -> {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    from .classify import PatchDataset, evaluate, load_classifier

    model = load_classifier(args.model)
    ds = PatchDataset.from_patches(io.read_patch_dir(args.patches))
    rep = evaluate(model, ds, args.min_prob).to_dict()
    if args.out:
        io.write_json(args.out, rep)
    print(f"n={rep['n']} accuracy={rep['accuracy']:.3f} precision={rep['precision']:.3f} "
          f"recall={rep['recall']:.3f} F1={rep['f1']:.3f}")
    return 0


def cmd_calibrate(args) -> int:
    from .pipeline import CalibrateConfig, calibrate_streams

    det1 = io.read_detections(args.det1)
    det2 = io.read_detections(args.det2)
    n_frames = args.n_frames or max([d.frame + 1 for d in det1 + det2], default=0)
    cc = CalibrateConfig(trials=args.trials, window=args.window, max_lag=args.max_lag, cap=args.cap,
                         clean_percentile=args.clean_percentile, delta_k=args.delta_k)
    result = calibrate_streams(det1, det2, cc, n_frames, args.seed)
    io.write_json(args.out, result)
    if result["status"] != "ok":
        print(f"insufficient data: {result['reason']}", file=sys.stderr)
        return 3
    print(f"delta_k={result['delta_k']} support={result['support']:.2f} pose cost={result['cost']:.3e} -> {args.out}")
    return 0


def cmd_triangulate(args) -> int:
    from .geometry import CameraPose
    from .match import match_streams, triangulate_all

    calib = io.read_json(args.calibration)
    if calib.get("status", "ok") != "ok":
        raise ConfigError(f"{args.calibration}: calibration did not succeed ({calib.get('reason')})")
    pose = CameraPose.from_dict(calib)
    pairs = match_streams(io.read_detections(args.det1), io.read_detections(args.det2), pose,
                          int(calib["delta_k"]), args.tol_deg, args.method)
    flashes, stats = triangulate_all(pairs, pose, args.separation_m, args.gate_deg, args.max_range_m,
                                   args.min_parallax_deg)
    io.write_flashes(args.out, flashes)
    if args.ply:
        io.write_ply(args.ply, flashes)
    print(f"{len(pairs)} matched pairs, {len(flashes)} flashes kept, rejected {dict(stats.rejected)} -> {args.out}")
    return 0


def cmd_trajectorize(args) -> int:
    from .trajectory import build_streaks, link_trajectories, summarize

    flashes = io.read_flashes(args.flashes)
    streaks = build_streaks(flashes, args.d_max_m, args.streak_mode)
    trajs = link_trajectories(streaks, args.dt_max_s, args.dr_max_m, args.fps, args.link_method)
    io.write_trajectories(args.out, trajs, streaks)
    if args.summary:
        io.write_json(args.summary, summarize(flashes, streaks, trajs, args.fps))
    print(f"{len(flashes)} flashes -> {len(streaks)} streaks -> {len(trajs)} trajectories -> {args.out}")
    return 0


def cmd_run(args) -> int:
    from .pipeline import load_config, run

    overrides = _overrides(args.set)
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.output_dir:
        overrides["output_dir"] = str(Path(args.output_dir).resolve())
    cfg = load_config(args.config, overrides)
    manifest = run(cfg)
    hits = manifest.cache_hits
    print(f"run complete -> {cfg.output_dir}" + (f" (cached: {', '.join(hits)})" if hits else ""))
    print((Path(cfg.output_dir) / "report.txt").read_text(), end="")
    return 0


def cmd_report(args) -> int:
    from .pipeline import report

    out = Path(args.run_dir)
    if not (out / "manifest.json").exists():
        raise ConfigError(f"no manifest.json in {out}")
    summary = report(io.read_json(out / "manifest.json"), out, figures=not args.no_figures)
    if args.json:
        print(json.dumps(summary, indent=2, sort_keys=True))
    else:
        print((out / "report.txt").read_text(), end="")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    from .calibrate import DEFAULT_CAP, DEFAULT_CLEAN_PERCENTILE, DEFAULT_TRIALS, DEFAULT_WINDOW
    from .classify import Hyperparams

    p = argparse.ArgumentParser(prog="flashstereo", description="Stereo 360-degree reconstruction of flashing insects.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("--threads", type=int, default=None, help="cap on worker and BLAS threads")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="synthesize a two-camera scene")
    s.add_argument("--config", help="simulator JSON config")
    s.add_argument("--out", required=True)
    s.add_argument("--mode", choices=("detections", "frames"), default="detections")
    s.add_argument("--patches", type=int, default=0, metavar="N", help="also write an N-per-class patch corpus")
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key, e.g. scenario.seed=3")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("detect", help="background-subtraction blob detection on one camera")
    s.add_argument("--frames", required=True, help="frame directory or .raw stream")
    s.add_argument("--out", required=True)
    s.add_argument("--camera", type=int, default=1)
    s.add_argument("--threshold", type=float, default=25.0)
    s.add_argument("--tau", type=float, default=2.0, help="background window in seconds")
    s.add_argument("--fps", type=float, default=30.0)
    s.add_argument("--blur", type=float, default=1.0)
    s.set_defaults(func=cmd_detect)

    hp = Hyperparams()
    s = sub.add_parser("train", help="train the patch classifier")
    s.add_argument("--patches", required=True, help="directory with flash/ and artifact/ subdirectories")
    s.add_argument("--out", required=True, help="model JSON path")
    s.add_argument("--lr", type=float, default=hp.learning_rate)
    s.add_argument("--epochs", type=int, default=hp.epochs)
    s.add_argument("--l2", type=float, default=hp.l2)
    s.add_argument("--seed", type=int, default=hp.seed)
    s.add_argument("--val-fraction", type=float, default=0.2)
    s.add_argument("--metrics", help="write validation metrics JSON here")
    s.add_argument("--ablation", action="store_true", help="include a with/without chroma comparison in --metrics")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("classify", help="score detections with a trained model")
    s.add_argument("--model", required=True)
    s.add_argument("--detections", required=True)
    s.add_argument("--frames", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--min-prob", type=float, default=0.5)
    s.add_argument("--keep-all", action="store_true", help="write every detection with its probability")
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("evaluate", help="metrics of a model on a labeled patch directory")
    s.add_argument("--model", required=True)
    s.add_argument("--patches", required=True)
    s.add_argument("--min-prob", type=float, default=0.5)
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("calibrate", help="frame offset and relative pose from two detection streams")
    s.add_argument("--det1", required=True)
    s.add_argument("--det2", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--n-frames", type=int)
    s.add_argument("--trials", type=int, default=DEFAULT_TRIALS)
    s.add_argument("--window", type=int, default=DEFAULT_WINDOW)
    s.add_argument("--max-lag", type=int)
    s.add_argument("--cap", type=int, default=DEFAULT_CAP)
    s.add_argument("--clean-percentile", type=float, default=DEFAULT_CLEAN_PERCENTILE)
    s.add_argument("--delta-k", type=int, help="skip lag estimation and use this offset")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("triangulate", help="match detections and triangulate flashes")
    s.add_argument("--det1", required=True)
    s.add_argument("--det2", required=True)
    s.add_argument("--calibration", required=True)
    s.add_argument("--separation-m", type=float, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--ply")
    s.add_argument("--tol-deg", type=float, default=0.5)
    s.add_argument("--method", choices=("mutual", "assignment"), default="mutual")
    s.add_argument("--gate-deg", type=float, default=0.5, help="max camera-2 reprojection error")
    s.add_argument("--max-range-m", type=float, default=100.0)
    s.add_argument("--min-parallax-deg", type=float, default=3.0, help="min angle between the two rays")
    s.set_defaults(func=cmd_triangulate)

    s = sub.add_parser("trajectorize", help="group flashes into streaks and trajectories")
    s.add_argument("--flashes", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--summary")
    s.add_argument("--d-max-m", type=float, default=0.3)
    s.add_argument("--dt-max-s", type=float, default=1.0)
    s.add_argument("--dr-max-m", type=float, default=1.0)
    s.add_argument("--fps", type=float, default=30.0)
    s.add_argument("--streak-mode", choices=("nearest", "components"), default="nearest")
    s.add_argument("--link-method", choices=("greedy", "optimal"), default="greedy")
    s.set_defaults(func=cmd_trajectorize)

    s = sub.add_parser("run", help="run every stage from a JSON config (resumable)")
    s.add_argument("config")
    s.add_argument("--output-dir")
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key, e.g. match.tol_deg=0.3")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("report", help="re-render the summary of a finished run")
    s.add_argument("run_dir")
    s.add_argument("--json", action="store_true", help="print the machine-readable summary")
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        _limit_threads(args.threads)
        return args.func(args)
    except StageError as e:
        print(f"error: stage '{e.stage}' failed [{e.code}]: {e.cause}", file=sys.stderr)
        return e.exit_code
    except FlashStereoError as e:
        print(f"error [{e.code}]: {e}", file=sys.stderr)
        return e.exit_code
    except FileNotFoundError as e:
        print(f"error [missing_input]: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
