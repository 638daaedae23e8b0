"""Stage orchestration: detect -> classify -> calibrate -> triangulate -> trajectorize.

Every stage reads and writes files in the run's output directory and records
input/output SHA-256 hashes in ``manifest.json``. A rerun skips any stage
whose inputs, parameters and outputs still match the manifest.
"""

from __future__ import annotations

import hashlib
import json
import os
import logging
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__, io, plotting
from .calibrate import (
    DEFAULT_CAP,
    DEFAULT_CLEAN_PERCENTILE,
    DEFAULT_TRIALS,
    DEFAULT_WINDOW,
    MIN_OVERLAP,
    build_calibration_set,
    count_series,
    estimate_pose,
    ransac_delay,
)
from .classify import filter_detections, load_classifier
from .detect import Detector
from .errors import ConfigError, DataError, FlashStereoError, InsufficientDataError, NoSignalError, StageError
from .geometry import CameraPose
from .match import match_streams, triangulate_all
from .trajectory import build_streaks, link_trajectories, summarize

logger = logging.getLogger(__name__)

CONFIG_VERSION = 1


@dataclass
class CameraInput:
    frames: str | None = None
    detections: str | None = None


@dataclass
class DetectConfig:
    threshold: float = 25.0
    tau_s: float = 2.0
    blur_radius: float = 1.0


@dataclass
class ClassifyConfig:
    model: str | None = None
    min_prob: float = 0.5


@dataclass
class CalibrateConfig:
    trials: int = DEFAULT_TRIALS
    window: int = DEFAULT_WINDOW
    max_lag: int | None = None
    clean_percentile: float = DEFAULT_CLEAN_PERCENTILE
    cap: int = DEFAULT_CAP
    initial_t: tuple[float, float, float] = (1.0, 0.0, 0.0)
    initial_rotvec_deg: tuple[float, float, float] = (0.0, 0.0, 0.0)
    delta_k: int | None = None  # fixes the lag instead of estimating it
    pose: dict | None = None  # {"t": [..], "R": [[..]]} fixes the pose


@dataclass
class MatchConfig:
    tol_deg: float = 0.5
    method: str = "mutual"
    gate_deg: float = 0.5
    max_range_m: float = 100.0
    min_parallax_deg: float = 3.0


@dataclass
class TrajectoryConfig:
    d_max_m: float = 0.3
    dt_max_s: float = 1.0
    dr_max_m: float = 1.0
    streak_mode: str = "nearest"
    link_method: str = "greedy"


@dataclass
class RigConfig:
    separation_m: float
    camera1: CameraInput
    camera2: CameraInput
    height_m: float = 1.0
    fps: float = 30.0
    n_frames: int | None = None
    output_dir: str = "run"
    seed: int = 0
    threads: int = 1
    detect: DetectConfig = field(default_factory=DetectConfig)
    classify: ClassifyConfig = field(default_factory=ClassifyConfig)
    calibrate: CalibrateConfig = field(default_factory=CalibrateConfig)
    match: MatchConfig = field(default_factory=MatchConfig)
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    version: int = CONFIG_VERSION

    def validate(self) -> "RigConfig":
        if self.version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {self.version}")
        if self.separation_m <= 0:
            raise ConfigError("separation_m must be positive")
        if self.fps <= 0:
            raise ConfigError("fps must be positive")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        for name, cam in (("camera1", self.camera1), ("camera2", self.camera2)):
            if (cam.frames is None) == (cam.detections is None):
                raise ConfigError(f"{name}: give exactly one of 'frames' or 'detections'")
        gates = {
            "detect.threshold": self.detect.threshold,
            "detect.tau_s": self.detect.tau_s,
            "match.tol_deg": self.match.tol_deg,
            "match.gate_deg": self.match.gate_deg,
            "match.max_range_m": self.match.max_range_m,
            "trajectory.d_max_m": self.trajectory.d_max_m,
            "trajectory.dt_max_s": self.trajectory.dt_max_s,
            "trajectory.dr_max_m": self.trajectory.dr_max_m,
            "calibrate.trials": self.calibrate.trials,
            "calibrate.window": self.calibrate.window,
            "calibrate.cap": self.calibrate.cap,
        }
        for k, v in gates.items():
            if v is None or v <= 0:
                raise ConfigError(f"{k} must be positive")
        if not 0 <= self.match.min_parallax_deg < 180:
            raise ConfigError("match.min_parallax_deg must be in [0, 180)")
        if self.detect.blur_radius < 0:
            raise ConfigError("detect.blur_radius must be >= 0")
        if not 0 <= self.classify.min_prob <= 1:
            raise ConfigError("classify.min_prob must be in [0, 1]")
        if self.match.method not in ("mutual", "assignment"):
            raise ConfigError(f"unknown match.method {self.match.method!r}")
        if self.trajectory.streak_mode not in ("nearest", "components"):
            raise ConfigError(f"unknown trajectory.streak_mode {self.trajectory.streak_mode!r}")
        if self.trajectory.link_method not in ("greedy", "optimal"):
            raise ConfigError(f"unknown trajectory.link_method {self.trajectory.link_method!r}")
        return self

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def _build(cls, d, where: str):
    if is_dataclass(d):
        return d
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name: f for f in fields(cls)}
    unknown = set(d) - set(known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kw = {}
    for k, v in d.items():
        kw[k] = tuple(v) if isinstance(v, list) and k != "pose" else v
    try:
        return cls(**kw)
    except TypeError as e:
        raise ConfigError(f"{where}: {e}") from e


def config_from_dict(d: dict, base_dir: str | Path | None = None) -> RigConfig:
    """Build and validate a :class:`RigConfig`; relative paths resolve against ``base_dir``."""
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    d = dict(d)
    subs = {
        "camera1": CameraInput,
        "camera2": CameraInput,
        "detect": DetectConfig,
        "classify": ClassifyConfig,
        "calibrate": CalibrateConfig,
        "match": MatchConfig,
        "trajectory": TrajectoryConfig,
    }
    for key, cls in subs.items():
        if key in d:
            d[key] = _build(cls, d[key], key)
    for key in ("camera1", "camera2", "separation_m"):
        if key not in d:
            raise ConfigError(f"missing required config key '{key}'")
    cfg = _build(RigConfig, d, "config")
    if base_dir is not None:
        base = Path(base_dir).resolve()

        def resolve(p):
            return None if p is None else str(base / p)

        for cam in (cfg.camera1, cfg.camera2):
            cam.frames = resolve(cam.frames) or cam.frames
            cam.detections = resolve(cam.detections) or cam.detections
        if cfg.classify.model:
            cfg.classify.model = resolve(cfg.classify.model) or cfg.classify.model
        cfg.output_dir = resolve(cfg.output_dir) or cfg.output_dir
    return cfg.validate()


def load_config(path: str | Path, overrides: dict | None = None) -> RigConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e
    for key, value in (overrides or {}).items():
        set_dotted(d, key, value)
    return config_from_dict(d, base_dir=path.parent)


def set_dotted(d: dict, key: str, value) -> None:
    parts = key.split(".")
    cur = d
    for p in parts[:-1]:
        cur = cur.setdefault(p, {})
    cur[parts[-1]] = value


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------


@dataclass
class StageRecord:
    name: str
    status: str = "pending"  # complete | cached | disabled | insufficient_data | failed
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    params: str = ""
    seconds: float = 0.0
    cache_hit: bool = False
    note: str = ""


@dataclass
class RunManifest:
    config: dict
    stages: dict[str, StageRecord] = field(default_factory=dict)
    versions: dict = field(default_factory=dict)
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "seed": self.seed,
            "versions": self.versions,
            "stages": {k: asdict(v) for k, v in self.stages.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        return cls(
            config=d["config"],
            stages={k: StageRecord(**v) for k, v in d.get("stages", {}).items()},
            versions=d.get("versions", {}),
            seed=d.get("seed", 0),
        )

    @property
    def cache_hits(self) -> list[str]:
        return [k for k, s in self.stages.items() if s.cache_hit]


def _hash_params(obj) -> str:
    return hashlib.sha256(json.dumps(_jsonable(obj), sort_keys=True).encode()).hexdigest()


def _rel(path: str | Path, base: Path) -> str:
    return os.path.relpath(Path(path).resolve(), base.resolve())


def _hash_inputs(paths: list[str | Path], base: Path) -> dict:
    """SHA-256 per input, keyed by path relative to ``base``; a directory hashes its frame files."""
    out = {}
    for p in paths:
        p = Path(p)
        key = _rel(p, base)
        if p.is_dir():
            h = hashlib.sha256()
            for f in io.list_frame_files(p):
                h.update(f.name.encode())
                h.update(io.sha256_file(f).encode())
            out[key] = h.hexdigest()
        elif p.exists():
            out[key] = io.sha256_file(p)
        else:
            raise DataError(f"input not found: {p}")
    return out


def _outputs_valid(rec: StageRecord, base: Path) -> bool:
    return all((base / p).exists() and io.sha256_file(base / p) == h for p, h in rec.outputs.items())


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


class Run:
    """One pipeline execution over a validated config."""

    def __init__(self, cfg: RigConfig):
        self.cfg = cfg
        self.out = Path(cfg.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest_path = self.out / "manifest.json"
        previous = None
        if self.manifest_path.exists():
            try:
                previous = RunManifest.from_dict(io.read_json(self.manifest_path))
            except (FlashStereoError, KeyError, TypeError):
                previous = None
        self.previous = previous
        self.manifest = RunManifest(
            config=cfg.to_dict(),
            versions={"flashstereo": __version__, "numpy": np.__version__, "python": platform.python_version()},
            seed=cfg.seed,
        )

    def p(self, name: str) -> Path:
        return self.out / name

    def stage(self, name: str, inputs: list, params, outputs: list[str], fn: Callable[[], str | None]) -> StageRecord:
        rec = StageRecord(name=name, params=_hash_params(params))
        t0 = time.perf_counter()
        try:
            rec.inputs = _hash_inputs(inputs, self.out)
            prev = self.previous.stages.get(name) if self.previous else None
            if (
                prev is not None
                and prev.status in ("complete", "cached", "insufficient_data")
                and prev.inputs == rec.inputs
                and prev.params == rec.params
                and sorted(prev.outputs) == sorted(outputs)
                and _outputs_valid(prev, self.out)
            ):
                rec.outputs = dict(prev.outputs)
                rec.status = "cached"
                rec.cache_hit = True
                rec.note = prev.note
            else:
                status = fn() or "complete"
                rec.status = status
                rec.outputs = {o: io.sha256_file(self.p(o)) for o in outputs}
        except FlashStereoError as e:
            rec.status = "failed"
            rec.note = str(e)
            self.manifest.stages[name] = rec
            self.write_manifest()
            raise StageError(name, e) from e
        rec.seconds = round(time.perf_counter() - t0, 6)
        self.manifest.stages[name] = rec
        logger.info("stage %s: %s (%.2fs)", name, rec.status, rec.seconds)
        return rec

    def write_manifest(self) -> None:
        io.write_json(self.manifest_path, self.manifest.to_dict())

    # -- individual stages -------------------------------------------------

    def detection_paths(self) -> dict[int, Path]:
        out = {}
        for c, cam in ((1, self.cfg.camera1), (2, self.cfg.camera2)):
            out[c] = Path(cam.detections) if cam.detections else self.p(f"detections_cam{c}.csv")
        return out

    def run_detect(self) -> None:
        cams = [(c, cam) for c, cam in ((1, self.cfg.camera1), (2, self.cfg.camera2)) if cam.frames]
        if not cams:
            rec = StageRecord(name="detect", status="disabled", note="detections supplied as input")
            self.manifest.stages["detect"] = rec
            return
        dc = self.cfg.detect

        def work():
            def one(item):
                c, cam = item
                det = Detector(dc.threshold, dc.tau_s, self.cfg.fps, dc.blur_radius, camera=c)
                dets = []
                n = 0
                for k, frame in io.open_frames(cam.frames):
                    dets.extend(det.process(k, frame))
                    n = k + 1
                io.write_detections(self.p(f"detections_cam{c}.csv"), dets)
                return c, n

            with ThreadPoolExecutor(max_workers=self.cfg.threads) as ex:
                counts = dict(ex.map(one, cams))
            io.write_json(self.p("detect_meta.json"), {"n_frames": {str(c): n for c, n in sorted(counts.items())}})

        outputs = [f"detections_cam{c}.csv" for c, _ in cams] + ["detect_meta.json"]
        self.stage("detect", [cam.frames for _, cam in cams], [asdict(dc), self.cfg.fps], outputs, work)

    def filtered_paths(self) -> dict[int, Path]:
        if not self.cfg.classify.model:
            return self.detection_paths()
        return {c: self.p(f"detections_cam{c}_filtered.csv") for c in (1, 2)}

    def run_classify(self) -> None:
        cc = self.cfg.classify
        if not cc.model:
            self.manifest.stages["classify"] = StageRecord(name="classify", status="disabled", note="no model configured")
            return
        srcs = {1: self.cfg.camera1.frames, 2: self.cfg.camera2.frames}
        if not all(srcs.values()):
            raise StageError("classify", ConfigError("classification needs frames for both cameras"))
        dpaths = self.detection_paths()

        def work():
            model = load_classifier(cc.model)
            for c in (1, 2):
                dets = io.read_detections(dpaths[c])
                annotated = filter_detections(dets, io.FrameStore(srcs[c]), model)
                io.write_detections(self.p(f"detections_cam{c}_classified.csv"), annotated, with_prob=True)
                io.write_detections(
                    self.p(f"detections_cam{c}_filtered.csv"), [d for d in annotated if d.prob >= cc.min_prob], with_prob=True
                )

        outputs = [f"detections_cam{c}_{kind}.csv" for c in (1, 2) for kind in ("classified", "filtered")]
        self.stage("classify", [cc.model, dpaths[1], dpaths[2], srcs[1], srcs[2]], asdict(cc), outputs, work)

    def n_frames(self, det1, det2) -> int:
        if self.cfg.n_frames:
            return int(self.cfg.n_frames)
        meta = self.p("detect_meta.json")
        if meta.exists() and self.manifest.stages.get("detect", StageRecord("detect")).status in ("complete", "cached"):
            return max(io.read_json(meta)["n_frames"].values())
        frames = [d.frame for d in det1] + [d.frame for d in det2]
        return max(frames) + 1 if frames else 0

    def run_calibrate(self) -> None:
        cc = self.cfg.calibrate
        paths = self.filtered_paths()

        def work():
            det1 = io.read_detections(paths[1])
            det2 = io.read_detections(paths[2])
            result = calibrate_streams(det1, det2, cc, self.n_frames(det1, det2), self.cfg.seed)
            io.write_json(self.p("calibration.json"), result)
            return "complete" if result["status"] == "ok" else "insufficient_data"

        inputs = [paths[1], paths[2]] + ([self.p("detect_meta.json")] if self.p("detect_meta.json").exists() else [])
        self.stage("calibrate", inputs, [asdict(cc), self.cfg.seed, self.cfg.n_frames], ["calibration.json"], work)

    def run_triangulate(self) -> None:
        mc = self.cfg.match
        paths = self.filtered_paths()

        def work():
            calib = io.read_json(self.p("calibration.json"))
            flashes, stats, n_pairs = [], {"kept": 0, "rejected": {}}, 0
            if calib["status"] == "ok":
                det1 = io.read_detections(paths[1])
                det2 = io.read_detections(paths[2])
                pose = CameraPose.from_dict(calib)
                pairs = match_streams(det1, det2, pose, calib["delta_k"], mc.tol_deg, mc.method)
                n_pairs = len(pairs)
                flashes, st = triangulate_all(pairs, pose, self.cfg.separation_m, mc.gate_deg, mc.max_range_m,
                                               mc.min_parallax_deg)
                stats = st.to_dict()
            io.write_flashes(self.p("flashes.csv"), flashes)
            io.write_ply(self.p("flashes.ply"), flashes)
            io.write_json(self.p("triangulation.json"), {"matched_pairs": n_pairs, **stats})

        self.stage(
            "triangulate",
            [paths[1], paths[2], self.p("calibration.json")],
            [asdict(mc), self.cfg.separation_m],
            ["flashes.csv", "flashes.ply", "triangulation.json"],
            work,
        )

    def run_trajectorize(self) -> None:
        tc = self.cfg.trajectory

        def work():
            flashes = io.read_flashes(self.p("flashes.csv"))
            streaks = build_streaks(flashes, tc.d_max_m, tc.streak_mode)
            trajs = link_trajectories(streaks, tc.dt_max_s, tc.dr_max_m, self.cfg.fps, tc.link_method)
            io.write_trajectories(self.p("trajectories.csv"), trajs, streaks)
            io.write_json(self.p("trajectories.json"), summarize(flashes, streaks, trajs, self.cfg.fps))

        self.stage(
            "trajectorize",
            [self.p("flashes.csv")],
            [asdict(tc), self.cfg.fps],
            ["trajectories.csv", "trajectories.json"],
            work,
        )

    def execute(self) -> RunManifest:
        for step in (self.run_detect, self.run_classify, self.run_calibrate, self.run_triangulate, self.run_trajectorize):
            step()
        self.write_manifest()
        return self.manifest


def calibrate_streams(det1, det2, cc: CalibrateConfig, n_frames: int, seed: int = 0) -> dict:
    """Temporal then spatial calibration; returns the calibration JSON object.

    Missing data is not an error here: the result has ``status`` set to
    ``"insufficient_data"`` and a ``reason``.
    """
    result: dict = {"status": "ok", "n_frames": int(n_frames)}
    try:
        if cc.delta_k is not None:
            result.update(delta_k=int(cc.delta_k), support=1.0, histogram={}, tied_lags=[], n_trials=0, n_valid=0)
        else:
            n1 = count_series(det1, n_frames)
            n2 = count_series(det2, n_frames)
            window = min(cc.window, n_frames)
            if window < 2 * MIN_OVERLAP:
                raise InsufficientDataError(f"{n_frames} frames are too few for temporal calibration")
            max_lag = cc.max_lag if cc.max_lag is not None else window // 2
            max_lag = min(max_lag, window - MIN_OVERLAP)
            tc = ransac_delay(n1, n2, cc.trials, window, max_lag, seed, cc.clean_percentile)
            result.update(tc.to_dict())
        if cc.pose is not None:
            pose = CameraPose.from_dict(cc.pose)
            cset = None
            try:
                cset = build_calibration_set(det1, det2, result["delta_k"], cc.cap, seed)
            except InsufficientDataError:
                pass
            result.update(pose.to_dict(), cost=None, n_pairs=len(cset) if cset else 0, converged=True, iterations=0)
        else:
            cset = build_calibration_set(det1, det2, result["delta_k"], cc.cap, seed)
            initial = CameraPose.from_rotvec(cc.initial_t, np.radians(cc.initial_rotvec_deg))
            est = estimate_pose(cset, initial)
            result.update(est.to_dict(), n_pairs=len(cset))
    except (InsufficientDataError, NoSignalError) as e:
        return {"status": "insufficient_data", "reason": str(e), "n_frames": int(n_frames),
                "delta_k": result.get("delta_k"), "support": result.get("support")}
    return _jsonable(result)


def run(cfg: RigConfig, make_report: bool = True) -> RunManifest:
    """Execute all stages (resuming from cached outputs) and optionally the report."""
    r = Run(cfg.validate())
    manifest = r.execute()
    if make_report:
        report(manifest, r.out)
        r.write_manifest()
    return manifest


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------


def _count_lines(path: Path) -> int:
    if not path.exists():
        return 0
    with open(path) as f:
        return max(0, sum(1 for _ in f) - 1)


def report(manifest: RunManifest | dict, outputs: str | Path, figures: bool = True) -> dict:
    """Summarize a finished run: ``report.json``, ``report.txt``, ``counts_per_frame.csv`` and figures."""
    if isinstance(manifest, dict):
        manifest = RunManifest.from_dict(manifest)
    out = Path(outputs)
    cfg = manifest.config
    fps = float(cfg.get("fps", 30.0))

    def det_path(c, suffix=""):
        given = cfg.get(f"camera{c}", {}).get("detections")
        if not suffix and given:
            return Path(given)
        return out / f"detections_cam{c}{suffix}.csv"

    classified = bool(cfg.get("classify", {}).get("model"))
    raw = {c: io.read_detections(det_path(c)) if det_path(c).exists() else [] for c in (1, 2)}
    filt = {c: io.read_detections(det_path(c, "_filtered")) if classified and det_path(c, "_filtered").exists() else raw[c] for c in (1, 2)}
    calib = io.read_json(out / "calibration.json") if (out / "calibration.json").exists() else {"status": "missing"}
    tri = io.read_json(out / "triangulation.json") if (out / "triangulation.json").exists() else {}
    traj = io.read_json(out / "trajectories.json") if (out / "trajectories.json").exists() else {}

    n_frames = int(calib.get("n_frames") or 0)
    frames_all = [d.frame for c in (1, 2) for d in raw[c]]
    n_frames = max(n_frames, (max(frames_all) + 1) if frames_all else 0)
    series = {f"cam{c}_{kind}": count_series(src[c], n_frames) for c in (1, 2) for kind, src in (("unfiltered", raw), ("filtered", filt))}

    with open(out / "counts_per_frame.csv", "w") as f:
        cols = ["frame"] + list(series)
        f.write(",".join(cols) + "\n")
        for k in range(n_frames):
            f.write(",".join([str(k)] + [str(int(series[c][k])) for c in series]) + "\n")

    calibrated = calib.get("status") == "ok"
    summary = {
        "counts": {
            "detections_cam1": len(raw[1]),
            "detections_cam2": len(raw[2]),
            "filtered_cam1": len(filt[1]),
            "filtered_cam2": len(filt[2]),
            "matched_pairs": int(tri.get("matched_pairs", 0)),
            "flashes": _count_lines(out / "flashes.csv"),
            "streaks": int(traj.get("counts", {}).get("streaks", 0)),
            "trajectories": int(traj.get("counts", {}).get("trajectories", 0)),
        },
        "calibration": {
            "status": calib.get("status"),
            "reason": calib.get("reason"),
            "delta_k": calib.get("delta_k"),
            "support": calib.get("support"),
            "pose_cost": calib.get("cost") if calibrated else None,
            "n_pairs": calib.get("n_pairs", 0) if calibrated else 0,
            "converged": calib.get("converged") if calibrated else None,
        },
        "triangulation_rejections": tri.get("rejected", {}),
        "n_frames": n_frames,
        "fps": fps,
        "classified": classified,
        "stages": {k: v.status for k, v in manifest.stages.items()},
        "files": {"count_series": "counts_per_frame.csv"},
    }
    if figures:
        figs = {}
        for c in (1, 2):
            name = f"fig_counts_cam{c}.png"
            plotting.plot_count_series(
                out / name, series[f"cam{c}_unfiltered"], series[f"cam{c}_filtered"] if classified else None,
                fps=fps, title=f"camera {c}",
            )
            figs[f"counts_cam{c}"] = name
        if calibrated and calib.get("histogram"):
            plotting.plot_lag_histogram(out / "fig_lag_histogram.png", calib["histogram"], calib.get("delta_k"))
            figs["lag_histogram"] = "fig_lag_histogram.png"
        if (out / "flashes.ply").exists():
            xyz, labels = _trajectory_points(out / "trajectories.csv")
            if not len(xyz):
                xyz, _ = io.read_ply(out / "flashes.ply")
                labels = None
            cam2 = np.asarray(calib["t"]) * float(cfg.get("separation_m", 1.0)) if calibrated else None
            plotting.plot_flashes_3d(out / "fig_flashes_3d.png", xyz, labels, cam2)
            figs["flashes_3d"] = "fig_flashes_3d.png"
        summary["files"]["figures"] = figs
    summary = _jsonable(summary)
    io.write_json(out / "report.json", summary)
    (out / "report.txt").write_text(format_report(summary))
    return summary


def _trajectory_points(path: Path) -> tuple[np.ndarray, np.ndarray]:
    if not path.exists():
        return np.zeros((0, 3)), np.zeros(0, dtype=int)
    if _count_lines(path) == 0:
        return np.zeros((0, 3)), np.zeros(0, dtype=int)
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return rows[:, 3:6], rows[:, 0].astype(int)


def format_report(s: dict) -> str:
    c = s["counts"]
    cal = s["calibration"]
    lines = [
        "flashstereo run report",
        f"  frames:             {s['n_frames']} at {s['fps']:g} fps",
        f"  detections:         cam1 {c['detections_cam1']}, cam2 {c['detections_cam2']}",
        f"  after classifier:   cam1 {c['filtered_cam1']}, cam2 {c['filtered_cam2']}"
        + ("" if s["classified"] else " (no classifier)"),
        f"  calibration:        {cal['status']}" + (f" ({cal['reason']})" if cal.get("reason") else ""),
    ]
    if cal["status"] == "ok":
        lines += [
            f"    delta_k:          {cal['delta_k']} frames (support {cal['support']:.2f})",
            f"    pose cost:        {cal['pose_cost'] if cal['pose_cost'] is not None else 'fixed pose'}",
            f"    calibration pairs:{cal['n_pairs']:>6}",
        ]
    lines += [
        f"  matched pairs:      {c['matched_pairs']}",
        f"  3D flashes:         {c['flashes']}",
        f"  streaks:            {c['streaks']}",
        f"  trajectories:       {c['trajectories']}",
    ]
    return "\n".join(lines) + "\n"
