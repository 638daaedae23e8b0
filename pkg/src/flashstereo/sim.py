"""Synthetic firefly swarms seen by a virtual two-camera 360-degree rig.

Produces detection streams (with exact ground truth), flash-count series,
rendered equirectangular frames with artifacts, and labeled patch corpora.
World coordinates are meters in the camera-1 frame (``+z`` up).
"""

from __future__ import annotations

import csv
import logging
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import io
from .classify import PatchDataset
from .detect import Detection, Detector, Patch, extract_patch
from .errors import ConfigError
from .geometry import (
    CameraPose,
    EquirectDims,
    angles_to_pixel,
    bearing_to_angles,
    normalize,
    perturb_bearings,
)

logger = logging.getLogger(__name__)

FLASH_COLOR = np.array([0.9, 1.0, 0.35])  # yellow-green
SKY_COLOR = np.array([0.85, 0.9, 1.0])


@dataclass
class SwarmScenario:
    """Firefly population and flashing statistics.

    ``trains_per_firefly = 0`` keeps every firefly emitting trains for the
    whole recording.
    """

    n_fireflies: int = 20
    volume_min: tuple[float, float, float] = (-6.0, -6.0, -0.8)
    volume_max: tuple[float, float, float] = (6.0, 6.0, 2.5)
    flashes_per_train: int = 8
    flash_frames: int = 3
    flash_period_frames: int = 15
    train_gap_frames: int = 120
    trains_per_firefly: int = 1
    drift_speed: float = 0.3  # m/s
    duration_frames: int = 3000
    min_separation: float = 0.0
    bearing_noise_deg: float = 0.0
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.volume_min = tuple(float(v) for v in self.volume_min)
        self.volume_max = tuple(float(v) for v in self.volume_max)
        if self.n_fireflies < 0 or self.duration_frames <= 0:
            raise ConfigError("n_fireflies must be >= 0 and duration_frames > 0")
        if min(self.flashes_per_train, self.flash_frames, self.flash_period_frames) <= 0:
            raise ConfigError("flash train counts must be positive")
        if any(hi <= lo for lo, hi in zip(self.volume_min, self.volume_max)):
            raise ConfigError("scenario volume is degenerate")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must be in [0, 1)")


@dataclass
class RigGroundTruth:
    t: tuple[float, float, float] = (1.0, 0.0, 0.0)
    rotvec_deg: tuple[float, float, float] = (0.0, 0.0, 0.0)
    separation_m: float = 1.5
    height_m: float = 1.0
    delta_k: int = 0
    fps: float = 30.0

    def __post_init__(self):
        if self.separation_m <= 0 or self.fps <= 0:
            raise ConfigError("separation and fps must be positive")
        if not 1.0 <= self.separation_m <= 2.0:
            logger.warning("camera separation %.2f m is outside the recommended 1-2 m", self.separation_m)

    @property
    def pose(self) -> CameraPose:
        return CameraPose.from_rotvec(self.t, np.radians(self.rotvec_deg))


@dataclass
class ArtifactSpec:
    """Frame artifacts: ambient light (A1), static lights (A2), a transient
    burst (A3) and wind-shaken foliage in front of a bright sky."""

    ambient_floor: float = 8.0
    ambient_gradient: float = 0.0
    static_spots: int = 0
    static_amplitude: float = 220.0
    burst_start: int = -1
    burst_length: int = 0
    burst_amplitude: float = 60.0
    clutter_count: int = 0
    clutter_amplitude: float = 170.0
    clutter_jitter: float = 1.5  # px/frame (std of the per-frame shake)
    clutter_size: tuple[int, int] = (48, 32)  # width, height in px
    flash_peak: float = 220.0
    flash_sigma: float = 1.5

    def __post_init__(self):
        for name in ("ambient_floor", "static_amplitude", "burst_amplitude", "clutter_amplitude", "flash_peak"):
            v = getattr(self, name)
            if not 0 <= v <= 255:
                raise ConfigError(f"{name} must be in [0, 255], got {v}")
        self.clutter_size = tuple(int(v) for v in self.clutter_size)


@dataclass
class FlashEvents:
    """One row per lit world frame of one firefly."""

    firefly: np.ndarray
    train: np.ndarray
    flash: np.ndarray
    frame: np.ndarray
    position: np.ndarray  # (N, 3) meters

    def __len__(self) -> int:
        return len(self.frame)


def _reflect(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    span = hi - lo
    y = np.mod(x - lo, 2 * span)
    return lo + np.where(y > span, 2 * span - y, y)


def _initial_positions(sc: SwarmScenario, rng: np.random.Generator) -> np.ndarray:
    lo, hi = np.array(sc.volume_min), np.array(sc.volume_max)
    pts: list[np.ndarray] = []
    attempts = 0
    while len(pts) < sc.n_fireflies:
        p = rng.uniform(lo, hi)
        attempts += 1
        if sc.min_separation <= 0 or all(np.linalg.norm(p - q) >= sc.min_separation for q in pts):
            pts.append(p)
        elif attempts > 10000 * max(1, sc.n_fireflies):
            raise ConfigError("cannot place fireflies with the requested min_separation")
    return np.array(pts).reshape(-1, 3)


def generate_flashes(sc: SwarmScenario, fps: float = 30.0) -> FlashEvents:
    """Sample firefly tracks and their lit frames.

    Each train moves at constant velocity (speed ``drift_speed``, random
    direction); between trains the firefly takes a random-walk step. Positions
    reflect off the volume walls.
    """
    rng = np.random.default_rng([sc.seed, 1])
    lo, hi = np.array(sc.volume_min), np.array(sc.volume_max)
    starts = _initial_positions(sc, rng)
    train_len = (sc.flashes_per_train - 1) * sc.flash_period_frames + sc.flash_frames
    rows: dict[str, list] = defaultdict(list)
    train_id = 0
    flash_id = 0
    for fid in range(sc.n_fireflies):
        pos = starts[fid]
        if sc.trains_per_firefly == 1:
            t0 = int(rng.integers(0, max(1, sc.duration_frames - train_len)))
        else:
            t0 = int(rng.integers(0, sc.train_gap_frames + 1))
        n_trains = 0
        while t0 < sc.duration_frames and (sc.trains_per_firefly == 0 or n_trains < sc.trains_per_firefly):
            v = normalize(rng.normal(size=3)) * sc.drift_speed
            for i in range(sc.flashes_per_train):
                onset = t0 + i * sc.flash_period_frames
                for f in range(onset, onset + sc.flash_frames):
                    if f >= sc.duration_frames:
                        break
                    p = _reflect(pos + v * (f - t0) / fps, lo, hi)
                    rows["firefly"].append(fid)
                    rows["train"].append(train_id)
                    rows["flash"].append(flash_id)
                    rows["frame"].append(f)
                    rows["position"].append(p)
                flash_id += 1
            end = t0 + train_len
            gap = sc.train_gap_frames + int(rng.integers(0, sc.train_gap_frames + 1))
            step = rng.normal(scale=sc.drift_speed * gap / fps / 2.0, size=3)
            pos = _reflect(pos + v * train_len / fps + step, lo, hi)
            t0 = end + gap
            train_id += 1
            n_trains += 1
    if not rows["frame"]:
        z = np.zeros(0, dtype=np.int64)
        return FlashEvents(z, z, z, z, np.zeros((0, 3)))
    order = np.lexsort((np.array(rows["firefly"]), np.array(rows["frame"])))
    return FlashEvents(
        firefly=np.array(rows["firefly"], dtype=np.int64)[order],
        train=np.array(rows["train"], dtype=np.int64)[order],
        flash=np.array(rows["flash"], dtype=np.int64)[order],
        frame=np.array(rows["frame"], dtype=np.int64)[order],
        position=np.array(rows["position"])[order],
    )


def camera_bearings(positions_m: np.ndarray, rig: RigGroundTruth) -> tuple[np.ndarray, np.ndarray]:
    """Noise-free unit bearings of world points in camera 1 and camera 2."""
    X = np.asarray(positions_m, dtype=float).reshape(-1, 3) / rig.separation_m
    pose = rig.pose
    return normalize(X), normalize((X - pose.t) @ pose.R.T)


@dataclass
class SimResult:
    det1: list[Detection]
    det2: list[Detection]
    events: FlashEvents
    gt_index1: np.ndarray  # event row of each det1 entry
    gt_index2: np.ndarray
    frames1: np.ndarray  # camera-1 frame of each event
    frames2: np.ndarray  # camera-2 frame of each event (may be out of range)
    pixels1: np.ndarray  # (N, 2) noise-free (w, h)
    pixels2: np.ndarray
    detected1: np.ndarray  # bool per event
    detected2: np.ndarray
    n_frames: int
    dims: EquirectDims

    def write_ground_truth(self, path: str | Path) -> None:
        ev = self.events
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            wr = csv.writer(f, lineterminator="\n")
            wr.writerow(
                ["firefly_id", "train_id", "flash_id", "world_frame", "x_m", "y_m", "z_m",
                 "frame1", "w1", "h1", "detected1", "frame2", "w2", "h2", "detected2"]
            )
            for i in range(len(ev)):
                x, y, z = ev.position[i]
                wr.writerow(
                    [ev.firefly[i], ev.train[i], ev.flash[i], ev.frame[i], io.fmt(x), io.fmt(y), io.fmt(z),
                     self.frames1[i], io.fmt(self.pixels1[i, 0]), io.fmt(self.pixels1[i, 1]), int(self.detected1[i]),
                     self.frames2[i], io.fmt(self.pixels2[i, 0]), io.fmt(self.pixels2[i, 1]), int(self.detected2[i])]
                )


def _pixels(bearings: np.ndarray, dims: EquirectDims) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if len(bearings) == 0:
        e = np.zeros(0)
        return e, e, np.zeros((0, 2))
    theta, phi = bearing_to_angles(bearings)
    w, h = angles_to_pixel((theta, phi), dims)
    return np.asarray(theta), np.asarray(phi), np.column_stack([w, h])


def _make_detections(frames, theta, phi, pix, keep, camera) -> tuple[list[Detection], np.ndarray]:
    idx = np.flatnonzero(keep)
    idx = idx[np.lexsort((theta[idx], frames[idx]))]
    dets = [
        Detection(
            frame=int(frames[i]), w=float(pix[i, 0]), h=float(pix[i, 1]), theta=float(theta[i]),
            phi=float(phi[i]), area=9, peak=200.0, camera=camera,
        )
        for i in idx
    ]
    return dets, idx


def simulate_detections(
    scenario: SwarmScenario,
    rig: RigGroundTruth,
    dims: EquirectDims | None = None,
    events: FlashEvents | None = None,
) -> SimResult:
    """Detection streams of both cameras with per-detection ground truth.

    Camera 2 frame indices are shifted by ``rig.delta_k``; detections falling
    outside ``[0, duration_frames)`` are dropped. Bearing noise and dropout are
    drawn from a generator independent of the track generator.
    """
    dims = dims or EquirectDims.from_height(960)
    ev = events if events is not None else generate_flashes(scenario, rig.fps)
    rng = np.random.default_rng([scenario.seed, 2])
    K = scenario.duration_frames
    clean1, clean2 = camera_bearings(ev.position, rig)
    _, _, pix1 = _pixels(clean1, dims)
    _, _, pix2 = _pixels(clean2, dims)
    noisy1 = perturb_bearings(clean1, scenario.bearing_noise_deg, rng) if len(ev) else clean1
    noisy2 = perturb_bearings(clean2, scenario.bearing_noise_deg, rng) if len(ev) else clean2
    th1, ph1, npix1 = _pixels(noisy1, dims)
    th2, ph2, npix2 = _pixels(noisy2, dims)
    f1 = ev.frame.copy()
    f2 = ev.frame + rig.delta_k
    drop1 = rng.random(len(ev)) < scenario.dropout
    drop2 = rng.random(len(ev)) < scenario.dropout
    keep1 = ~drop1 & (f1 >= 0) & (f1 < K)
    keep2 = ~drop2 & (f2 >= 0) & (f2 < K)
    det1, idx1 = _make_detections(f1, th1, ph1, npix1, keep1, 1)
    det2, idx2 = _make_detections(f2, th2, ph2, npix2, keep2, 2)
    return SimResult(det1, det2, ev, idx1, idx2, f1, f2, pix1, pix2, keep1, keep2, K, dims)


def simulate_count_series(
    n_frames: int,
    delta_k: int = 0,
    onset_rate: float = 0.3,
    flash_frames: int = 3,
    dropout: float = 0.0,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame flash counts ``(N1, N2)`` of both cameras, without geometry.

    Flash onsets are Poisson with ``onset_rate`` per frame, each lit for
    ``flash_frames`` frames; each camera independently misses each lit flash
    with probability ``dropout``; camera 2 lags camera 1 by ``delta_k``.
    """
    rng = np.random.default_rng([seed, 3])
    pad = abs(delta_k)
    T = n_frames + 2 * pad
    onsets = rng.poisson(onset_rate, size=T)
    lit = np.convolve(onsets, np.ones(flash_frames, dtype=np.int64))[:T]
    seen1 = rng.binomial(lit, 1.0 - dropout)
    seen2 = rng.binomial(lit, 1.0 - dropout)
    n1 = seen1[pad : pad + n_frames]
    n2 = seen2[pad - delta_k : pad - delta_k + n_frames]
    return n1.astype(np.int64), n2.astype(np.int64)


def inject_burst(counts: np.ndarray, start: int, length: int, rate: float, seed: int = 0) -> np.ndarray:
    """Add Poisson(rate) spurious detections per frame over ``[start, start + length)``."""
    rng = np.random.default_rng([seed, 4])
    out = np.asarray(counts).copy()
    stop = min(len(out), start + length)
    out[start:stop] += rng.poisson(rate, size=stop - start)
    return out


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


@dataclass
class RenderedFlash:
    camera: int
    frame: int
    w: float
    h: float
    firefly: int
    event: int


class SceneRenderer:
    """Renders frame ``k`` of camera ``c`` on demand; output depends only on the seeds."""

    def __init__(
        self,
        scenario: SwarmScenario,
        rig: RigGroundTruth,
        artifacts: ArtifactSpec | None = None,
        dims: EquirectDims | None = None,
    ):
        self.scenario = scenario
        self.rig = rig
        self.art = artifacts or ArtifactSpec()
        self.dims = dims or EquirectDims.from_height(256)
        self.n_frames = scenario.duration_frames
        self.events = generate_flashes(scenario, rig.fps)
        b1, b2 = camera_bearings(self.events.position, rig)
        _, _, pix1 = _pixels(b1, self.dims)
        _, _, pix2 = _pixels(b2, self.dims)
        ev_rng = np.random.default_rng([scenario.seed, 5])
        self.flash_gain = ev_rng.uniform(0.6, 1.0, size=max(1, int(self.events.flash.max()) + 1) if len(self.events) else 1)
        self.flashes: dict[int, dict[int, list[RenderedFlash]]] = {1: defaultdict(list), 2: defaultdict(list)}
        for i in range(len(self.events)):
            f1 = int(self.events.frame[i])
            f2 = f1 + rig.delta_k
            fid = int(self.events.firefly[i])
            self.flashes[1][f1].append(RenderedFlash(1, f1, pix1[i, 0], pix1[i, 1], fid, i))
            if 0 <= f2 < self.n_frames:
                self.flashes[2][f2].append(RenderedFlash(2, f2, pix2[i, 0], pix2[i, 1], fid, i))
        self._static = {c: self._make_static(c) for c in (1, 2)}
        self._clutter = {c: self._make_clutter(c) for c in (1, 2)}
        H, W = self.dims.height, self.dims.width
        self._base = self.art.ambient_floor + self.art.ambient_gradient * (1.0 - np.arange(H) / H)[:, None] * np.ones(W)

    def _make_static(self, camera: int) -> list[tuple[float, float]]:
        rng = np.random.default_rng([self.scenario.seed, 6, camera])
        H, W = self.dims.height, self.dims.width
        return [(float(rng.uniform(0, W)), float(rng.uniform(0.3 * H, 0.6 * H))) for _ in range(self.art.static_spots)]

    def _make_clutter(self, camera: int) -> list[dict]:
        rng = np.random.default_rng([self.scenario.seed, 7, camera])
        H, W = self.dims.height, self.dims.width
        cw, ch = self.art.clutter_size
        margin = int(np.ceil(4 * self.art.clutter_jitter)) + 1
        out = []
        for _ in range(self.art.clutter_count):
            field_ = ndimage.gaussian_filter(rng.normal(size=(ch + 2 * margin, cw + 2 * margin)), 1.5, mode="wrap")
            leaves = field_ > 0
            tex = np.where(leaves[..., None], 10.0, self.art.clutter_amplitude * SKY_COLOR)
            x0 = int(rng.integers(0, W))
            y0 = int(rng.integers(int(0.15 * H), max(int(0.15 * H) + 1, int(0.55 * H) - ch)))
            out.append({"texture": tex, "x0": x0, "y0": y0, "margin": margin})
        return out

    def clutter_boxes(self, camera: int) -> list[tuple[int, int, int, int]]:
        """``(x0, y0, width, height)`` of each foliage region."""
        cw, ch = self.art.clutter_size
        return [(c["x0"], c["y0"], cw, ch) for c in self._clutter[camera]]

    def static_spots(self, camera: int) -> list[tuple[float, float]]:
        return list(self._static[camera])

    def flashes_in(self, camera: int, k: int) -> list[RenderedFlash]:
        return list(self.flashes[camera].get(k, []))

    def _blob(self, img: np.ndarray, w: float, h: float, sigma: float, color: np.ndarray) -> None:
        H, W = img.shape[:2]
        r = int(np.ceil(4 * sigma))
        rows = np.arange(int(np.floor(h)) - r, int(np.floor(h)) + r + 2)
        cols = np.arange(int(np.floor(w)) - r, int(np.floor(w)) + r + 2)
        rows = rows[(rows >= 0) & (rows < H)]
        g = np.exp(-((rows[:, None] - h) ** 2 + (cols[None, :] - w) ** 2) / (2 * sigma * sigma))
        img[np.ix_(rows, cols % W)] += g[..., None] * color

    def render(self, camera: int, k: int) -> np.ndarray:
        art = self.art
        rng = np.random.default_rng([self.scenario.seed, 8, camera, k])
        H, W = self.dims.height, self.dims.width
        img = np.repeat(self._base[..., None], 3, axis=2)
        if art.burst_length > 0 and art.burst_start <= k < art.burst_start + art.burst_length:
            phase = (k - art.burst_start) / max(1, art.burst_length)
            img += art.burst_amplitude * np.sin(np.pi * phase)
            self._blob(img, (0.2 + 0.6 * phase) * W, 0.6 * H, 6.0, np.full(3, 255.0))
        for w, h in self._static[camera]:
            self._blob(img, w, h, 2.0, np.full(3, art.static_amplitude))
        cw, ch = art.clutter_size
        for c in self._clutter[camera]:
            m = c["margin"]
            dy, dx = np.clip(np.rint(rng.normal(scale=art.clutter_jitter, size=2)), -m, m).astype(int)
            crop = c["texture"][m + dy : m + dy + ch, m + dx : m + dx + cw]
            cols = (c["x0"] + np.arange(cw)) % W
            img[c["y0"] : c["y0"] + ch][:, cols] = crop
        for fl in self.flashes[camera].get(k, []):
            gain = self.flash_gain[self.events.flash[fl.event]]
            self._blob(img, fl.w, fl.h, art.flash_sigma, art.flash_peak * gain * FLASH_COLOR)
        return np.rint(np.clip(img, 0, 255)).astype(np.uint8)

    def iter_frames(self, camera: int):
        for k in range(self.n_frames):
            yield k, self.render(camera, k)


def render_frames(
    scenario: SwarmScenario,
    rig: RigGroundTruth,
    artifacts: ArtifactSpec | None,
    dims: EquirectDims | None,
    out_dir: str | Path,
    threads: int = 1,
) -> SceneRenderer:
    """Write ``cam1/`` and ``cam2/`` PNG sequences plus ``render_truth.csv``.

    Frames are rendered on ``threads`` workers; each frame depends only on the
    seeds, so the output does not depend on the thread count.
    """
    out_dir = Path(out_dir)
    r = SceneRenderer(scenario, rig, artifacts, dims)

    def write(job):
        c, k = job
        io.write_image(out_dir / f"cam{c}" / f"frame_{k:06d}.png", r.render(c, k))

    jobs = [(c, k) for c in (1, 2) for k in range(r.n_frames)]
    for c in (1, 2):
        (out_dir / f"cam{c}").mkdir(parents=True, exist_ok=True)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(write, jobs))
    else:
        for job in jobs:
            write(job)
    with open(out_dir / "render_truth.csv", "w", newline="") as f:
        wr = csv.writer(f, lineterminator="\n")
        wr.writerow(["camera", "frame", "w", "h", "firefly_id"])
        for c in (1, 2):
            for k in sorted(r.flashes[c]):
                for fl in r.flashes[c][k]:
                    wr.writerow([c, k, io.fmt(fl.w), io.fmt(fl.h), fl.firefly])
    return r


def near_any(w: float, h: float, points, radius: float, width: int) -> bool:
    """True if (w, h) lies within ``radius`` px of any point, wrapping columns."""
    for pw, ph in points:
        dw = abs(w - pw) % width
        dw = min(dw, width - dw)
        if dw * dw + (h - ph) ** 2 <= radius * radius:
            return True
    return False


def make_patch_corpus(
    renderer: SceneRenderer,
    out_dir: str | Path | None = None,
    n_per_class: int | None = 500,
    seed: int = 0,
    threshold: float = 25.0,
    artifacts_per_frame: int = 3,
    cameras=(1, 2),
) -> PatchDataset:
    """Labeled patches from a rendered scene.

    Flash patches are seeded at the true flash pixels (dropped if re-centering
    drifts more than 2 px away, i.e. something brighter is nearby). Artifact
    patches are seeded at background-subtraction detections whose detected
    and re-centered positions are both farther than 4 px from any flash, plus
    the static light peaks.
    """
    rng = np.random.default_rng([seed, 9])
    # keyed by (camera, frame, w, h) so a pixel seeded twice yields one patch
    flashes: dict[tuple, Patch] = {}
    artifacts: dict[tuple, Patch] = {}
    W = renderer.dims.width
    fps = renderer.rig.fps

    def keep(store, p, cam, k, label):
        p.frame, p.label = k, label
        store.setdefault((cam, k, p.w, p.h), p)

    for cam in cameras:
        det = Detector(threshold=threshold, fps=fps, camera=cam)
        for k, img in renderer.iter_frames(cam):
            dets = det.process(k, img)
            truth = [(fl.w, fl.h) for fl in renderer.flashes[cam].get(k, [])]
            for w, h in truth:
                p = extract_patch(img, (int(round(w)) % W, int(round(h))))
                dw = abs(p.w - w) % W
                if min(dw, W - dw) <= 2 and abs(p.h - h) <= 2:
                    keep(flashes, p, cam, k, "flash")
            fps_dets = [d for d in dets if not near_any(d.w, d.h, truth, 4.0, W)]
            if len(fps_dets) > artifacts_per_frame:
                pick = np.sort(rng.choice(len(fps_dets), artifacts_per_frame, replace=False))
                fps_dets = [fps_dets[i] for i in pick]
            for d in fps_dets:
                p = extract_patch(img, d.seed)
                if not near_any(p.w, p.h, truth, 4.0, W):  # re-centering may climb onto a flash
                    keep(artifacts, p, cam, k, "artifact")
            if k == 0:
                for w, h in renderer.static_spots(cam):
                    keep(artifacts, extract_patch(img, (int(round(w)) % W, int(round(h)))), cam, k, "artifact")
    chosen = []
    for store in (flashes, artifacts):
        keys = list(store)
        if n_per_class is not None and len(keys) > n_per_class:
            keys = [keys[i] for i in np.sort(rng.choice(len(keys), n_per_class, replace=False))]
        chosen.append([(key[0], store[key]) for key in keys])
    if out_dir is not None:
        for cam, p in chosen[0] + chosen[1]:
            io.write_patch(out_dir, p, cam)
    flashes = [p for _, p in chosen[0]]
    artifacts = [p for _, p in chosen[1]]
    logger.info("patch corpus: %d flash, %d artifact", len(flashes), len(artifacts))
    return PatchDataset.from_patches(flashes + artifacts)


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------


def _build(cls, d: dict | None):
    d = dict(d or {})
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    for k, v in d.items():
        if isinstance(v, list):
            d[k] = tuple(v)
    return cls(**d)


def load_sim_config(d: dict) -> tuple[SwarmScenario, RigGroundTruth, ArtifactSpec, EquirectDims]:
    """Parse ``{"scenario": .., "rig": .., "artifacts": .., "height": P}``."""
    unknown = set(d) - {"scenario", "rig", "artifacts", "height", "version"}
    if unknown:
        raise ConfigError(f"unknown simulator config keys: {sorted(unknown)}")
    try:
        return (
            _build(SwarmScenario, d.get("scenario")),
            _build(RigGroundTruth, d.get("rig")),
            _build(ArtifactSpec, d.get("artifacts")),
            EquirectDims.from_height(int(d.get("height", 256))),
        )
    except TypeError as e:
        raise ConfigError(str(e)) from e


def sim_config_dict(sc: SwarmScenario, rig: RigGroundTruth, art: ArtifactSpec, dims: EquirectDims) -> dict:
    return {"version": 1, "scenario": asdict(sc), "rig": asdict(rig), "artifacts": asdict(art), "height": dims.height}
