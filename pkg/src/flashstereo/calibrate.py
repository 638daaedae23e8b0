"""Self-calibration of the two-camera rig from the detections themselves.

Temporal: the per-frame detection counts of both cameras are cross-correlated
over many random windows and the modal lag is kept. Lag convention: a
positive ``delta_k`` means camera 2 sees an event ``delta_k`` frames after
camera 1 (frame ``k`` of camera 1 pairs with frame ``k + delta_k`` of camera 2).

Spatial: frames where each camera sees exactly one flash give bearing pairs;
the pose minimises the mean squared coplanarity residual by
Levenberg-Marquardt.
"""

from __future__ import annotations

import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.signal import fftconvolve
from scipy.spatial.transform import Rotation

from .detect import Detection
from .errors import DataError, InsufficientDataError, NoSignalError, NumericalError
from .geometry import CameraPose, angles_to_bearing, epipolar_residual, triangulate_many

logger = logging.getLogger(__name__)

DEFAULT_TRIALS = 100
DEFAULT_WINDOW = 2000
DEFAULT_CAP = 1000
DEFAULT_CLEAN_PERCENTILE = 99.9
MIN_PAIRS = 8
MIN_OVERLAP = 10


# ---------------------------------------------------------------------------
# Temporal calibration
# ---------------------------------------------------------------------------


@dataclass
class CorrelationCurve:
    lags: np.ndarray
    values: np.ndarray  # Pearson correlation over the overlap; NaN where undefined
    best_lag: int

    @property
    def best_value(self) -> float:
        return float(self.values[self.lags == self.best_lag][0])


@dataclass
class TemporalCalibration:
    delta_k: int
    support: float
    histogram: dict[int, int]
    n_trials: int
    n_valid: int
    tied_lags: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "delta_k": self.delta_k,
            "support": self.support,
            "histogram": {str(k): v for k, v in sorted(self.histogram.items())},
            "n_trials": self.n_trials,
            "n_valid": self.n_valid,
            "tied_lags": self.tied_lags,
        }


def count_series(detections: Sequence[Detection], n_frames: int | None = None) -> np.ndarray:
    """Detections per frame, ``N(k)`` for ``k = 0 .. n_frames - 1``."""
    frames = np.array([d.frame for d in detections], dtype=np.int64)
    if n_frames is None:
        n_frames = int(frames.max()) + 1 if len(frames) else 0
    frames = frames[frames < n_frames]
    return np.bincount(frames, minlength=n_frames).astype(np.int64)


def clean_counts(n: np.ndarray, percentile: float = DEFAULT_CLEAN_PERCENTILE) -> np.ndarray:
    """Zero the frames whose count exceeds the given percentile."""
    n = np.asarray(n)
    if n.size == 0 or percentile >= 100:
        return n.copy()
    cut = np.percentile(n, percentile)
    out = n.copy()
    out[n > cut] = 0
    return out


def _pick_lag(lags: np.ndarray, values: np.ndarray) -> int:
    """Argmax with ties broken by the smallest |lag|, then the smaller lag."""
    best = np.nanmax(values)
    cand = lags[values >= best - 1e-12 * max(1.0, abs(best))]
    order = np.lexsort((cand, np.abs(cand)))
    return int(cand[order[0]])


def cross_correlate(n1, n2, max_lag: int, min_overlap: int = MIN_OVERLAP) -> CorrelationCurve:
    """Pearson correlation of ``n1[k]`` with ``n2[k + lag]`` over the valid overlap.

    Raises:
        NoSignalError: no lag has a defined correlation (e.g. all-zero input).
    """
    x = np.asarray(n1, dtype=np.float64)
    y = np.asarray(n2, dtype=np.float64)
    k1, k2 = len(x), len(y)
    if max_lag < 0 or max_lag >= min(k1, k2):
        raise DataError(f"max_lag must be in [0, {min(k1, k2)}), got {max_lag}")
    integer = np.issubdtype(np.asarray(n1).dtype, np.integer) and np.issubdtype(np.asarray(n2).dtype, np.integer)

    lags = np.arange(-max_lag, max_lag + 1)
    lo = np.maximum(0, -lags)
    hi = np.minimum(k1, k2 - lags)
    n = (hi - lo).astype(np.float64)

    cx = np.concatenate([[0.0], np.cumsum(x)])
    cxx = np.concatenate([[0.0], np.cumsum(x * x)])
    cy = np.concatenate([[0.0], np.cumsum(y)])
    cyy = np.concatenate([[0.0], np.cumsum(y * y)])
    sx = cx[hi] - cx[lo]
    sxx = cxx[hi] - cxx[lo]
    sy = cy[hi + lags] - cy[lo + lags]
    syy = cyy[hi + lags] - cyy[lo + lags]
    full = fftconvolve(y, x[::-1])
    sxy = full[lags + k1 - 1]
    if integer:
        sxy = np.rint(sxy)

    vx = n * sxx - sx * sx
    vy = n * syy - sy * sy
    if integer:
        vx, vy = np.rint(vx), np.rint(vy)
    num = n * sxy - sx * sy
    with np.errstate(invalid="ignore", divide="ignore"):
        values = num / np.sqrt(vx * vy)
    values[(vx <= 0) | (vy <= 0) | (n < min_overlap)] = np.nan
    if not np.any(np.isfinite(values)):
        raise NoSignalError("count series carry no correlatable signal")
    return CorrelationCurve(lags=lags, values=values, best_lag=_pick_lag(lags, values))


def ransac_delay(
    n1,
    n2,
    trials: int = DEFAULT_TRIALS,
    window: int = DEFAULT_WINDOW,
    max_lag: int | None = None,
    seed: int = 0,
    clean_percentile: float = DEFAULT_CLEAN_PERCENTILE,
) -> TemporalCalibration:
    """Modal best lag over ``trials`` random aligned windows of both count series."""
    if trials < 1:
        raise DataError("trials must be >= 1")
    a = clean_counts(np.asarray(n1), clean_percentile)
    b = clean_counts(np.asarray(n2), clean_percentile)
    K = min(len(a), len(b))
    if window >= K + 1 or window < 2:
        raise InsufficientDataError(f"window {window} does not fit in {K} frames")
    if max_lag is None:
        max_lag = window // 2
    rng = np.random.default_rng(seed)
    starts = rng.integers(0, K - window + 1, size=trials)
    hist: Counter[int] = Counter()
    for s in starts:
        try:
            curve = cross_correlate(a[s : s + window], b[s : s + window], max_lag)
        except NoSignalError:
            continue
        hist[curve.best_lag] += 1
    n_valid = sum(hist.values())
    if n_valid == 0:
        raise NoSignalError("no window yields a valid correlation")
    top = max(hist.values())
    tied = sorted((lag for lag, c in hist.items() if c == top), key=lambda l: (abs(l), l))
    if len(tied) > 1:
        logger.warning("RANSAC lag histogram tie between %s; picking %d", tied, tied[0])
    return TemporalCalibration(
        delta_k=tied[0],
        support=top / n_valid,
        histogram=dict(hist),
        n_trials=trials,
        n_valid=n_valid,
        tied_lags=tied if len(tied) > 1 else [],
    )


# ---------------------------------------------------------------------------
# Spatial calibration
# ---------------------------------------------------------------------------


@dataclass
class CalibrationSet:
    b1: np.ndarray  # (N, 3) camera-1 bearings
    b2: np.ndarray  # (N, 3) camera-2 bearings
    frames: np.ndarray  # (N,) camera-1 frame index of each pair

    def __len__(self) -> int:
        return len(self.b1)


def _singletons(detections: Sequence[Detection]) -> dict[int, Detection]:
    by_frame: dict[int, list[Detection]] = defaultdict(list)
    for d in detections:
        by_frame[d.frame].append(d)
    return {k: v[0] for k, v in by_frame.items() if len(v) == 1}


def build_calibration_set(
    det1: Sequence[Detection],
    det2: Sequence[Detection],
    delta_k: int,
    cap: int = DEFAULT_CAP,
    seed: int = 0,
    n_bins: int = 36,
) -> CalibrationSet:
    """Bearing pairs from aligned frames where both cameras see exactly one flash.

    Sets larger than ``cap`` are subsampled round-robin over ``n_bins`` bins of
    the camera-1 polar angle, so the kept pairs stay spread around the rig.
    """
    s1 = _singletons(det1)
    s2 = _singletons(det2)
    frames = sorted(k for k in s1 if k + delta_k in s2)
    if len(frames) < MIN_PAIRS:
        raise InsufficientDataError(f"only {len(frames)} singleton pairs (need >= {MIN_PAIRS})")
    if len(frames) > cap:
        rng = np.random.default_rng(seed)
        bins: dict[int, list[int]] = defaultdict(list)
        for k in frames:
            bins[int(s1[k].theta // (360.0 / n_bins)) % n_bins].append(k)
        queues = []
        for key in sorted(bins):
            members = np.array(bins[key])
            queues.append(list(members[rng.permutation(len(members))]))
        chosen: list[int] = []
        depth = 0
        while len(chosen) < cap:
            for q in queues:
                if depth < len(q) and len(chosen) < cap:
                    chosen.append(int(q[depth]))
            depth += 1
        frames = sorted(chosen)
    b1 = angles_to_bearing(([s1[k].theta for k in frames], [s1[k].phi for k in frames]))
    b2 = angles_to_bearing(([s2[k + delta_k].theta for k in frames], [s2[k + delta_k].phi for k in frames]))
    return CalibrationSet(b1=b1, b2=b2, frames=np.array(frames, dtype=np.int64))


@dataclass
class PoseEstimate:
    pose: CameraPose
    cost: float
    iterations: int
    converged: bool
    residuals: np.ndarray

    def to_dict(self) -> dict:
        return {
            "t": self.pose.t.tolist(),
            "R": self.pose.R.tolist(),
            "cost": self.cost,
            "iterations": self.iterations,
            "converged": self.converged,
        }


def _params_to_pose(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    th, ph = p[0], p[1]
    t = np.array([np.cos(th) * np.sin(ph), np.sin(th) * np.sin(ph), np.cos(ph)])
    return t, Rotation.from_rotvec(p[2:5]).as_matrix()


def _pose_to_params(pose: CameraPose) -> np.ndarray:
    t = pose.t
    th = np.arctan2(t[1], t[0])
    ph = np.arccos(np.clip(t[2], -1.0, 1.0))
    return np.concatenate([[th, ph], Rotation.from_matrix(pose.R).as_rotvec()])


def _residuals(p: np.ndarray, b1: np.ndarray, b2: np.ndarray) -> np.ndarray:
    t, R = _params_to_pose(p)
    return np.einsum("ij,ij->i", b1, np.cross(t, b2 @ R))


def pose_cost(cset: CalibrationSet, pose: CameraPose) -> float:
    """Mean squared coplanarity residual of the set under ``pose``."""
    e = epipolar_residual(cset.b1, cset.b2, pose)
    return float(np.mean(e * e))


def _jacobian(p: np.ndarray, b1: np.ndarray, b2: np.ndarray, h: float = 1e-6) -> np.ndarray:
    J = np.empty((len(b1), len(p)))
    for j in range(len(p)):
        dp = np.zeros_like(p)
        dp[j] = h
        J[:, j] = (_residuals(p + dp, b1, b2) - _residuals(p - dp, b1, b2)) / (2 * h)
    return J


def _positive_depth_count(cset: CalibrationSet, pose: CameraPose) -> int:
    _, r1, r2, _, cond = triangulate_many(cset.b1, cset.b2, pose)
    ok = np.isfinite(cond) & (r1 > 0) & (r2 > 0)
    return int(ok.sum())


def resolve_twofold_ambiguity(cset: CalibrationSet, pose: CameraPose) -> CameraPose:
    """Pick, among the four poses with identical coplanarity cost, the one
    placing most points in front of both cameras.

    The cost is unchanged under ``t -> -t`` and under the twist
    ``R -> R (2 t t^T - I)`` (a half-turn about the baseline).
    """
    t, R = pose.t, pose.R
    twist = 2.0 * np.outer(t, t) - np.eye(3)
    candidates = [pose]
    for tt, RR in ((-t, R), (t, R @ twist), (-t, R @ twist)):
        candidates.append(CameraPose.from_parts(tt, RR))
    counts = [_positive_depth_count(cset, c) for c in candidates]
    return candidates[int(np.argmax(counts))]


def estimate_pose(
    cset: CalibrationSet,
    initial: CameraPose | None = None,
    max_iter: int = 200,
    ftol: float = 1e-12,
    xtol: float = 1e-10,
) -> PoseEstimate:
    """Levenberg-Marquardt on (t polar angles, R rotation vector).

    Returns the best pose found; ``converged`` is False when the iteration
    cap is hit first.
    """
    if len(cset) < MIN_PAIRS:
        raise InsufficientDataError(f"calibration set has {len(cset)} pairs (need >= {MIN_PAIRS})")
    initial = initial or CameraPose.identity()
    b1, b2 = cset.b1, cset.b2
    p = _pose_to_params(initial)
    r = _residuals(p, b1, b2)
    cost = float(np.mean(r * r))
    if not np.isfinite(cost):
        raise NumericalError("initial calibration cost is not finite")

    iterations = 0
    converged = cost < 1e-30
    lam = None
    nu = 2.0
    while not converged and iterations < max_iter:
        iterations += 1
        J = _jacobian(p, b1, b2)
        A = J.T @ J
        g = J.T @ r
        if lam is None:
            lam = 1e-3 * float(np.max(np.diag(A)))
        diag = np.maximum(np.diag(A), 1e-12)
        try:
            step = -np.linalg.solve(A + lam * np.diag(diag), g)
        except np.linalg.LinAlgError:
            lam *= nu
            nu *= 2
            continue
        p_new = p + step
        r_new = _residuals(p_new, b1, b2)
        cost_new = float(np.mean(r_new * r_new))
        if not np.isfinite(cost_new):
            raise NumericalError(f"calibration cost became non-finite at iteration {iterations}")
        if cost_new < cost:
            predicted = float(step @ (lam * diag * step - g)) / len(r)
            rho = (cost - cost_new) / predicted if predicted > 0 else 1.0
            lam *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
            nu = 2.0
            rel = (cost - cost_new) / cost
            p, r, cost = p_new, r_new, cost_new
            if rel < ftol or np.linalg.norm(step) < xtol or cost < 1e-30:
                converged = True
        else:
            if np.linalg.norm(step) < xtol:
                converged = True
            lam *= nu
            nu *= 2.0

    t, R = _params_to_pose(p)
    pose = resolve_twofold_ambiguity(cset, CameraPose.from_parts(t, R))
    res = epipolar_residual(b1, b2, pose)
    logger.info("pose estimate: cost=%.3g after %d iterations (converged=%s)", cost, iterations, converged)
    return PoseEstimate(
        pose=pose,
        cost=float(np.mean(res * res)),
        iterations=iterations,
        converged=converged,
        residuals=res,
    )
