"""Cross-camera matching of aligned detections and triangulation to 3D flashes."""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .detect import Detection
from .geometry import MAX_CONDITION, CameraPose, angles_to_bearing, triangulate_many

DEFAULT_TOL_DEG = 0.5
DEFAULT_GATE_DEG = 0.5
DEFAULT_MAX_RANGE_M = 100.0
DEFAULT_MIN_PARALLAX_DEG = 3.0  # depth is poorly constrained near the baseline axis


@dataclass
class MatchedPair:
    frame: int  # camera-1 clock
    i1: int  # index into camera-1 detections of that frame
    i2: int
    b1: np.ndarray
    b2: np.ndarray
    residual_deg: float


@dataclass
class Flash3D:
    frame: int
    position: np.ndarray  # meters, camera-1 frame
    r1: float  # meters
    r2: float  # meters
    residual: float  # meters, gap between the two rays

    @property
    def x(self) -> float:
        return float(self.position[0])


@dataclass
class TriangulationStats:
    kept: int = 0
    rejected: Counter = field(default_factory=Counter)

    def to_dict(self) -> dict:
        return {"kept": self.kept, "rejected": dict(sorted(self.rejected.items()))}


def angular_residual_matrix(b1: np.ndarray, b2: np.ndarray, pose: CameraPose) -> np.ndarray:
    """Symmetric angular coplanarity residual in degrees, shape ``(n1, n2)``.

    With ``e = a1 . (t x R^-1 a2)``, ``asin(|e| / |t x R^-1 a2|)`` is the angle
    between ray 1 and the epipolar plane of ray 2, and vice versa with
    ``|t x a1|``. The mean of the two is unchanged when the cameras swap roles.
    Bearings along the baseline carry no epipolar information and get ``inf``.
    """
    a = np.atleast_2d(b1)
    b = np.atleast_2d(b2) @ pose.R
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)))
    e = np.abs(a @ np.cross(pose.t, b).T)
    n1 = np.linalg.norm(np.cross(pose.t, a), axis=1)[:, None]
    n2 = np.linalg.norm(np.cross(pose.t, b), axis=1)[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        ang1 = np.degrees(np.arcsin(np.clip(e / n2, 0.0, 1.0)))
        ang2 = np.degrees(np.arcsin(np.clip(e / n1, 0.0, 1.0)))
    out = 0.5 * (ang1 + ang2)
    out[~np.isfinite(out) | (n1 < 1e-12) | (n2 < 1e-12)] = np.inf
    return out


def _mutual_best(cost: np.ndarray, tol: float) -> list[tuple[int, int]]:
    row_best = np.argmin(cost, axis=1)
    col_best = np.argmin(cost, axis=0)
    return [(i, int(j)) for i, j in enumerate(row_best) if col_best[j] == i and cost[i, j] < tol]


def _assignment(cost: np.ndarray, tol: float) -> list[tuple[int, int]]:
    gated = np.where(cost < tol, cost, np.inf)
    big = (np.nansum(gated[np.isfinite(gated)]) + 1.0) * (1 + cost.size)
    rows, cols = linear_sum_assignment(np.where(np.isfinite(gated), gated, big))
    return sorted((int(i), int(j)) for i, j in zip(rows, cols) if np.isfinite(gated[i, j]))


def match_frame(
    dets1: Sequence[Detection],
    dets2: Sequence[Detection],
    pose: CameraPose,
    tol_deg: float = DEFAULT_TOL_DEG,
    method: str = "mutual",
) -> list[MatchedPair]:
    """Match one aligned frame pair by epipolar consistency.

    ``method="mutual"`` keeps pairs that are each other's lowest residual;
    ``method="assignment"`` solves the minimum-cost one-to-one assignment over
    the gated residuals (rows/columns may stay unmatched).
    """
    if not dets1 or not dets2:
        return []
    b1 = angles_to_bearing(([d.theta for d in dets1], [d.phi for d in dets1]))
    b2 = angles_to_bearing(([d.theta for d in dets2], [d.phi for d in dets2]))
    cost = angular_residual_matrix(b1, b2, pose)
    if method == "mutual":
        pairs = _mutual_best(cost, tol_deg)
    elif method == "assignment":
        pairs = _assignment(cost, tol_deg)
    else:
        raise ValueError(f"unknown matching method {method!r}")
    return [
        MatchedPair(dets1[i].frame, i, j, b1[i], b2[j], float(cost[i, j]))
        for i, j in pairs
    ]


def match_streams(
    det1: Sequence[Detection],
    det2: Sequence[Detection],
    pose: CameraPose,
    delta_k: int,
    tol_deg: float = DEFAULT_TOL_DEG,
    method: str = "mutual",
) -> list[MatchedPair]:
    """Match every camera-1 frame ``k`` against camera-2 frame ``k + delta_k``."""
    by1: dict[int, list[Detection]] = defaultdict(list)
    by2: dict[int, list[Detection]] = defaultdict(list)
    for d in det1:
        by1[d.frame].append(d)
    for d in det2:
        by2[d.frame].append(d)
    out = []
    for k in sorted(by1):
        other = by2.get(k + delta_k)
        if other:
            out.extend(match_frame(by1[k], other, pose, tol_deg, method))
    return out


def triangulate_all(
    pairs: Sequence[MatchedPair],
    pose: CameraPose,
    separation_s: float,
    gate_deg: float = DEFAULT_GATE_DEG,
    max_range_m: float = DEFAULT_MAX_RANGE_M,
    min_parallax_deg: float = DEFAULT_MIN_PARALLAX_DEG,
) -> tuple[list[Flash3D], TriangulationStats]:
    """Triangulate pairs and scale to meters; failing pairs are tallied by reason.

    The point lies on ray 1, so it reprojects exactly into camera 1; in
    camera 2 it is off ray 2 by ``atan(gap / r2)``. A pair is kept when the
    rays are not near-parallel, both depths are positive, that reprojection
    error is at most ``gate_deg``, the two rays meet at an angle of at
    least ``min_parallax_deg`` and the point lies within ``max_range_m`` of
    camera 1.
    """
    if separation_s <= 0:
        raise ValueError("separation must be positive")
    stats = TriangulationStats()
    if not pairs:
        return [], stats
    b1 = np.array([p.b1 for p in pairs])
    b2 = np.array([p.b2 for p in pairs])
    pts, r1, r2, res, cond = triangulate_many(b1, b2, pose)
    parallax = np.degrees(np.arccos(np.clip(np.einsum("ij,ij->i", b1, b2 @ pose.R), -1.0, 1.0)))
    out = []
    for i, p in enumerate(pairs):
        if not np.isfinite(cond[i]) or cond[i] > MAX_CONDITION:
            stats.rejected["degenerate"] += 1
        elif r1[i] <= 0 or r2[i] <= 0:
            stats.rejected["behind_camera"] += 1
        elif np.degrees(np.arctan2(res[i], r2[i])) > gate_deg:
            stats.rejected["residual"] += 1
        elif parallax[i] < min_parallax_deg:
            stats.rejected["low_parallax"] += 1
        elif r1[i] * separation_s > max_range_m:
            stats.rejected["max_range"] += 1
        else:
            out.append(
                Flash3D(
                    frame=p.frame,
                    position=pts[i] * separation_s,
                    r1=float(r1[i] * separation_s),
                    r2=float(r2[i] * separation_s),
                    residual=float(res[i] * separation_s),
                )
            )
    stats.kept = len(out)
    return out, stats
