"""Spherical camera model for equirectangular 360-degree frames.

Conventions, fixed here and used everywhere else:

* An equirectangular frame is ``2P x P`` pixels. Column ``w`` maps to the polar
  angle ``theta = 360 * w / 2P`` and row ``h`` to the azimuthal angle
  ``phi = 180 * h / P``, both in degrees.
* The bearing for ``(theta, phi)`` is
  ``(cos theta sin phi, sin theta sin phi, cos phi)``, so ``+z`` points at the
  ``phi = 0`` pole (top row of the frame).
* Camera 1 defines the world frame. Camera 2 sits at ``t`` (unit norm, the
  baseline unit) and a world point ``X`` is seen by camera 2 along
  ``R @ (X - t)``. Equivalently ``X = t + R.T @ (r2 * alpha2)``.

All functions accept scalars or numpy arrays and broadcast.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import BehindCameraError, DegenerateGeometryError, DomainError

UNIT_TOL = 1e-9
MAX_CONDITION = 1e8


@dataclass(frozen=True)
class EquirectDims:
    """Equirectangular frame size: ``width == 2 * height``."""

    width: int
    height: int

    def __post_init__(self):
        if self.height < 2 or self.width != 2 * self.height:
            raise DomainError(
                f"equirectangular frame must be 2P x P with P >= 2, got {self.width}x{self.height}"
            )

    @classmethod
    def from_height(cls, p: int) -> "EquirectDims":
        return cls(2 * int(p), int(p))

    @property
    def p(self) -> int:
        return self.height


class SphericalAngles(NamedTuple):
    theta: float | np.ndarray  # degrees, [0, 360)
    phi: float | np.ndarray  # degrees, [0, 180]


class Triangulation(NamedTuple):
    point: np.ndarray
    r1: float | np.ndarray
    r2: float | np.ndarray
    residual: float | np.ndarray


@dataclass(frozen=True, eq=False)
class CameraPose:
    """Pose of camera 2 relative to camera 1.

    Attributes:
        t: Unit vector from camera 1 to camera 2, in camera-1 coordinates.
        R: Rotation taking camera-1 axes to camera-2 axes.
    """

    t: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).reshape(3)
        R = np.asarray(self.R, dtype=float).reshape(3, 3)
        if not np.all(np.isfinite(t)) or not np.all(np.isfinite(R)):
            raise DomainError("pose contains non-finite values")
        if abs(np.linalg.norm(t) - 1.0) > UNIT_TOL:
            raise DomainError(f"pose translation must have unit norm, got |t|={np.linalg.norm(t)!r}")
        if np.abs(R.T @ R - np.eye(3)).max() > UNIT_TOL or abs(np.linalg.det(R) - 1.0) > UNIT_TOL:
            raise DomainError("pose rotation is not a proper rotation matrix")
        t.setflags(write=False)
        R.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "R", R)

    @classmethod
    def identity(cls) -> "CameraPose":
        """Camera 2 one baseline unit along +x with the same orientation."""
        return cls(np.array([1.0, 0.0, 0.0]), np.eye(3))

    @classmethod
    def from_parts(cls, t, R) -> "CameraPose":
        """Build a pose after projecting ``t`` and ``R`` back onto their manifolds."""
        t = np.asarray(t, dtype=float)
        return cls(t / np.linalg.norm(t), orthonormalize(R))

    @classmethod
    def from_rotvec(cls, t, rotvec) -> "CameraPose":
        return cls.from_parts(t, Rotation.from_rotvec(np.asarray(rotvec, dtype=float)).as_matrix())

    def inverse(self) -> "CameraPose":
        """Pose of camera 1 as seen from camera 2 (swaps the camera roles)."""
        return CameraPose.from_parts(-self.R @ self.t, self.R.T)

    def to_dict(self) -> dict:
        return {"t": self.t.tolist(), "R": self.R.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraPose":
        try:
            return cls(np.asarray(d["t"], dtype=float), np.asarray(d["R"], dtype=float))
        except DomainError:
            # hand-written values: project onto unit t and a proper rotation
            return cls.from_parts(d["t"], d["R"])


def orthonormalize(R) -> np.ndarray:
    """Closest proper rotation to ``R`` in the Frobenius sense."""
    u, _, vt = np.linalg.svd(np.asarray(R, dtype=float))
    Q = u @ vt
    if np.linalg.det(Q) < 0:
        u[:, -1] *= -1
        Q = u @ vt
    return Q


def rotation_angle_deg(R_a, R_b) -> float:
    """Angle of the relative rotation ``R_a @ R_b.T`` in degrees."""
    c = (np.trace(np.asarray(R_a) @ np.asarray(R_b).T) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def angle_between_deg(u, v) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    c = np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v))
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def pixel_to_angles(w, h, dims: EquirectDims) -> SphericalAngles:
    w_arr = np.asarray(w, dtype=float)
    h_arr = np.asarray(h, dtype=float)
    if np.any(w_arr < 0) or np.any(w_arr >= dims.width) or np.any(h_arr < 0) or np.any(h_arr > dims.height):
        raise DomainError(f"pixel outside equirectangular frame {dims.width}x{dims.height}")
    theta = 360.0 * w_arr / dims.width
    phi = 180.0 * h_arr / dims.height
    if theta.ndim == 0:
        return SphericalAngles(float(theta), float(phi))
    return SphericalAngles(theta, phi)


def angles_to_pixel(angles: SphericalAngles, dims: EquirectDims) -> tuple:
    theta, phi = angles
    w = np.asarray(theta, dtype=float) * dims.width / 360.0
    h = np.asarray(phi, dtype=float) * dims.height / 180.0
    if w.ndim == 0:
        return float(w), float(h)
    return w, h


def angles_to_bearing(angles: SphericalAngles) -> np.ndarray:
    """Unit bearing(s), shape ``(3,)`` or ``(..., 3)``."""
    theta = np.radians(np.asarray(angles[0], dtype=float))
    phi = np.radians(np.asarray(angles[1], dtype=float))
    sp = np.sin(phi)
    return np.stack([np.cos(theta) * sp, np.sin(theta) * sp, np.cos(phi)], axis=-1)


def bearing_to_angles(b) -> SphericalAngles:
    """Inverse of :func:`angles_to_bearing`; theta is 0 at the poles."""
    b = np.asarray(b, dtype=float)
    norms = np.linalg.norm(b, axis=-1)
    if np.any(np.abs(norms - 1.0) > UNIT_TOL):
        raise DomainError("bearing must be a unit vector")
    x, y, z = b[..., 0], b[..., 1], b[..., 2]
    phi = np.degrees(np.arctan2(np.hypot(x, y), z))
    theta = np.degrees(np.arctan2(y, x)) % 360.0
    # x % 360 can round up to exactly 360 for tiny negative angles
    theta = np.where(theta >= 360.0, 0.0, theta)
    theta = np.where(np.hypot(x, y) == 0.0, 0.0, theta)
    if theta.ndim == 0:
        return SphericalAngles(float(theta), float(phi))
    return SphericalAngles(theta, phi)


def normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n == 0):
        raise DomainError("cannot normalize a zero-length vector")
    return v / n


def project(point, pose: CameraPose | None = None) -> SphericalAngles:
    """Angles at which a camera sees ``point`` (baseline units, camera-1 frame).

    ``pose=None`` is camera 1 (identity); otherwise the point is expressed in
    camera 2's frame as ``R @ (X - t)``.
    """
    X = np.asarray(point, dtype=float)
    if pose is not None:
        X = (X - pose.t) @ pose.R.T
    n = np.linalg.norm(X, axis=-1, keepdims=True)
    if np.any(n == 0):
        raise DomainError("point coincides with the camera center")
    return bearing_to_angles(X / n)


def triangulate_many(b1, b2, pose: CameraPose) -> tuple:
    """Vectorised triangulation without raising.

    Returns ``(points, r1, r2, residual, condition)`` for arrays of bearings of
    shape ``(N, 3)``. Callers decide what to do with degenerate rows.
    """
    a = np.atleast_2d(np.asarray(b1, dtype=float))
    b = np.atleast_2d(np.asarray(b2, dtype=float)) @ pose.R  # rows of R^-1 @ alpha2
    t = pose.t
    # normal equations of [a, -b] [r1, r2]^T = t, for unit a and b
    c = np.einsum("ij,ij->i", a, b)
    at = a @ t
    bt = b @ t
    det = 1.0 - c * c
    with np.errstate(divide="ignore", invalid="ignore"):
        r1 = (at - c * bt) / det
        r2 = (c * at - bt) / det
        condition = (1.0 + np.abs(c)) / (1.0 - np.abs(c))
    points = r1[:, None] * a
    gap = points - t - r2[:, None] * b
    residual = np.linalg.norm(gap, axis=1)
    return points, r1, r2, residual, condition


def triangulate(b1, b2, pose: CameraPose) -> Triangulation:
    """Least-squares depths along both rays; the point lies on ray 1.

    Raises:
        DegenerateGeometryError: rays (near) parallel.
        BehindCameraError: a depth is not positive.
    """
    points, r1, r2, residual, condition = triangulate_many(b1, b2, pose)
    if not np.isfinite(condition[0]) or condition[0] > MAX_CONDITION:
        raise DegenerateGeometryError(f"near-parallel rays (condition number {condition[0]:.3g})")
    if r1[0] <= 0 or r2[0] <= 0:
        raise BehindCameraError(f"negative depth (r1={r1[0]:.6g}, r2={r2[0]:.6g})")
    return Triangulation(points[0], float(r1[0]), float(r2[0]), float(residual[0]))


def epipolar_residual(b1, b2, pose: CameraPose):
    """Coplanarity residual ``alpha1 . (t x R^-1 alpha2)``; zero for consistent pairs."""
    a = np.asarray(b1, dtype=float)
    b = np.asarray(b2, dtype=float) @ pose.R
    return np.einsum("...i,...i->...", a, np.cross(pose.t, b))


def random_rotation(rng: np.random.Generator, max_angle_deg: float | None = None) -> np.ndarray:
    """Uniform random rotation, or a random axis with angle up to ``max_angle_deg``."""
    if max_angle_deg is None:
        return Rotation.random(random_state=rng).as_matrix()
    axis = normalize(rng.normal(size=3))
    angle = np.radians(rng.uniform(0, max_angle_deg))
    return Rotation.from_rotvec(axis * angle).as_matrix()


def perturb_bearings(bearings, sigma_deg: float, rng: np.random.Generator) -> np.ndarray:
    """Add isotropic Gaussian angular noise (per tangent axis) to unit bearings."""
    b = np.atleast_2d(np.asarray(bearings, dtype=float))
    if sigma_deg <= 0:
        return b.copy()
    helper = np.where(np.abs(b[:, 2:3]) < 0.9, np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0]))
    e1 = normalize(np.cross(b, helper))
    e2 = np.cross(b, e1)
    s = np.radians(sigma_deg)
    d = rng.normal(scale=s, size=(len(b), 2))
    return normalize(b + d[:, :1] * e1 + d[:, 1:] * e2)
