"""Bright transient blob detection by adaptive background subtraction.

Per frame: grayscale (luma), subtract the boxcar mean of the preceding
``ceil(tau * fps)`` frames, clamp at zero, Gaussian blur, threshold, then
label 8-connected components and report intensity-weighted centroids.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator

import numpy as np
from scipy import ndimage

from .errors import DataError
from .geometry import EquirectDims, pixel_to_angles

PATCH_SIZE = 65
PATCH_HALF = PATCH_SIZE // 2  # zero-based center index (32)
SEARCH_HALF = 7  # 15 x 15 re-centering window
DEFAULT_THRESHOLD = 25.0
DEFAULT_TAU_S = 2.0
DEFAULT_FPS = 30.0
DEFAULT_BLUR_RADIUS = 1.0

LUMA = np.array([0.299, 0.587, 0.114])
EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass
class Detection:
    """One bright blob in one frame.

    ``w``/``h`` is the intensity-weighted centroid; ``w_peak``/``h_peak`` the
    brightest foreground pixel. ``prob`` is filled in by the classifier.
    """

    frame: int
    w: float
    h: float
    theta: float
    phi: float
    area: int = 0
    peak: float = 0.0
    w_peak: int = -1
    h_peak: int = -1
    camera: int = 1
    prob: float | None = None

    @property
    def seed(self) -> tuple[int, int]:
        if self.w_peak >= 0:
            return self.w_peak, self.h_peak
        return int(round(self.w)), int(round(self.h))


@dataclass
class Patch:
    pixels: np.ndarray  # (65, 65, 3) uint8
    frame: int = -1
    w: int = -1
    h: int = -1
    label: str = "unlabeled"  # "flash", "artifact" or "unlabeled"

    def gray(self) -> np.ndarray:
        return to_gray(self.pixels)

    def is_centered(self) -> bool:
        g = self.gray()
        return g.shape == (PATCH_SIZE, PATCH_SIZE) and g[PATCH_HALF, PATCH_HALF] >= g.max()


def to_gray(frame: np.ndarray) -> np.ndarray:
    """Luma of an RGB frame as float64; grayscale frames pass through."""
    f = np.asarray(frame)
    if f.ndim == 2:
        return f.astype(np.float64)
    if f.ndim == 3 and f.shape[2] == 3:
        return f.astype(np.float64) @ LUMA
    raise DataError(f"unsupported frame shape {f.shape}")


def to_rgb(frame: np.ndarray) -> np.ndarray:
    f = np.asarray(frame)
    if f.ndim == 2:
        return np.repeat(f[:, :, None], 3, axis=2)
    return f


class BackgroundModel:
    """Sliding-window mean of the most recent frames (ring buffer).

    Feed frames in order with :meth:`update`; :attr:`mean` then averages the
    last ``min(n_seen, window)`` frames, which are all strictly before the next
    frame to be queried.
    """

    def __init__(self, shape: tuple[int, ...], tau_s: float = DEFAULT_TAU_S, fps: float = DEFAULT_FPS):
        if tau_s <= 0 or fps <= 0:
            raise DataError("tau and fps must be positive")
        self.shape = tuple(shape)
        self.tau_s = tau_s
        self.fps = fps
        self.window = max(1, math.ceil(tau_s * fps - 1e-9))
        self._buffer: deque[np.ndarray] = deque()
        self._sum = np.zeros(self.shape, dtype=np.float64)
        self.n_seen = 0

    @property
    def count(self) -> int:
        return len(self._buffer)

    @property
    def mean(self) -> np.ndarray:
        if not self._buffer:
            raise DataError("background model has not seen any frame")
        return self._sum / len(self._buffer)

    def update(self, frame: np.ndarray) -> "BackgroundModel":
        g = np.asarray(frame, dtype=np.float64)
        if g.shape != self.shape:
            raise DataError(f"frame shape {g.shape} does not match background {self.shape}")
        self._buffer.append(g)
        self._sum += g
        if len(self._buffer) > self.window:
            self._sum -= self._buffer.popleft()
        self.n_seen += 1
        return self


def update_background(model: BackgroundModel, frame: np.ndarray) -> BackgroundModel:
    return model.update(frame)


def foreground(frame: np.ndarray, model: BackgroundModel) -> np.ndarray:
    """``max(f - B, 0)`` on grayscale values."""
    return np.clip(np.asarray(frame, dtype=np.float64) - model.mean, 0.0, 255.0)


def blur(image: np.ndarray, radius: float = DEFAULT_BLUR_RADIUS) -> np.ndarray:
    """Gaussian blur with sigma = radius; wraps horizontally, edge-pads vertically."""
    if radius < 0:
        raise DataError("blur radius must be non-negative")
    img = np.asarray(image, dtype=np.float64)
    if radius == 0:
        return img.copy()
    return ndimage.gaussian_filter(img, sigma=radius, mode=("nearest", "wrap"))


def detect_blobs(
    fg: np.ndarray,
    threshold: float = DEFAULT_THRESHOLD,
    frame: int = 0,
    dims: EquirectDims | None = None,
    camera: int = 1,
) -> list[Detection]:
    """8-connected components of ``fg >= threshold`` as detections.

    Components are returned in label order (raster order of their first
    pixel). Without ``dims`` the angles are left at NaN.
    """
    if threshold <= 0:
        raise DataError("threshold must be positive")
    fg = np.asarray(fg, dtype=np.float64)
    labels, n = ndimage.label(fg >= threshold, structure=EIGHT_CONNECTED)
    if n == 0:
        return []
    idx = np.arange(1, n + 1)
    rows, cols = np.indices(fg.shape)
    mass = ndimage.sum_labels(fg, labels, idx)
    cw = ndimage.sum_labels(fg * cols, labels, idx) / mass
    ch = ndimage.sum_labels(fg * rows, labels, idx) / mass
    area = ndimage.sum_labels(np.ones_like(fg), labels, idx)
    peaks = ndimage.maximum(fg, labels, idx)
    peak_pos = ndimage.maximum_position(fg, labels, idx)
    out = []
    for i in range(n):
        w, h = float(cw[i]), float(ch[i])
        if dims is not None:
            theta, phi = pixel_to_angles(min(w, dims.width - 1e-9), h, dims)
        else:
            theta, phi = math.nan, math.nan
        out.append(
            Detection(
                frame=frame,
                w=w,
                h=h,
                theta=theta,
                phi=phi,
                area=int(area[i]),
                peak=float(peaks[i]),
                w_peak=int(peak_pos[i][1]),
                h_peak=int(peak_pos[i][0]),
                camera=camera,
            )
        )
    return out


def _window(frame: np.ndarray, wc: int, hc: int, half: int) -> np.ndarray:
    """Crop centered at (wc, hc): wraps columns, edge-pads rows."""
    H, W = frame.shape[:2]
    cols = np.arange(wc - half, wc + half + 1) % W
    rows = np.clip(np.arange(hc - half, hc + half + 1), 0, H - 1)
    return frame[np.ix_(rows, cols)]


def extract_patch(frame: np.ndarray, seed: tuple[int, int], max_steps: int = 1000) -> Patch:
    """65 x 65 RGB patch whose brightest (luma) pixel sits at the center.

    The seed ``(w, h)`` is first moved to the brightest pixel of the 15 x 15
    window around it. If the resulting patch still holds a brighter pixel the
    center is moved there and the check repeated, so the returned patch always
    satisfies the center-brightest invariant.
    """
    rgb = to_rgb(np.asarray(frame))
    H, W = rgb.shape[:2]
    if H < PATCH_SIZE or W < PATCH_SIZE:
        raise DataError(f"frame {W}x{H} smaller than a {PATCH_SIZE}x{PATCH_SIZE} patch")
    gray = to_gray(rgb)
    wc, hc = int(seed[0]) % W, int(np.clip(int(seed[1]), 0, H - 1))

    def recenter(half):
        win = _window(gray, wc, hc, half)
        if win[half, half] >= win.max():
            return wc, hc, False
        r, c = np.unravel_index(np.argmax(win), win.shape)
        return (wc + c - half) % W, int(np.clip(hc + r - half, 0, H - 1)), True

    wc, hc, _ = recenter(SEARCH_HALF)
    for _ in range(max_steps):
        wc, hc, moved = recenter(PATCH_HALF)
        if not moved:
            break
    return Patch(pixels=np.ascontiguousarray(_window(rgb, wc, hc, PATCH_HALF)), w=wc, h=hc)


@dataclass
class Detector:
    """Stateful per-camera detector; feed frames in order."""

    threshold: float = DEFAULT_THRESHOLD
    tau_s: float = DEFAULT_TAU_S
    fps: float = DEFAULT_FPS
    blur_radius: float = DEFAULT_BLUR_RADIUS
    camera: int = 1
    background: BackgroundModel | None = field(default=None, repr=False)

    def process(self, index: int, frame: np.ndarray) -> list[Detection]:
        gray = to_gray(frame)
        H, W = gray.shape
        dims = EquirectDims(W, H) if W == 2 * H else None
        if self.background is None:
            self.background = BackgroundModel(gray.shape, self.tau_s, self.fps)
        dets: list[Detection] = []
        if self.background.count > 0:
            fg = blur(foreground(gray, self.background), self.blur_radius)
            dets = detect_blobs(fg, self.threshold, frame=index, dims=dims, camera=self.camera)
        self.background.update(gray)
        return dets


def detect_frames(
    frames: Iterable[tuple[int, np.ndarray]],
    threshold: float = DEFAULT_THRESHOLD,
    tau_s: float = DEFAULT_TAU_S,
    fps: float = DEFAULT_FPS,
    blur_radius: float = DEFAULT_BLUR_RADIUS,
    camera: int = 1,
) -> Iterator[Detection]:
    """Run the detector over ``(index, frame)`` pairs; the first frame only seeds the background."""
    det = Detector(threshold, tau_s, fps, blur_radius, camera)
    for k, frame in frames:
        yield from det.process(k, frame)


def with_prob(d: Detection, prob: float) -> Detection:
    return replace(d, prob=float(prob))
