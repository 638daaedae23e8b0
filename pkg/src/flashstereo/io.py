"""On-disk formats: frame sequences, detection/flash/trajectory CSVs, PLY, JSON.

See ``docs/formats.md`` for the schemas. Floats are written with ``repr`` so
files round-trip exactly and are byte-identical across runs.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import re
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np
from PIL import Image

from .detect import Detection, Patch
from .errors import DataError, ParseError

IMAGE_SUFFIXES = (".png", ".pgm", ".ppm")
DETECTION_COLUMNS = ["camera", "frame", "w", "h", "theta_deg", "phi_deg", "area", "peak"]
FLASH_COLUMNS = ["frame", "x_m", "y_m", "z_m", "r1", "r2", "residual"]
TRAJECTORY_COLUMNS = ["trajectory_id", "streak_id", "frame", "x_m", "y_m", "z_m"]


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json(path: str | Path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def read_json(path: str | Path):
    try:
        with open(path) as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e


# ---------------------------------------------------------------------------
# Frames
# ---------------------------------------------------------------------------


def list_frame_files(directory: str | Path) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"frame directory not found: {d}")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def read_image(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        return np.asarray(im, dtype=np.uint8)


def write_image(path: str | Path, array: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(array, dtype=np.uint8)).save(path)


def iter_frame_dir(directory: str | Path) -> Iterator[tuple[int, np.ndarray]]:
    """Yield ``(index, frame)``; lexicographic filename order is frame order."""
    for k, p in enumerate(list_frame_files(directory)):
        yield k, read_image(p)


def raw_header_path(path: Path) -> Path:
    return path.with_suffix(".json")


def iter_raw_stream(path: str | Path) -> Iterator[tuple[int, np.ndarray]]:
    """Planar 8-bit stream: per frame, one ``height x width`` plane per channel.

    The sidecar ``<name>.json`` holds ``width``, ``height``, ``channels`` and ``fps``.
    """
    path = Path(path)
    hdr = read_json(raw_header_path(path))
    try:
        w, h, c = int(hdr["width"]), int(hdr["height"]), int(hdr["channels"])
    except (KeyError, ValueError) as e:
        raise ParseError(f"{raw_header_path(path)}: bad raw header: {e}") from e
    if c not in (1, 3):
        raise ParseError(f"unsupported channel count {c}")
    frame_bytes = w * h * c
    with open(path, "rb") as f:
        k = 0
        while True:
            buf = f.read(frame_bytes)
            if not buf:
                return
            if len(buf) != frame_bytes:
                raise ParseError(f"{path}: truncated frame {k}")
            planes = np.frombuffer(buf, dtype=np.uint8).reshape(c, h, w)
            yield k, planes[0].copy() if c == 1 else np.moveaxis(planes, 0, -1).copy()
            k += 1


def write_raw_stream(path: str | Path, frames: Iterable[np.ndarray], fps: float) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    shape = None
    with open(path, "wb") as f:
        for fr in frames:
            fr = np.asarray(fr, dtype=np.uint8)
            shape = fr.shape
            planes = fr[None] if fr.ndim == 2 else np.moveaxis(fr, -1, 0)
            f.write(np.ascontiguousarray(planes).tobytes())
    if shape is None:
        raise DataError("no frames to write")
    c = 1 if len(shape) == 2 else shape[2]
    write_json(raw_header_path(path), {"width": shape[1], "height": shape[0], "channels": c, "fps": fps})


def open_frames(source: str | Path) -> Iterator[tuple[int, np.ndarray]]:
    source = Path(source)
    if source.is_dir():
        return iter_frame_dir(source)
    if source.suffix == ".raw":
        return iter_raw_stream(source)
    raise DataError(f"unrecognised frame source: {source}")


# ---------------------------------------------------------------------------
# Detections
# ---------------------------------------------------------------------------


def write_detections(path: str | Path, detections: Iterable[Detection], with_prob: bool = False) -> None:
    cols = DETECTION_COLUMNS + (["prob"] if with_prob else [])
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        wr = csv.writer(f, lineterminator="\n")
        wr.writerow(cols)
        for d in detections:
            row = [d.camera, d.frame, fmt(d.w), fmt(d.h), fmt(d.theta), fmt(d.phi), d.area, fmt(d.peak)]
            if with_prob:
                row.append(fmt(d.prob if d.prob is not None else math.nan))
            wr.writerow(row)


def read_detections(path: str | Path) -> list[Detection]:
    """Parse a detection CSV; errors name the offending line number."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"detections file not found: {path}")
    out = []
    with open(path, newline="") as f:
        rd = csv.reader(f)
        header = next(rd, None)
        if header is None or header[: len(DETECTION_COLUMNS)] != DETECTION_COLUMNS:
            raise ParseError(f"{path}: line 1: expected header {','.join(DETECTION_COLUMNS)}")
        has_prob = len(header) > len(DETECTION_COLUMNS) and header[len(DETECTION_COLUMNS)] == "prob"
        for row in rd:
            line = rd.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}: line {line}: expected {len(header)} fields, got {len(row)}")
            try:
                d = Detection(
                    camera=int(row[0]),
                    frame=int(row[1]),
                    w=float(row[2]),
                    h=float(row[3]),
                    theta=float(row[4]),
                    phi=float(row[5]),
                    area=int(row[6]),
                    peak=float(row[7]),
                    prob=float(row[8]) if has_prob else None,
                )
            except ValueError as e:
                raise ParseError(f"{path}: line {line}: {e}") from e
            if d.frame < 0 or not (math.isfinite(d.theta) and math.isfinite(d.phi)):
                raise ParseError(f"{path}: line {line}: invalid frame or angles")
            out.append(d)
    return out


# ---------------------------------------------------------------------------
# Patches
# ---------------------------------------------------------------------------


_PATCH_NAME = re.compile(r"c(?P<camera>\d+)_f(?P<frame>\d+)_w(?P<w>\d+)_h(?P<h>\d+)\.png")


def patch_filename(p: Patch, camera: int = 1) -> str:
    return f"c{camera}_f{p.frame:06d}_w{p.w:05d}_h{p.h:05d}.png"


def write_patch(root: str | Path, p: Patch, camera: int = 1) -> Path:
    path = Path(root) / p.label / patch_filename(p, camera)
    write_image(path, p.pixels)
    return path


def read_patch_dir(root: str | Path, labels=("flash", "artifact")) -> list[Patch]:
    """Load patches from ``<root>/<label>/*.png`` in sorted order."""
    root = Path(root)
    out = []
    for label in labels:
        d = root / label
        if not d.is_dir():
            continue
        for p in sorted(d.glob("*.png")):
            px = read_image(p)
            if px.ndim == 2:
                px = np.repeat(px[:, :, None], 3, axis=2)
            m = _PATCH_NAME.fullmatch(p.name)
            frame, w, h = (int(m["frame"]), int(m["w"]), int(m["h"])) if m else (-1, -1, -1)
            out.append(Patch(pixels=px, frame=frame, w=w, h=h, label=label))
    return out


# ---------------------------------------------------------------------------
# Flashes and trajectories
# ---------------------------------------------------------------------------


def write_flashes(path: str | Path, flashes) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        wr = csv.writer(f, lineterminator="\n")
        wr.writerow(FLASH_COLUMNS)
        for fl in flashes:
            x, y, z = fl.position
            wr.writerow([fl.frame, fmt(x), fmt(y), fmt(z), fmt(fl.r1), fmt(fl.r2), fmt(fl.residual)])


def read_flashes(path: str | Path) -> list:
    from .match import Flash3D

    out = []
    with open(path, newline="") as f:
        rd = csv.reader(f)
        header = next(rd, None)
        if header != FLASH_COLUMNS:
            raise ParseError(f"{path}: line 1: expected header {','.join(FLASH_COLUMNS)}")
        for row in rd:
            if not row:
                continue
            try:
                out.append(
                    Flash3D(
                        frame=int(row[0]),
                        position=np.array([float(row[1]), float(row[2]), float(row[3])]),
                        r1=float(row[4]),
                        r2=float(row[5]),
                        residual=float(row[6]),
                    )
                )
            except (ValueError, IndexError) as e:
                raise ParseError(f"{path}: line {rd.line_num}: {e}") from e
    return out


def write_ply(path: str | Path, flashes) -> None:
    """ASCII PLY point cloud, one vertex per flash with its frame index."""
    flashes = list(flashes)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {len(flashes)}\n")
        f.write("property double x\nproperty double y\nproperty double z\nproperty int frame\n")
        f.write("end_header\n")
        for fl in flashes:
            x, y, z = fl.position
            f.write(f"{fmt(x)} {fmt(y)} {fmt(z)} {fl.frame}\n")


def read_ply(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read back a PLY written by :func:`write_ply`: ``(xyz (N, 3), frames (N,))``."""
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != "ply":
        raise ParseError(f"{path}: not a PLY file")
    end = lines.index("end_header")
    n = next(int(l.split()[-1]) for l in lines[:end] if l.startswith("element vertex"))
    body = [l.split() for l in lines[end + 1 : end + 1 + n]]
    xyz = np.array([[float(v) for v in r[:3]] for r in body]).reshape(-1, 3)
    frames = np.array([int(r[3]) for r in body], dtype=int)
    return xyz, frames


def write_trajectories(path: str | Path, trajectories, streaks) -> None:
    by_id = {s.id: s for s in streaks}
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        wr = csv.writer(f, lineterminator="\n")
        wr.writerow(TRAJECTORY_COLUMNS)
        for tr in trajectories:
            for sid in tr.streak_ids:
                for fl in by_id[sid].flashes:
                    x, y, z = fl.position
                    wr.writerow([tr.id, sid, fl.frame, fmt(x), fmt(y), fmt(z)])


class FrameStore:
    """Random access to frame ``k`` of an image directory or raw stream."""

    def __init__(self, source: str | Path):
        self.source = Path(source)
        if self.source.is_dir():
            self._files = list_frame_files(self.source)
            self._raw = None
        elif self.source.suffix == ".raw":
            hdr = read_json(raw_header_path(self.source))
            self._raw = (int(hdr["width"]), int(hdr["height"]), int(hdr["channels"]))
            w, h, c = self._raw
            self._files = None
            self._n = self.source.stat().st_size // (w * h * c)
        else:
            raise DataError(f"unrecognised frame source: {self.source}")

    def __len__(self) -> int:
        return len(self._files) if self._files is not None else self._n

    def __getitem__(self, k: int) -> np.ndarray:
        if not 0 <= k < len(self):
            raise KeyError(k)
        if self._files is not None:
            return read_image(self._files[k])
        w, h, c = self._raw
        with open(self.source, "rb") as f:
            f.seek(k * w * h * c)
            planes = np.frombuffer(f.read(w * h * c), dtype=np.uint8).reshape(c, h, w)
        return planes[0].copy() if c == 1 else np.moveaxis(planes, 0, -1).copy()
