"""File formats and ingestion: PPM/PGM images, ASCII PLY clouds, pose files,
point-cloud colorization and Gaussian initialization.

All loaders are strict: malformed input raises FormatError/TruncationError
with a location, never a silently repaired value. Multi-byte samples inside
the 16-bit depth PGM follow the netpbm convention (big-endian).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InvalidInputError, TruncationError
from .gaussians import GaussianSet, logit
from .geometry import Intrinsics, Pose, pose_inverse


@dataclass
class ColoredPointCloud:
    points: np.ndarray   # (N,3) scene units
    colors: np.ndarray   # (N,3) RGB in [0,1]

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        if len(self.points) != len(self.colors):
            raise InvalidInputError("point and color counts differ")
        if not np.isfinite(self.points).all():
            raise InvalidInputError("point positions must be finite")

    def __len__(self):
        return len(self.points)


@dataclass
class FrameRecord:
    image_path: str
    pose: Pose                  # world-to-camera (converted at load time)
    timestamp: float = 0.0
    mask_path: str | None = None


# --- netpbm images ------------------------------------------------------


def _read_pnm_header(data: bytes, magic: bytes, path, n_fields: int):
    """Parse 'P6/P5 <w> <h> <maxval>' allowing whitespace and # comments."""
    if not data.startswith(magic):
        raise FormatError(f"{path}: bad magic {data[:2]!r}, expected {magic.decode()}", offset=0)
    pos = len(magic)
    fields = []
    while len(fields) < n_fields:
        if pos >= len(data):
            raise TruncationError(f"{path}: header ends early", offset=pos)
        c = data[pos:pos + 1]
        if c.isspace():
            pos += 1
        elif c == b"#":
            nl = data.find(b"\n", pos)
            if nl < 0:
                raise TruncationError(f"{path}: unterminated comment", offset=pos)
            pos = nl + 1
        elif c.isdigit():
            end = pos
            while end < len(data) and data[end:end + 1].isdigit():
                end += 1
            fields.append(int(data[pos:end]))
            pos = end
        else:
            raise FormatError(f"{path}: unexpected byte {c!r} in header", offset=pos)
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise FormatError(f"{path}: missing whitespace after header", offset=pos)
    return fields, pos + 1


def load_image(path) -> np.ndarray:
    """Binary PPM (P6, maxval 255) -> float HxWx3 in [0,1]."""
    with open(path, "rb") as f:
        data = f.read()
    (w, h, maxval), pos = _read_pnm_header(data, b"P6", path, 3)
    if maxval != 255:
        raise FormatError(f"{path}: maxval must be 255, got {maxval}", offset=pos)
    need = w * h * 3
    raw = data[pos:pos + need]
    if len(raw) < need:
        raise TruncationError(f"{path}: expected {need} pixel bytes, got {len(raw)}",
                              offset=pos + len(raw))
    if len(data) > pos + need:
        raise FormatError(f"{path}: trailing bytes after pixel data", offset=pos + need)
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3).astype(np.float64) / 255.0


def save_image(path, img) -> None:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise InvalidInputError(f"expected HxWx3 image, got {img.shape}")
    h, w = img.shape[:2]
    u8 = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(u8.tobytes())


def load_mask(path) -> np.ndarray:
    """Binary PGM (P5, maxval 255) -> bool HxW; 255 keeps a pixel."""
    with open(path, "rb") as f:
        data = f.read()
    (w, h, maxval), pos = _read_pnm_header(data, b"P5", path, 3)
    if maxval != 255:
        raise FormatError(f"{path}: maxval must be 255, got {maxval}", offset=pos)
    need = w * h
    raw = data[pos:pos + need]
    if len(raw) < need:
        raise TruncationError(f"{path}: expected {need} mask bytes, got {len(raw)}",
                              offset=pos + len(raw))
    if len(data) > pos + need:
        raise FormatError(f"{path}: trailing bytes after mask data", offset=pos + need)
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w) == 255


def save_mask(path, mask) -> None:
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(np.where(mask, 255, 0).astype(np.uint8).tobytes())


def save_depth_pgm(path, depth, scale: float = 1000.0) -> None:
    """16-bit PGM depth map: depth*scale rounded, clamped to [0, 65535].

    16-bit netpbm samples are big-endian.
    """
    depth = np.asarray(depth, dtype=np.float64)
    h, w = depth.shape
    q = np.clip(np.rint(depth * scale), 0, 65535).astype(">u2")
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n65535\n" % (w, h))
        f.write(q.tobytes())


def load_depth_pgm(path, scale: float = 1000.0) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    (w, h, maxval), pos = _read_pnm_header(data, b"P5", path, 3)
    if maxval != 65535:
        raise FormatError(f"{path}: depth maps use maxval 65535, got {maxval}", offset=pos)
    need = w * h * 2
    raw = data[pos:pos + need]
    if len(raw) < need:
        raise TruncationError(f"{path}: expected {need} depth bytes, got {len(raw)}",
                              offset=pos + len(raw))
    return np.frombuffer(raw, dtype=">u2").reshape(h, w).astype(np.float64) / scale


# --- ASCII PLY ----------------------------------------------------------

_PLY_HEADER = ("ply", "format ascii 1.0", "element vertex {n}",
               "property float x", "property float y", "property float z",
               "property uchar red", "property uchar green", "property uchar blue",
               "end_header")


def save_ply(path, cloud: ColoredPointCloud) -> None:
    with open(path, "w") as f:
        f.write("\n".join(_PLY_HEADER).format(n=len(cloud)) + "\n")
        cols = np.clip(np.rint(cloud.colors * 255.0), 0, 255).astype(np.uint8)
        pts32 = cloud.points.astype(np.float32)
        for p, c in zip(pts32, cols):
            f.write(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g} {c[0]} {c[1]} {c[2]}\n")


def load_ply(path) -> ColoredPointCloud:
    with open(path, "r") as f:
        lines = f.read().splitlines()
    want = [s.format(n="{n}") for s in _PLY_HEADER]
    n = None
    for i, expect in enumerate(_PLY_HEADER):
        if i >= len(lines):
            raise TruncationError(f"{path}: header ends early", line=i + 1)
        got = lines[i].strip()
        if expect == "element vertex {n}":
            parts = got.split()
            if len(parts) != 3 or parts[:2] != ["element", "vertex"] or not parts[2].isdigit():
                raise FormatError(f"{path}: bad element line {got!r}", line=i + 1)
            n = int(parts[2])
        elif got != expect:
            raise FormatError(f"{path}: expected {expect!r}, got {got!r}", line=i + 1)
    body = lines[len(_PLY_HEADER):]
    if len(body) < n:
        raise TruncationError(f"{path}: {n} vertices declared, {len(body)} present",
                              line=len(lines))
    if any(s.strip() for s in body[n:]):
        raise FormatError(f"{path}: trailing content after {n} vertices",
                          line=len(_PLY_HEADER) + n + 1)
    pts = np.empty((n, 3))
    cols = np.empty((n, 3))
    for i in range(n):
        parts = body[i].split()
        if len(parts) != 6:
            raise FormatError(f"{path}: vertex needs 6 fields, got {len(parts)}",
                              line=len(_PLY_HEADER) + i + 1)
        try:
            pts[i] = [float(parts[0]), float(parts[1]), float(parts[2])]
            cols[i] = [int(parts[3]), int(parts[4]), int(parts[5])]
        except ValueError as e:
            raise FormatError(f"{path}: {e}", line=len(_PLY_HEADER) + i + 1) from None
        if cols[i].max() > 255 or cols[i].min() < 0:
            raise FormatError(f"{path}: color out of byte range", line=len(_PLY_HEADER) + i + 1)
    return ColoredPointCloud(pts, cols / 255.0)


# --- pose files ---------------------------------------------------------
# one line per frame: timestamp tx ty tz qx qy qz qw (camera-to-world)


def save_poses(path, poses) -> None:
    """Writes world-to-camera poses in the camera-to-world file convention."""
    with open(path, "w") as f:
        for i, p in enumerate(poses):
            c2w = pose_inverse(p)
            t = c2w.translation
            w, x, y, z = c2w.quat
            ts = p.timestamp if p.timestamp is not None else float(i)
            f.write(f"{ts:.17g} {t[0]:.17g} {t[1]:.17g} {t[2]:.17g} "
                    f"{x:.17g} {y:.17g} {z:.17g} {w:.17g}\n")


def load_poses(path) -> list[Pose]:
    """Reads camera-to-world lines, returning world-to-camera poses."""
    poses = []
    with open(path, "r") as f:
        for lineno, line in enumerate(f, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = s.split()
            if len(parts) != 8:
                raise FormatError(f"{path}: pose line needs 8 fields, got {len(parts)}",
                                  line=lineno)
            try:
                vals = [float(v) for v in parts]
            except ValueError as e:
                raise FormatError(f"{path}: {e}", line=lineno) from None
            ts, tx, ty, tz, qx, qy, qz, qw = vals
            c2w = Pose(np.array([qw, qx, qy, qz]), np.array([tx, ty, tz]), ts)
            poses.append(pose_inverse(c2w))
    return poses


# --- colorization and gaussian init -------------------------------------


def colorize(points, frames, K: Intrinsics) -> ColoredPointCloud:
    """Color each point from the nearest-depth frame seeing it.

    A frame sees a point when the projection is in bounds, in front of the
    near plane, and (when the frame has a mask) lands on a kept pixel. Points
    seen by no frame are dropped. Ties on depth keep the earliest frame.
    """
    frames = list(frames)
    if not frames:
        raise InvalidInputError("colorize needs at least one frame")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    best_z = np.full(n, np.inf)
    best_color = np.zeros((n, 3))
    for fr in frames:
        img = load_image(fr.image_path)
        mask = load_mask(fr.mask_path) if fr.mask_path else None
        h, w = img.shape[:2]
        if (h, w) != (K.height, K.width):
            raise InvalidInputError(
                f"{fr.image_path}: image {w}x{h} does not match intrinsics "
                f"{K.width}x{K.height}")
        pc = pts @ fr.pose.rotation.T + fr.pose.translation
        z = pc[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = np.rint(K.fx * pc[:, 0] / z + K.cx).astype(np.int64)
            v = np.rint(K.fy * pc[:, 1] / z + K.cy).astype(np.int64)
        ok = (z > K.near) & (u >= 0) & (u < w) & (v >= 0) & (v < h)
        if mask is not None:
            sel = np.nonzero(ok)[0]
            ok[sel] &= mask[v[sel], u[sel]]
        ok &= z < best_z
        sel = np.nonzero(ok)[0]
        best_z[sel] = z[sel]
        best_color[sel] = img[v[sel], u[sel]]
    seen = np.isfinite(best_z)
    return ColoredPointCloud(pts[seen], best_color[seen])


def _knn_mean_distance(pts: np.ndarray, k: int = 3, chunk: int = 512) -> np.ndarray:
    """Mean distance to the k nearest neighbors (excluding self)."""
    n = len(pts)
    out = np.empty(n)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        d2 = ((pts[lo:hi, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
        d2[np.arange(hi - lo), np.arange(lo, hi)] = np.inf
        part = np.partition(d2, k - 1, axis=1)[:, :k]
        out[lo:hi] = np.sqrt(part).mean(axis=1)
    return out


def init_gaussians(cloud: ColoredPointCloud, opacity: float = 0.1,
                   scale_bounds=(0.01, 2.0)) -> GaussianSet:
    """One isotropic Gaussian per point; scale from 3-NN mean distance."""
    n = len(cloud)
    if n == 0:
        raise InvalidInputError("cannot initialize from an empty cloud")
    if n < 4:
        scales = np.full(n, 0.1)
    else:
        scales = np.clip(_knn_mean_distance(cloud.points), *scale_bounds)
    quat = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
    return GaussianSet(
        cloud.points.copy(),
        np.log(np.repeat(scales[:, None], 3, axis=1)),
        quat,
        cloud.colors.copy(),
        np.full(n, float(logit(opacity))),
    )
