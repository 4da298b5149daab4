"""Global Gaussian map: 2D voxel grid keyed by packed cell IDs + KD-tree.

The grid covers (x, y) only; z never enters the key, so each cell is an
unbounded vertical column. The KD-tree indexes occupied-cell centers and is
rebuilt lazily whenever the occupied-cell set changed.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np

from .errors import EmptySubmapError, FormatError, InvalidInputError, OutOfRangeError, TruncationError
from .gaussians import GaussianSet
from .geometry import Pose
from .kdtree2d import KDTree2D

_INT32_MIN = -(2 ** 31)
_INT32_MAX = 2 ** 31 - 1

MAGIC = b"GSMAP\0"
FORMAT_VERSION = 1


@dataclass(frozen=True, order=True)
class VoxelKey:
    """Signed 2D cell index, packed bijectively into one 64-bit ID."""

    ix: int
    iy: int

    def packed(self) -> int:
        return ((self.ix & 0xFFFFFFFF) << 32) | (self.iy & 0xFFFFFFFF)

    @staticmethod
    def unpack(packed: int) -> "VoxelKey":
        ix = (packed >> 32) & 0xFFFFFFFF
        iy = packed & 0xFFFFFFFF
        if ix > _INT32_MAX:
            ix -= 2 ** 32
        if iy > _INT32_MAX:
            iy -= 2 ** 32
        return VoxelKey(ix, iy)


def voxel_key(x: float, y: float, voxel_size: float) -> VoxelKey:
    """Cell containing (x, y): floor division, so negatives round down."""
    if voxel_size <= 0:
        raise InvalidInputError("voxel_size must be positive")
    ix = int(np.floor(x / voxel_size))
    iy = int(np.floor(y / voxel_size))
    if not (_INT32_MIN <= ix <= _INT32_MAX and _INT32_MIN <= iy <= _INT32_MAX):
        raise OutOfRangeError(f"voxel index ({ix}, {iy}) outside signed 32-bit range")
    return VoxelKey(ix, iy)


@dataclass
class Submap:
    """Gaussians extracted around a pose, with back-references to source cells."""

    gaussians: GaussianSet
    keys: list          # VoxelKey per source cell, sorted
    cell_index: np.ndarray  # (N,) index into keys for each Gaussian

    def __len__(self) -> int:
        return len(self.gaussians)


class GaussianMap:
    """2D voxel grid of GaussianSet cells plus a KD-tree over cell centers."""

    def __init__(self, voxel_size: float = 1.0):
        if voxel_size <= 0:
            raise InvalidInputError("voxel_size must be positive")
        self.voxel_size = float(voxel_size)
        self.cells: dict[VoxelKey, GaussianSet] = {}
        self._kdtree: KDTree2D | None = None
        self._kdtree_keys: list[VoxelKey] = []

    def __len__(self) -> int:
        return sum(len(c) for c in self.cells.values())

    @property
    def num_cells(self) -> int:
        return len(self.cells)

    def cell_center(self, key: VoxelKey) -> np.ndarray:
        return np.array([(key.ix + 0.5) * self.voxel_size,
                         (key.iy + 0.5) * self.voxel_size])

    def insert(self, gaussians: GaussianSet) -> None:
        """Append each Gaussian to the cell containing its (mu.x, mu.y)."""
        if len(gaussians) == 0:
            return
        keys = [voxel_key(float(x), float(y), self.voxel_size)
                for x, y in gaussians.mu[:, :2]]
        buckets: dict[VoxelKey, list[int]] = {}
        for i, k in enumerate(keys):
            buckets.setdefault(k, []).append(i)
        for k, idx in buckets.items():
            part = gaussians[idx]
            if k in self.cells:
                self.cells[k] = GaussianSet.concat([self.cells[k], part])
            else:
                self.cells[k] = part
        self._kdtree = None

    def _ensure_kdtree(self) -> None:
        if self._kdtree is not None:
            return
        self._kdtree_keys = sorted(self.cells.keys())
        if self._kdtree_keys:
            pts = np.array([[(k.ix + 0.5) * self.voxel_size,
                             (k.iy + 0.5) * self.voxel_size]
                            for k in self._kdtree_keys])
        else:
            pts = np.empty((0, 2))
        self._kdtree = KDTree2D(pts)

    def query_radius(self, center, radius: float) -> list[VoxelKey]:
        """Occupied cells whose center lies within `radius` of `center`, sorted."""
        if radius < 0:
            raise InvalidInputError("radius must be non-negative")
        self._ensure_kdtree()
        idx = self._kdtree.query_radius(center, radius)
        return [self._kdtree_keys[i] for i in idx]

    def extract_submap(self, pose: Pose, radius: float) -> Submap:
        """All Gaussians in cells within `radius` of the camera's (x, y) position.

        Deterministic order: cells sorted by key, Gaussians in insertion order.
        Raises EmptySubmapError when nothing is in range.
        """
        if radius <= 0:
            raise InvalidInputError("radius must be positive")
        center = pose.camera_center()[:2]
        keys = self.query_radius(center, radius)
        if not keys:
            raise EmptySubmapError(
                f"no occupied cells within {radius} of ({center[0]:.3f}, {center[1]:.3f})")
        parts = [self.cells[k] for k in keys]
        cell_index = np.repeat(np.arange(len(keys)), [len(p) for p in parts])
        return Submap(GaussianSet.concat(parts), keys, cell_index)

    def replace_cells(self, keys, gaussians: GaussianSet) -> None:
        """Drop the listed cells, then re-insert `gaussians` by their centers.

        Used by training write-back: moved Gaussians can land in other cells.
        """
        for k in keys:
            self.cells.pop(k, None)
        self._kdtree = None
        self.insert(gaussians)

    # --- serialization -------------------------------------------------
    # little-endian; per Gaussian 14 f32: mu*3, log-scale*3, quat*4 (w,x,y,z),
    # rgb*3, opacity-logit*1

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<H", FORMAT_VERSION))
            f.write(struct.pack("<d", self.voxel_size))
            keys = sorted(self.cells.keys())
            f.write(struct.pack("<Q", len(keys)))
            for k in keys:
                cell = self.cells[k]
                f.write(struct.pack("<Q", k.packed()))
                f.write(struct.pack("<Q", len(cell)))
                rec = np.hstack([
                    cell.mu, cell.log_scale, cell.quat, cell.color,
                    cell.opacity_logit[:, None],
                ]).astype("<f4")
                f.write(rec.tobytes())

    @staticmethod
    def load(path) -> "GaussianMap":
        with open(path, "rb") as f:
            data = f.read()
        return GaussianMap.loads(data)

    @staticmethod
    def loads(data: bytes) -> "GaussianMap":
        buf = io.BytesIO(data)

        def take(n: int, what: str) -> bytes:
            b = buf.read(n)
            if len(b) != n:
                raise TruncationError(f"file ends inside {what}", offset=buf.tell() - len(b))
            return b

        magic = take(len(MAGIC), "magic")
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}", offset=0)
        (version,) = struct.unpack("<H", take(2, "version"))
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported version {version}", offset=len(MAGIC))
        (voxel_size,) = struct.unpack("<d", take(8, "voxel size"))
        if not np.isfinite(voxel_size) or voxel_size <= 0:
            raise FormatError(f"invalid voxel size {voxel_size}", offset=len(MAGIC) + 2)
        (cell_count,) = struct.unpack("<Q", take(8, "cell count"))
        m = GaussianMap(voxel_size)
        for _ in range(cell_count):
            start = buf.tell()
            (packed,) = struct.unpack("<Q", take(8, "cell key"))
            key = VoxelKey.unpack(packed)
            if key in m.cells:
                raise FormatError(f"duplicate cell {key}", offset=start)
            (count,) = struct.unpack("<Q", take(8, "gaussian count"))
            if count == 0:
                raise FormatError(f"cell {key} declares zero gaussians", offset=start)
            if count > (len(data) - buf.tell()) // 4:
                raise TruncationError(
                    f"cell {key} declares {count} gaussians beyond end of file", offset=start)
            raw = take(count * 14 * 4, "gaussian records")
            rec = np.frombuffer(raw, dtype="<f4").reshape(count, 14).astype(np.float64)
            m.cells[key] = GaussianSet(rec[:, 0:3], rec[:, 3:6], rec[:, 6:10],
                                       rec[:, 10:13], rec[:, 13])
        trailing = buf.read(1)
        if trailing:
            raise FormatError("trailing bytes after last cell", offset=buf.tell() - 1)
        return m
