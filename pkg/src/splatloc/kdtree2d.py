"""Flat (array-based) 2D KD-tree with exact radius queries.

Built once over a static point set and queried read-only afterwards, which
matches how the voxel map uses it: rebuild from scratch whenever the set of
occupied cells changes, share the tree across query threads.
"""

from __future__ import annotations

import numpy as np


class KDTree2D:
    """Median-split KD-tree over an (N,2) point array."""

    def __init__(self, points: np.ndarray):
        pts = np.ascontiguousarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError(f"expected (N,2) points, got shape {pts.shape}")
        self.points = pts
        n = pts.shape[0]
        # node i covers self._order[start:end); leaf when end - start <= LEAF
        self._order = np.arange(n, dtype=np.int64)
        self._split_val = np.empty(n, dtype=np.float64)
        self._split_dim = np.empty(n, dtype=np.int8)
        self._nodes: list[tuple[int, int, int, int]] = []  # (start, end, left, right)
        if n:
            self._build(0, n, 0)

    _LEAF = 16

    def _build(self, start: int, end: int, depth: int) -> int:
        node = len(self._nodes)
        self._nodes.append((start, end, -1, -1))
        if end - start <= self._LEAF:
            return node
        axis = depth % 2
        seg = self._order[start:end]
        vals = self.points[seg, axis]
        mid = (end - start) // 2
        part = np.argpartition(vals, mid)
        self._order[start:end] = seg[part]
        split = self.points[self._order[start + mid], axis]
        left = self._build(start, start + mid, depth + 1)
        right = self._build(start + mid, end, depth + 1)
        self._split_val[node] = split
        self._split_dim[node] = axis
        self._nodes[node] = (start, end, left, right)
        return node

    def query_radius(self, center, radius: float) -> np.ndarray:
        """Indices of points with euclidean distance <= radius, sorted ascending."""
        if self.points.shape[0] == 0 or radius < 0:
            return np.empty(0, dtype=np.int64)
        cx, cy = float(center[0]), float(center[1])
        r2 = float(radius) * float(radius)
        out: list[np.ndarray] = []
        stack = [0]
        pts = self.points
        order = self._order
        while stack:
            node = stack.pop()
            start, end, left, right = self._nodes[node]
            if left < 0:
                idx = order[start:end]
                d2 = (pts[idx, 0] - cx) ** 2 + (pts[idx, 1] - cy) ** 2
                hit = idx[d2 <= r2]
                if hit.size:
                    out.append(hit)
                continue
            split = self._split_val[node]
            c = cx if self._split_dim[node] == 0 else cy
            # points with value < split live left; == split may be on either side
            # of the partition, so recurse on both when the ball straddles it
            if c - radius <= split:
                stack.append(left)
            if c + radius >= split:
                stack.append(right)
        if not out:
            return np.empty(0, dtype=np.int64)
        res = np.concatenate(out)
        res.sort()
        return res
