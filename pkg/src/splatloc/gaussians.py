"""The 3D Gaussian map primitive, as a scalar record and as a packed array set.

Scales are stored as log-scale and opacity as a logit so that gradient
updates can never produce non-positive scales or opacities outside (0,1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p / (1.0 - p))


@dataclass
class Gaussian3D:
    """One map primitive: center, per-axis scale, orientation, color, opacity."""

    mu: np.ndarray                 # (3,) center, scene units
    log_scale: np.ndarray          # (3,) log of (s_x, s_y, s_z)
    quat: np.ndarray               # (4,) unit quaternion (w, x, y, z)
    color: np.ndarray              # (3,) RGB in [0, 1]
    opacity_logit: float           # logit of opacity in (0, 1)

    @staticmethod
    def create(mu, scale, quat, color, opacity) -> "Gaussian3D":
        """Build from natural-unit scale and opacity values."""
        scale = np.asarray(scale, dtype=np.float64)
        if np.any(scale <= 0):
            raise InvalidInputError("scale components must be positive")
        opacity = float(opacity)
        if not 0.0 < opacity < 1.0:
            raise InvalidInputError("opacity must lie strictly inside (0, 1)")
        return Gaussian3D(
            mu=np.asarray(mu, dtype=np.float64).copy(),
            log_scale=np.log(scale),
            quat=np.asarray(quat, dtype=np.float64).copy(),
            color=np.asarray(color, dtype=np.float64).copy(),
            opacity_logit=float(logit(opacity)),
        )

    @property
    def scale(self) -> np.ndarray:
        return np.exp(self.log_scale)

    @property
    def opacity(self) -> float:
        return float(sigmoid(self.opacity_logit))


class GaussianSet:
    """Struct-of-arrays collection of Gaussian3D, the unit all bulk ops work on."""

    __slots__ = ("mu", "log_scale", "quat", "color", "opacity_logit")

    def __init__(self, mu, log_scale, quat, color, opacity_logit):
        self.mu = np.ascontiguousarray(mu, dtype=np.float64).reshape(-1, 3)
        self.log_scale = np.ascontiguousarray(log_scale, dtype=np.float64).reshape(-1, 3)
        self.quat = np.ascontiguousarray(quat, dtype=np.float64).reshape(-1, 4)
        self.color = np.ascontiguousarray(color, dtype=np.float64).reshape(-1, 3)
        self.opacity_logit = np.ascontiguousarray(opacity_logit, dtype=np.float64).reshape(-1)
        n = len(self.mu)
        for name in ("log_scale", "quat", "color", "opacity_logit"):
            if len(getattr(self, name)) != n:
                raise InvalidInputError(f"field {name} has {len(getattr(self, name))} rows, expected {n}")

    @staticmethod
    def empty() -> "GaussianSet":
        return GaussianSet(np.empty((0, 3)), np.empty((0, 3)), np.empty((0, 4)),
                           np.empty((0, 3)), np.empty(0))

    @staticmethod
    def from_gaussians(items) -> "GaussianSet":
        items = list(items)
        if not items:
            return GaussianSet.empty()
        return GaussianSet(
            np.stack([g.mu for g in items]),
            np.stack([g.log_scale for g in items]),
            np.stack([g.quat for g in items]),
            np.stack([g.color for g in items]),
            np.array([g.opacity_logit for g in items]),
        )

    @staticmethod
    def concat(sets) -> "GaussianSet":
        sets = [s for s in sets if len(s)]
        if not sets:
            return GaussianSet.empty()
        return GaussianSet(
            np.concatenate([s.mu for s in sets]),
            np.concatenate([s.log_scale for s in sets]),
            np.concatenate([s.quat for s in sets]),
            np.concatenate([s.color for s in sets]),
            np.concatenate([s.opacity_logit for s in sets]),
        )

    def __len__(self) -> int:
        return self.mu.shape[0]

    def __getitem__(self, idx) -> "GaussianSet":
        if np.isscalar(idx) or isinstance(idx, (int, np.integer)):
            idx = [int(idx)]
        return GaussianSet(self.mu[idx], self.log_scale[idx], self.quat[idx],
                           self.color[idx], self.opacity_logit[idx])

    def gaussian(self, i: int) -> Gaussian3D:
        return Gaussian3D(self.mu[i].copy(), self.log_scale[i].copy(),
                          self.quat[i].copy(), self.color[i].copy(),
                          float(self.opacity_logit[i]))

    def copy(self) -> "GaussianSet":
        return GaussianSet(self.mu.copy(), self.log_scale.copy(), self.quat.copy(),
                           self.color.copy(), self.opacity_logit.copy())

    @property
    def scale(self) -> np.ndarray:
        return np.exp(self.log_scale)

    @property
    def opacity(self) -> np.ndarray:
        return sigmoid(self.opacity_logit)

    def allclose(self, other: "GaussianSet", atol=0.0, rtol=0.0) -> bool:
        if len(self) != len(other):
            return False
        return all(
            np.allclose(getattr(self, f), getattr(other, f), atol=atol, rtol=rtol)
            for f in ("mu", "log_scale", "quat", "color", "opacity_logit")
        )
