"""Synthetic benchmark scenes with exact ground truth.

Builds a corridor world (textured ground, two walls, box obstacles) out of
Gaussians, drives a camera along it, renders ground-truth images and depths
with the naive reference renderer, and emits a jittered, subsampled point
cloud as the training initialization. Everything is drawn from one seeded
generator, so a scene is a pure function of (seed, spec).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataio import ColoredPointCloud
from .errors import InvalidInputError
from .gaussians import GaussianSet, logit
from .geometry import Intrinsics, Pose, pose_compose, pose_inverse, quat_from_axis_angle, rotation_to_quat
from .rasterizer import render_reference

# camera looks along world +y, world +z is up, image v grows downward
_CAM_AXES = np.array([[1.0, 0.0, 0.0],
                      [0.0, 0.0, -1.0],
                      [0.0, 1.0, 0.0]])


@dataclass(frozen=True)
class SceneSpec:
    n_gaussians: int = 600        # approximate; structures are filled to size
    length: float = 40.0          # corridor extent along +y
    width: float = 15.0           # wall-to-wall extent along x
    clearance: float = 2.5        # content-free strip around the trajectory
    wall_height: float = 5.0
    n_boxes: int = 6
    n_frames: int = 12
    image_width: int = 160
    image_height: int = 120
    focal: float = 140.0
    camera_height: float = 1.6
    camera_pitch: float = 0.12        # radians downward, brings ground into view
    near: float = 1.0                 # splats closer than this are culled
    init_noise_sigma: float = 0.5     # position jitter of the init cloud
    init_keep_fraction: float = 0.5   # subsampling of the init cloud

    def intrinsics(self) -> Intrinsics:
        return Intrinsics(fx=self.focal, fy=self.focal,
                          cx=(self.image_width - 1) / 2,
                          cy=(self.image_height - 1) / 2,
                          width=self.image_width, height=self.image_height,
                          near=self.near)


@dataclass
class SyntheticScene:
    spec: SceneSpec
    gaussians: GaussianSet            # ground truth map content
    trajectory: list                  # world-to-camera Poses with timestamps
    images: list                      # ground-truth renders, HxWx3 in [0,1]
    depths: list                      # metric depth (alpha-normalized), 0 where unseen
    init_cloud: ColoredPointCloud     # jittered subsampled training init
    K: Intrinsics = None

    @property
    def extent(self) -> float:
        span = self.gaussians.mu.max(axis=0) - self.gaussians.mu.min(axis=0)
        return float(np.linalg.norm(span))


def camera_pose(position, yaw: float = 0.0, pitch: float = 0.0,
                timestamp: float | None = None) -> Pose:
    """World-to-camera pose at `position` looking along +y, rotated by yaw
    (about world z, positive turns left) and pitch (about camera x)."""
    cy, sy = np.cos(yaw), np.sin(yaw)
    Rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    cp, sp = np.cos(pitch), np.sin(pitch)
    Rx = np.array([[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]])
    R_wc = Rx @ _CAM_AXES @ Rz.T
    t = -R_wc @ np.asarray(position, dtype=np.float64)
    return Pose(rotation_to_quat(R_wc), t, timestamp)


def pose_yaw(pose: Pose) -> float:
    """Yaw of a world-to-camera pose (rotation of the view axis about world z)."""
    fwd = pose.rotation.T @ np.array([0.0, 0.0, 1.0])  # camera forward in world
    return float(np.arctan2(-fwd[0], fwd[1]))


def _surface(rng, n, lo, hi, scale_rng, flat_axis=None):
    pts = rng.uniform(lo, hi, (n, 3))
    scales = rng.uniform(*scale_rng, (n, 3))
    if flat_axis is not None:
        scales[:, flat_axis] *= 0.15
    return pts, scales


def synth_scene(seed: int, spec: SceneSpec = SceneSpec()) -> SyntheticScene:
    if spec.n_gaussians < 10 or spec.n_frames < 1:
        raise InvalidInputError("scene spec too small")
    rng = np.random.default_rng(seed)
    L, W, H = spec.length, spec.width, spec.wall_height
    clear = spec.clearance

    n_ground = int(spec.n_gaussians * 0.4)
    n_wall = int(spec.n_gaussians * 0.22)
    n_box = spec.n_gaussians - 2 * (n_ground // 2) - 2 * n_wall

    # two textured ground strips flanking a content-free camera corridor
    parts = []
    for side in (-1, 1):
        x0, x1 = sorted((side * clear, side * W / 2))
        pts, sc = _surface(rng, n_ground // 2, [x0, 0.0, -0.05], [x1, L, 0.05],
                           (0.25, 0.5), flat_axis=2)
        parts.append((pts, sc))
    for x in (-W / 2, W / 2):
        pts, sc = _surface(rng, n_wall, [x - 0.05, 0.0, 0.0], [x + 0.05, L, H],
                           (0.25, 0.5), flat_axis=0)
        parts.append((pts, sc))
    if spec.n_boxes > 0 and n_box > 0:
        per = n_box // spec.n_boxes
        for b in range(spec.n_boxes):
            side = -1 if b % 2 else 1
            cx = side * rng.uniform(clear + 1.0, W / 2 - 1.5)
            cy = rng.uniform(L * 0.15, L * 0.95)
            size = rng.uniform(0.6, 1.4)
            cnt = per if b < spec.n_boxes - 1 else n_box - per * (spec.n_boxes - 1)
            pts = rng.uniform([cx - size, cy - size, 0.0],
                              [cx + size, cy + size, size * 2], (cnt, 3))
            sc = rng.uniform(0.2, 0.4, (cnt, 3))
            parts.append((pts, sc))

    mu = np.concatenate([p for p, _ in parts])
    scales = np.concatenate([s for _, s in parts])
    n = len(mu)
    quat = rng.standard_normal((n, 4))
    quat /= np.linalg.norm(quat, axis=1, keepdims=True)
    # mild orientation: blend random quats toward identity to avoid slivers
    quat = 0.3 * quat + 0.7 * np.tile([1.0, 0, 0, 0], (n, 1))
    quat /= np.linalg.norm(quat, axis=1, keepdims=True)
    colors = rng.uniform(0.05, 0.95, (n, 3))
    opac = logit(rng.uniform(0.55, 0.9, n))
    gaussians = GaussianSet(mu, np.log(scales), quat, colors, opac)

    K = spec.intrinsics()
    trajectory = []
    for i in range(spec.n_frames):
        s = i / max(spec.n_frames - 1, 1)
        y = 1.0 + s * (L * 0.6)
        x = 0.7 * np.sin(s * 2.5)
        yaw = 0.1 * np.sin(s * 3.0)
        trajectory.append(camera_pose([x, y, spec.camera_height], yaw=yaw,
                                      pitch=spec.camera_pitch, timestamp=float(i)))

    images, depths = [], []
    for pose in trajectory:
        frame = render_reference(gaussians, pose, K)
        images.append(frame.color)
        d, _ = frame.metric_depth()
        depths.append(d)

    keep = rng.random(n) < spec.init_keep_fraction
    if not keep.any():
        keep[0] = True
    noise = spec.init_noise_sigma * rng.standard_normal((int(keep.sum()), 3))
    init_cloud = ColoredPointCloud(mu[keep] + noise, colors[keep])

    return SyntheticScene(spec=spec, gaussians=gaussians, trajectory=trajectory,
                          images=images, depths=depths, init_cloud=init_cloud, K=K)
