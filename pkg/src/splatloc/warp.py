"""Depth-based forward image warping between two camera frames.

Each source pixel with valid depth is unprojected, moved by the relative
transform, reprojected, and scattered onto its four target neighbors with
bilinear weights. A z-buffer keeps only samples on the nearest arriving
surface (within a small relative depth window); target pixels that received
no sample are masked out.
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from .errors import InvalidInputError
from .geometry import Intrinsics, Pose

# Samples within this relative window of the winning depth blend together.
# Wide enough that neighbors on one sloped surface blend (restoring a useful
# depth gradient), narrow enough that occlusion-scale gaps stay separated.
Z_TOL = 0.02


def _prep(src, depth, valid):
    src = np.ascontiguousarray(src, dtype=np.float64)
    depth = np.ascontiguousarray(depth, dtype=np.float64)
    if src.ndim != 3 or src.shape[2] != 3:
        raise InvalidInputError(f"src must be HxWx3, got {src.shape}")
    if depth.shape != src.shape[:2]:
        raise InvalidInputError(f"depth shape {depth.shape} does not match image {src.shape[:2]}")
    if valid is None:
        valid = depth > 0
    valid = np.ascontiguousarray(valid, dtype=bool)
    if valid.shape != depth.shape:
        raise InvalidInputError("validity mask shape mismatch")
    return src, depth, valid & (depth > 0)


def warp_image(src, depth, T: Pose, K: Intrinsics, valid=None):
    """Warp `src` (seen at the source pose, with metric `depth`) into the
    frame reached by the camera-space transform `T` (source -> target).

    Returns (warped HxWx3, mask HxW bool). Pixels outside the mask received
    no forward sample and must be excluded by loss consumers.
    """
    src, depth, valid = _prep(src, depth, valid)
    H, W = depth.shape
    zbuf = np.full((H, W), np.inf)
    num = np.zeros((H, W, 3))
    den = np.zeros((H, W))
    _kernels.warp_forward(src, depth, valid, T.rotation, T.translation,
                          K.fx, K.fy, K.cx, K.cy, K.near, Z_TOL, zbuf, num, den)
    mask = den > 1e-9
    warped = np.zeros_like(num)
    np.divide(num, den[:, :, None], out=warped, where=mask[:, :, None])
    return warped, mask


def warp_image_grad_depth(src, depth, T: Pose, K: Intrinsics, grad_warped,
                          valid=None) -> np.ndarray:
    """Gradient of sum(grad_warped * warped) with respect to the source depth.

    Z-buffer winners and the validity mask are treated as fixed; the bilinear
    footprint and the projection are differentiated.
    """
    src, depth, valid = _prep(src, depth, valid)
    grad_warped = np.ascontiguousarray(grad_warped, dtype=np.float64)
    if grad_warped.shape != src.shape:
        raise InvalidInputError("grad_warped shape must match src")
    H, W = depth.shape
    zbuf = np.full((H, W), np.inf)
    num = np.zeros((H, W, 3))
    den = np.zeros((H, W))
    _kernels.warp_forward(src, depth, valid, T.rotation, T.translation,
                          K.fx, K.fy, K.cx, K.cy, K.near, Z_TOL, zbuf, num, den)
    warped = np.zeros_like(num)
    np.divide(num, den[:, :, None], out=warped, where=(den > 1e-9)[:, :, None])
    grad_depth = np.zeros((H, W))
    _kernels.warp_backward_depth(src, depth, valid, T.rotation, T.translation,
                                 K.fx, K.fy, K.cx, K.cy, K.near, Z_TOL,
                                 zbuf, den, warped, grad_warped, grad_depth)
    return grad_depth


def relative_transform(pose_from: Pose, pose_to: Pose) -> Pose:
    """Camera-space transform taking points in `pose_from`'s frame to
    `pose_to`'s frame (both are world-to-camera poses)."""
    from .geometry import pose_compose, pose_inverse

    return pose_compose(pose_to, pose_inverse(pose_from))
