"""Map optimization: photometric + depth-reprojection loss, gradient descent
with per-parameter-group learning rates, and adaptive densify/prune.

The photometric term compares renders against ground-truth frames; the
reprojection term warps each ground-truth image into the next frame using
the rendered (alpha-normalized) depth and compares there, which couples the
loss to geometry. Optimization is plain first-order descent; training a
submap is single-writer and deterministic given the config seed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, EmptySubmapError, TrainingError
from .gaussians import GaussianSet, sigmoid
from .geometry import Intrinsics, Pose
from .losses import rgb_loss_grad
from .rasterizer import GaussianGradients, compute_cov3d, render, render_backward
from .voxelmap import GaussianMap
from .warp import relative_transform, warp_image, warp_image_grad_depth

MIN_ALPHA = 0.5  # depth counts as observed where accumulated opacity exceeds this


@dataclass
class TrainConfig:
    lam: float = 0.2                  # D-SSIM share inside the rgb loss
    w_photo: float = 1.0
    w_reproj: float = 0.1
    lr_mu: float = 1.6e-4             # scaled by scene extent at use
    lr_log_scale: float = 5e-3
    lr_quat: float = 1e-3
    lr_color: float = 2.5e-3
    lr_opacity: float = 5e-2
    iterations: int = 500
    densify_interval: int = 100
    densify_grad_threshold: float = 2e-4
    densify_size_threshold: float = 0.01   # fraction of scene extent
    prune_opacity_threshold: float = 0.005
    densify_until_fraction: float = 0.5
    split_scale_shrink: float = 1.6
    submap_radius_train: float = 120.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError("lam must lie in [0, 1]")
        if self.w_photo < 0 or self.w_reproj < 0:
            raise ConfigError("loss weights must be non-negative")
        for name in ("lr_mu", "lr_log_scale", "lr_quat", "lr_color", "lr_opacity"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")


@dataclass
class TrainReport:
    total: list = field(default_factory=list)
    photo: list = field(default_factory=list)
    reproj: list = field(default_factory=list)
    gaussian_count: list = field(default_factory=list)
    events: list = field(default_factory=list)          # (iteration, kind, detail)
    wall_clock: dict = field(default_factory=dict)      # phase -> seconds

    def to_csv(self) -> str:
        lines = ["iteration,total,photo,reproj,gaussian_count"]
        for i, (t, p, r, n) in enumerate(zip(self.total, self.photo, self.reproj,
                                             self.gaussian_count)):
            lines.append(f"{i},{t:.17g},{p:.17g},{r:.17g},{n}")
        return "\n".join(lines) + "\n"


def scene_extent(gaussians: GaussianSet) -> float:
    """Diagonal of the bounding box of gaussian centers; floor of 1."""
    if len(gaussians) == 0:
        return 1.0
    span = gaussians.mu.max(axis=0) - gaussians.mu.min(axis=0)
    return max(float(np.linalg.norm(span)), 1.0)


def total_loss(gaussians: GaussianSet, frames, K: Intrinsics, cfg: TrainConfig,
               want_grads: bool = True):
    """Weighted photometric + reprojection loss over the given frames.

    frames: sequence of (image HxWx3 in [0,1], Pose) in temporal order;
    consecutive entries form the reprojection pairs. Returns
    (losses dict, GaussianGradients or None).
    """
    frames = list(frames)
    if not frames:
        raise ConfigError("total_loss needs at least one frame")
    if cfg.w_reproj > 0 and len(frames) < 2:
        raise ConfigError("reprojection term needs at least two consecutive frames")

    cov3d = compute_cov3d(gaussians)
    rendered = [render(gaussians, pose, K, cov3d=cov3d) for _, pose in frames]

    photo = 0.0
    grad_imgs = [None] * len(frames)   # (grad_color, grad_depth, grad_alpha)
    for i, ((gt, _), frame) in enumerate(zip(frames, rendered)):
        val, g = rgb_loss_grad(frame.color, gt, cfg.lam, want_grad=want_grads)
        photo += val
        if want_grads:
            grad_imgs[i] = [g * (cfg.w_photo / len(frames)),
                            np.zeros(frame.depth.shape),
                            np.zeros(frame.depth.shape)]
    photo /= len(frames)

    reproj = 0.0
    n_pairs = len(frames) - 1
    if cfg.w_reproj > 0:
        for i in range(n_pairs):
            gt_src, pose_src = frames[i]
            gt_dst, pose_dst = frames[i + 1]
            depth_n, depth_ok = rendered[i].metric_depth(MIN_ALPHA)
            T = relative_transform(pose_src, pose_dst)
            warped, mask = warp_image(gt_src, depth_n, T, K, valid=depth_ok)
            val, g_warp = rgb_loss_grad(warped, gt_dst, cfg.lam, mask=mask,
                                        want_grad=want_grads)
            reproj += val
            if not want_grads:
                continue
            g_depth_n = warp_image_grad_depth(gt_src, depth_n, T, K, g_warp,
                                              valid=depth_ok)
            g_depth_n *= cfg.w_reproj / n_pairs
            # chain through depth_n = depth / alpha on observed pixels
            alpha = rendered[i].alpha
            gd = np.zeros_like(g_depth_n)
            ga = np.zeros_like(g_depth_n)
            np.divide(g_depth_n, alpha, out=gd, where=depth_ok)
            np.divide(-g_depth_n * depth_n, alpha, out=ga, where=depth_ok)
            grad_imgs[i][1] += gd
            grad_imgs[i][2] += ga
        reproj /= n_pairs

    losses = {"total": cfg.w_photo * photo + cfg.w_reproj * reproj,
              "photo": photo, "reproj": reproj}
    if not want_grads:
        return losses, None
    grads = GaussianGradients.zeros(len(gaussians))
    for (gc, gd, ga), (_, pose) in zip(grad_imgs, frames):
        grads.add_(render_backward(gaussians, pose, K, gc, gd, grad_alpha=ga,
                                   cov3d=cov3d))
    return losses, grads


def densify_and_prune(gaussians: GaussianSet, grad2d_mean: np.ndarray,
                      mu_step: np.ndarray, cfg: TrainConfig, extent: float,
                      rng: np.random.Generator):
    """Clone small / split large high-gradient gaussians, drop transparent ones.

    grad2d_mean: per-gaussian mean 2D positional gradient norm since the last
    call. mu_step: displacement applied to clones (one descent step of mu).
    Returns (new set, stats dict).
    """
    n = len(gaussians)
    if n == 0:
        return gaussians, {"cloned": 0, "split": 0, "pruned": 0}
    hot = grad2d_mean >= cfg.densify_grad_threshold
    size = np.exp(gaussians.log_scale).max(axis=1)
    big = size > cfg.densify_size_threshold * extent
    clone_idx = np.nonzero(hot & ~big)[0]
    split_idx = np.nonzero(hot & big)[0]

    parts = [gaussians]
    if clone_idx.size:
        clones = gaussians[clone_idx].copy()
        clones.mu += mu_step[clone_idx]
        parts.append(clones)
    if split_idx.size:
        parents = gaussians[split_idx]
        children = []
        cov = compute_cov3d(parents)
        chol = np.linalg.cholesky(cov + 1e-12 * np.eye(3))
        for _ in range(2):
            child = parents.copy()
            offsets = (chol @ rng.standard_normal((len(parents), 3, 1)))[:, :, 0]
            child.mu = parents.mu + offsets
            child.log_scale = parents.log_scale - np.log(cfg.split_scale_shrink)
            children.append(child)
        parts.append(GaussianSet.concat(children))

    merged = GaussianSet.concat(parts)
    keep = np.ones(len(merged), dtype=bool)
    keep[split_idx] = False  # parents replaced by their two children
    keep &= sigmoid(merged.opacity_logit) >= cfg.prune_opacity_threshold
    out = merged[np.nonzero(keep)[0]]
    stats = {"cloned": int(clone_idx.size), "split": int(split_idx.size),
             "pruned": int((~keep).sum() - split_idx.size)}
    return out, stats


def _sgd_step(gs: GaussianSet, grads: GaussianGradients, cfg: TrainConfig,
              extent: float) -> None:
    gs.mu -= cfg.lr_mu * extent * grads.mu
    gs.log_scale -= cfg.lr_log_scale * grads.log_scale
    gs.quat -= cfg.lr_quat * grads.quat
    gs.color -= cfg.lr_color * grads.color
    gs.opacity_logit -= cfg.lr_opacity * grads.opacity_logit
    np.clip(gs.color, 0.0, 1.0, out=gs.color)


def train_submap(gmap: GaussianMap, frames, K: Intrinsics, cfg: TrainConfig,
                 anchor=None):
    """Optimize the submap covering `frames` and write it back into the map.

    anchor: (x, y) submap center; defaults to the mean camera position of the
    frames. Returns (gmap, TrainReport); the map is updated in place.
    """
    frames = list(frames)
    if not frames:
        raise TrainingError("no frames to train on")
    centers = np.array([pose.camera_center() for _, pose in frames])
    if anchor is None:
        anchor = centers[:, :2].mean(axis=0)
    anchor_pose = _pose_at(np.append(np.asarray(anchor, dtype=np.float64), 0.0))
    try:
        submap = gmap.extract_submap(anchor_pose, cfg.submap_radius_train)
    except EmptySubmapError as e:
        raise TrainingError(f"training submap is empty: {e}") from e

    report = TrainReport()
    if cfg.iterations == 0:
        return gmap, report

    t_start = time.perf_counter()
    work = submap.gaussians.copy()
    extent = scene_extent(work)
    rng = np.random.default_rng(cfg.seed)
    grad2d_accum = np.zeros(len(work))
    mu_accum = np.zeros((len(work), 3))
    accum_iters = 0
    t_loss = 0.0

    for it in range(cfg.iterations):
        t0 = time.perf_counter()
        losses, grads = total_loss(work, frames, K, cfg)
        t_loss += time.perf_counter() - t0
        if not np.isfinite(losses["total"]):
            raise TrainingError(f"non-finite loss at iteration {it}")
        _sgd_step(work, grads, cfg, extent)
        grad2d_accum += np.linalg.norm(grads.center2d, axis=1)
        mu_accum += grads.mu
        accum_iters += 1

        report.total.append(losses["total"])
        report.photo.append(losses["photo"])
        report.reproj.append(losses["reproj"])
        report.gaussian_count.append(len(work))

        due = (it + 1) % cfg.densify_interval == 0
        within = (it + 1) <= cfg.densify_until_fraction * cfg.iterations
        if due and within and (it + 1) < cfg.iterations:
            mu_step = -cfg.lr_mu * extent * (mu_accum / accum_iters)
            work, stats = densify_and_prune(work, grad2d_accum / accum_iters,
                                            mu_step, cfg, extent, rng)
            report.events.append((it + 1, "densify_prune", stats))
            grad2d_accum = np.zeros(len(work))
            mu_accum = np.zeros((len(work), 3))
            accum_iters = 0

    gmap.replace_cells(submap.keys, work)
    report.wall_clock = {"total": time.perf_counter() - t_start, "loss": t_loss}
    return gmap, report


def _pose_at(position) -> Pose:
    """Identity-orientation world-to-camera pose whose camera sits at `position`."""
    return Pose(np.array([1.0, 0, 0, 0]), -np.asarray(position, dtype=np.float64))
