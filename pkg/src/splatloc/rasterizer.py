"""Differentiable CPU splat rasterizer.

Forward: project each 3D Gaussian to a 2D elliptical splat (camera rotation
plus projection Jacobian applied to the 3D covariance), depth-sort, and
alpha-composite color/depth front to back. `render` composites over 16x16
tiles; `render_reference` is the naive per-pixel oracle the tiled path must
match bit for bit. Backward: analytic gradients of any linear functional of
the rendered color/depth/alpha images with respect to every Gaussian
parameter.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import InvalidInputError
from .gaussians import GaussianSet, sigmoid
from .geometry import Intrinsics, Pose

TILE = 16


@dataclass(frozen=True)
class RasterSettings:
    """Rendering knobs. The defaults define the semantics the tests pin."""

    eps2d: float = 0.3            # low-pass regularizer added to cov2d (px^2)
    ellipse_sigma: float = 3.0    # splat support radius in standard deviations
    ewa_normalization: bool = False  # scale footprint by |det J2x2| (EWA convention)


DEFAULT_SETTINGS = RasterSettings()


@dataclass
class Splat2D:
    center2d: np.ndarray   # (2,) pixels
    cov2d: np.ndarray      # (2,2) regularized image-space covariance
    depth: float
    color: np.ndarray      # (3,)
    opacity: float
    source_index: int


@dataclass
class RenderedFrame:
    """color/depth/alpha images plus the final per-pixel transmittance.

    alpha is the accumulated weight sum(q*T); transmittance is prod(1-q), so
    alpha + transmittance == 1 up to rounding (the compositing identity).
    depth is the raw composite sum(z*q*T); divide by alpha (where alpha is
    high enough) to get metric depth.
    """

    color: np.ndarray
    depth: np.ndarray
    alpha: np.ndarray
    transmittance: np.ndarray

    def metric_depth(self, min_alpha: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
        """(alpha-normalized depth, validity mask)."""
        valid = self.alpha > min_alpha
        out = np.zeros_like(self.depth)
        np.divide(self.depth, self.alpha, out=out, where=valid)
        return out, valid


@dataclass
class GaussianGradients:
    """Per-Gaussian parameter gradients plus the raw 2D positional gradient
    (the densification criterion)."""

    mu: np.ndarray
    log_scale: np.ndarray
    quat: np.ndarray
    color: np.ndarray
    opacity_logit: np.ndarray
    center2d: np.ndarray

    @staticmethod
    def zeros(n: int) -> "GaussianGradients":
        return GaussianGradients(np.zeros((n, 3)), np.zeros((n, 3)), np.zeros((n, 4)),
                                 np.zeros((n, 3)), np.zeros(n), np.zeros((n, 2)))

    def add_(self, other: "GaussianGradients", scale: float = 1.0) -> None:
        for f in ("mu", "log_scale", "quat", "color", "opacity_logit", "center2d"):
            getattr(self, f).__iadd__(scale * getattr(other, f))


def compute_cov3d(gaussians: GaussianSet) -> np.ndarray:
    """Per-Gaussian 3D covariance R S S^T R^T from quaternion and log-scale."""
    q = gaussians.quat
    norm = np.linalg.norm(q, axis=1, keepdims=True)
    if np.any(norm == 0):
        raise InvalidInputError("zero-norm quaternion in gaussian set")
    w, x, y, z = (q / norm).T
    R = np.empty((len(gaussians), 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    s = np.exp(gaussians.log_scale)
    N = R * s[:, None, :]
    return N @ np.transpose(N, (0, 2, 1))


class _Projected:
    """Depth-sorted packed splat arrays plus intermediates for backward."""

    __slots__ = ("n_source", "source_index", "centers", "conics", "cov2d", "opacs",
                 "opacities", "norms", "depths", "colors", "bboxes", "p_cam",
                 "n_singular", "width", "height")

    def __len__(self):
        return len(self.source_index)


def _project_set(gaussians: GaussianSet, pose: Pose, K: Intrinsics,
                 settings: RasterSettings, cov3d: np.ndarray | None) -> _Projected:
    out = _Projected()
    out.n_source = len(gaussians)
    out.width, out.height = K.width, K.height
    out.n_singular = 0
    Rcam = pose.rotation
    p_cam_all = gaussians.mu @ Rcam.T + pose.translation
    near_ok = p_cam_all[:, 2] > K.near
    idx = np.nonzero(near_ok)[0]

    def empty():
        out.source_index = np.empty(0, dtype=np.int64)
        out.centers = np.empty((0, 2))
        out.conics = np.empty((0, 3))
        out.cov2d = np.empty((0, 3))
        out.opacs = np.empty(0)
        out.opacities = np.empty(0)
        out.norms = np.empty(0)
        out.depths = np.empty(0)
        out.colors = np.empty((0, 3))
        out.bboxes = np.empty((0, 4), dtype=np.int64)
        out.p_cam = np.empty((0, 3))
        return out

    if idx.size == 0:
        return empty()
    if cov3d is None:
        cov3d = compute_cov3d(gaussians)

    p_cam = p_cam_all[idx]
    x, y, z = p_cam.T
    iz = 1.0 / z
    iz2 = iz * iz
    J = np.zeros((idx.size, 2, 3))
    J[:, 0, 0] = K.fx * iz
    J[:, 0, 2] = -K.fx * x * iz2
    J[:, 1, 1] = K.fy * iz
    J[:, 1, 2] = -K.fy * y * iz2
    Mp = J @ Rcam
    cov2 = (Mp @ cov3d[idx]) @ np.transpose(Mp, (0, 2, 1))
    a = cov2[:, 0, 0] + settings.eps2d
    b = 0.5 * (cov2[:, 0, 1] + cov2[:, 1, 0])
    c = cov2[:, 1, 1] + settings.eps2d
    det = a * c - b * b
    ok = np.isfinite(det) & (det > 0) & np.isfinite(a) & np.isfinite(c)
    out.n_singular = int(np.count_nonzero(~ok))

    o = sigmoid(gaussians.opacity_logit[idx])
    if settings.ewa_normalization:
        norms = K.fx * K.fy * iz2  # |det of the 2x2 Jacobian block|
    else:
        norms = np.ones(idx.size)
    o_eff = o * norms

    lam = 0.5 * (a + c) + np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))
    sq_lam = np.sqrt(np.maximum(lam, 0.0))
    # support region {q >= cutoff} is the ellipse m <= 2 ln(o_eff/cutoff);
    # its bbox drives tile binning so binning can never drop a contribution
    visible = ok & (o_eff > _kernels.W_CUTOFF)
    with np.errstate(invalid="ignore", divide="ignore"):
        m_cut = 2.0 * np.log(np.maximum(o_eff, _kernels.W_CUTOFF) / _kernels.W_CUTOFF)
        r_support = np.sqrt(m_cut) * sq_lam
        r_cull = settings.ellipse_sigma * sq_lam
    cx2 = K.fx * x * iz + K.cx
    cy2 = K.fy * y * iz + K.cy
    with np.errstate(invalid="ignore"):
        x0 = np.floor(cx2 - r_support)
        x1 = np.ceil(cx2 + r_support)
        y0 = np.floor(cy2 - r_support)
        y1 = np.ceil(cy2 + r_support)
        # spec culling rule: drop splats whose 3-sigma ellipse misses the image
        in_rect = ((cx2 + r_cull >= 0) & (cx2 - r_cull <= K.width - 1)
                   & (cy2 + r_cull >= 0) & (cy2 - r_cull <= K.height - 1))
    on_screen = (visible & in_rect
                 & (x1 >= 0) & (x0 <= K.width - 1) & (y1 >= 0) & (y0 <= K.height - 1))
    sel = np.nonzero(on_screen)[0]
    if sel.size == 0:
        return empty()

    # ascending depth; ties keep source order (stable sort over source-ordered rows)
    order = sel[np.argsort(z[sel], kind="stable")]
    out.source_index = idx[order]
    out.centers = np.column_stack([cx2[order], cy2[order]])
    d = det[order]
    out.cov2d = np.column_stack([a[order], b[order], c[order]])
    out.conics = np.column_stack([c[order] / d, -b[order] / d, a[order] / d])
    out.depths = z[order]
    out.colors = np.ascontiguousarray(gaussians.color[idx[order]])
    out.p_cam = p_cam[order]
    out.opacities = o[order]
    out.norms = norms[order]
    out.opacs = o_eff[order]
    out.bboxes = np.column_stack([
        np.clip(x0[order], 0, K.width - 1),
        np.clip(x1[order], 0, K.width - 1),
        np.clip(y0[order], 0, K.height - 1),
        np.clip(y1[order], 0, K.height - 1),
    ]).astype(np.int64)
    return out


def project_gaussian(g, pose: Pose, K: Intrinsics,
                     settings: RasterSettings = DEFAULT_SETTINGS) -> Splat2D | None:
    """Project a single Gaussian; None when culled (behind near plane or
    entirely off screen)."""
    gs = g if isinstance(g, GaussianSet) else GaussianSet.from_gaussians([g])
    if len(gs) != 1:
        raise InvalidInputError("project_gaussian expects exactly one gaussian")
    proj = _project_set(gs, pose, K, settings, None)
    if len(proj) == 0:
        return None
    a, b, c = proj.cov2d[0]
    return Splat2D(
        center2d=proj.centers[0],
        cov2d=np.array([[a, b], [b, c]]),
        depth=float(proj.depths[0]),
        color=proj.colors[0],
        opacity=float(proj.opacs[0]),
        source_index=int(proj.source_index[0]),
    )


def _tile_bins(proj: _Projected, width: int, height: int):
    tiles_x = (width + TILE - 1) // TILE
    tiles_y = (height + TILE - 1) // TILE
    n_tiles = tiles_x * tiles_y
    if len(proj) == 0:
        return np.zeros(n_tiles + 1, dtype=np.int64), np.empty(0, dtype=np.int64), tiles_x
    tb = proj.bboxes // TILE
    counts = np.zeros(n_tiles, dtype=np.int64)
    _kernels.count_tile_items(tb, tiles_x, counts)
    offsets = np.zeros(n_tiles + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    items = np.empty(offsets[-1], dtype=np.int64)
    _kernels.fill_tile_items(tb, tiles_x, offsets[:-1].copy(), items)
    return offsets, items, tiles_x


def _as_background(background) -> np.ndarray:
    bg = np.asarray(background, dtype=np.float64).reshape(-1)
    if bg.size == 1:
        bg = np.repeat(bg, 3)
    if bg.size != 3:
        raise InvalidInputError("background must be a scalar or RGB triple")
    return np.ascontiguousarray(bg)


def render(gaussians: GaussianSet, pose: Pose, K: Intrinsics,
           background=(0.0, 0.0, 0.0), settings: RasterSettings = DEFAULT_SETTINGS,
           cov3d: np.ndarray | None = None) -> RenderedFrame:
    """Tiled front-to-back composite of the gaussian set seen from `pose`."""
    proj = _project_set(gaussians, pose, K, settings, cov3d)
    frame, _ = _forward_from_projection(proj, K, _as_background(background))
    return frame


def _forward_from_projection(proj: _Projected, K: Intrinsics, bg: np.ndarray):
    H, W = K.height, K.width
    color = np.zeros((H, W, 3))
    depth = np.zeros((H, W))
    alpha = np.zeros((H, W))
    trans = np.ones((H, W))
    last = np.zeros((H, W), dtype=np.int64)
    offsets, items, _ = _tile_bins(proj, W, H)
    _kernels.composite_tiled(proj.centers, proj.conics, proj.opacs, proj.depths,
                             proj.colors, proj.bboxes, offsets, items, W, H, TILE,
                             bg, color, depth, alpha, trans, last)
    return RenderedFrame(color, depth, alpha, trans), (offsets, items, trans, last)


def render_reference(gaussians: GaussianSet, pose: Pose, K: Intrinsics,
                     background=(0.0, 0.0, 0.0),
                     settings: RasterSettings = DEFAULT_SETTINGS,
                     cov3d: np.ndarray | None = None) -> RenderedFrame:
    """Naive per-pixel renderer; the correctness oracle for `render`."""
    proj = _project_set(gaussians, pose, K, settings, cov3d)
    H, W = K.height, K.width
    color = np.zeros((H, W, 3))
    depth = np.zeros((H, W))
    alpha = np.zeros((H, W))
    trans = np.ones((H, W))
    _kernels.composite_reference(proj.centers, proj.conics, proj.opacs, proj.depths,
                                 proj.colors, W, H, _as_background(background),
                                 color, depth, alpha, trans)
    return RenderedFrame(color, depth, alpha, trans)


def render_backward(gaussians: GaussianSet, pose: Pose, K: Intrinsics,
                    grad_color: np.ndarray, grad_depth: np.ndarray,
                    grad_alpha: np.ndarray | None = None,
                    background=(0.0, 0.0, 0.0),
                    settings: RasterSettings = DEFAULT_SETTINGS,
                    cov3d: np.ndarray | None = None) -> GaussianGradients:
    """Gradients of sum(grad_color*C) + sum(grad_depth*D) [+ sum(grad_alpha*A)]
    with respect to every Gaussian parameter.

    Re-runs the forward pass internally to rebuild per-pixel transmittance and
    contribution cuts, then chains pixel-space gradients through the footprint,
    the 2D covariance, the projection Jacobian, and the quaternion/log-scale
    parameterization of the 3D covariance.
    """
    H, W = K.height, K.width
    grad_color = np.ascontiguousarray(grad_color, dtype=np.float64)
    grad_depth = np.ascontiguousarray(grad_depth, dtype=np.float64)
    if grad_color.shape != (H, W, 3) or grad_depth.shape != (H, W):
        raise InvalidInputError(
            f"gradient images must be ({H},{W},3) and ({H},{W}), "
            f"got {grad_color.shape} and {grad_depth.shape}")
    if grad_alpha is None:
        grad_alpha = np.zeros((H, W))
    else:
        grad_alpha = np.ascontiguousarray(grad_alpha, dtype=np.float64)
        if grad_alpha.shape != (H, W):
            raise InvalidInputError(f"grad_alpha must be ({H},{W}), got {grad_alpha.shape}")

    n = len(gaussians)
    grads = GaussianGradients.zeros(n)
    proj = _project_set(gaussians, pose, K, settings, cov3d)
    m = len(proj)
    if m == 0:
        return grads
    bg = _as_background(background)
    _, (offsets, items, trans, last) = _forward_from_projection(proj, K, bg)

    g_center = np.zeros((m, 2))
    g_conic = np.zeros((m, 3))
    g_opac = np.zeros(m)
    g_z = np.zeros(m)
    g_color = np.zeros((m, 3))
    _kernels.composite_backward(proj.centers, proj.conics, proj.opacs, proj.depths,
                                proj.colors, proj.bboxes, offsets, items, W, H, TILE,
                                bg, grad_color, grad_depth, grad_alpha, trans, last,
                                g_center, g_conic, g_opac, g_z, g_color)

    src = proj.source_index
    grads.color[src] = g_color
    grads.center2d[src] = g_center

    # conic -> cov2d: conic = inv(cov2d), so dL/dcov2d = -conic gM conic
    A, B, C = proj.conics.T
    gM = np.empty((m, 2, 2))
    gM[:, 0, 0] = g_conic[:, 0]
    gM[:, 0, 1] = 0.5 * g_conic[:, 1]
    gM[:, 1, 0] = 0.5 * g_conic[:, 1]
    gM[:, 1, 1] = g_conic[:, 2]
    conic_m = np.empty((m, 2, 2))
    conic_m[:, 0, 0] = A
    conic_m[:, 0, 1] = B
    conic_m[:, 1, 0] = B
    conic_m[:, 1, 1] = C
    g_cov2d = -conic_m @ gM @ conic_m

    # cov2d = Mp Sigma3d Mp^T + eps I, Mp = J Rcam
    Rcam = pose.rotation
    x, y, z = proj.p_cam.T
    iz = 1.0 / z
    iz2 = iz * iz
    J = np.zeros((m, 2, 3))
    J[:, 0, 0] = K.fx * iz
    J[:, 0, 2] = -K.fx * x * iz2
    J[:, 1, 1] = K.fy * iz
    J[:, 1, 2] = -K.fy * y * iz2
    Mp = J @ Rcam
    if cov3d is None:
        cov3d = compute_cov3d(gaussians)
    Sig = cov3d[src]
    g_sig = np.transpose(Mp, (0, 2, 1)) @ g_cov2d @ Mp
    g_Mp = 2.0 * g_cov2d @ Mp @ Sig
    g_J = g_Mp @ Rcam.T

    # J and the projected center both depend on the camera-space point
    g_pcam = np.zeros((m, 3))
    g_pcam[:, 0] = g_J[:, 0, 2] * (-K.fx * iz2)
    g_pcam[:, 1] = g_J[:, 1, 2] * (-K.fy * iz2)
    g_pcam[:, 2] = (g_J[:, 0, 0] * (-K.fx * iz2) + g_J[:, 1, 1] * (-K.fy * iz2)
                    + g_J[:, 0, 2] * (2.0 * K.fx * x * iz2 * iz)
                    + g_J[:, 1, 2] * (2.0 * K.fy * y * iz2 * iz))
    g_pcam += np.einsum("nij,ni->nj", J, g_center)
    g_pcam[:, 2] += g_z
    o = proj.opacities
    if settings.ewa_normalization:
        g_o = g_opac * proj.norms
        g_pcam[:, 2] += g_opac * o * (-2.0 * K.fx * K.fy * iz2 * iz)
    else:
        g_o = g_opac
    grads.mu[src] = g_pcam @ Rcam
    grads.opacity_logit[src] = g_o * o * (1.0 - o)

    # Sigma3d = N N^T with N = R diag(s)
    q = gaussians.quat[src]
    qnorm = np.linalg.norm(q, axis=1, keepdims=True)
    qn = q / qnorm
    w, qx, qy, qz = qn.T
    R = np.empty((m, 3, 3))
    R[:, 0, 0] = 1 - 2 * (qy * qy + qz * qz)
    R[:, 0, 1] = 2 * (qx * qy - w * qz)
    R[:, 0, 2] = 2 * (qx * qz + w * qy)
    R[:, 1, 0] = 2 * (qx * qy + w * qz)
    R[:, 1, 1] = 1 - 2 * (qx * qx + qz * qz)
    R[:, 1, 2] = 2 * (qy * qz - w * qx)
    R[:, 2, 0] = 2 * (qx * qz - w * qy)
    R[:, 2, 1] = 2 * (qy * qz + w * qx)
    R[:, 2, 2] = 1 - 2 * (qx * qx + qy * qy)
    s = np.exp(gaussians.log_scale[src])
    N = R * s[:, None, :]
    g_N = 2.0 * g_sig @ N
    g_R = g_N * s[:, None, :]
    g_s = np.einsum("nik,nik->nk", R, g_N)
    grads.log_scale[src] = g_s * s

    zero = np.zeros(m)
    dRdq = np.empty((4, m, 3, 3))
    dRdq[0] = 2.0 * np.stack([
        np.stack([zero, -qz, qy], axis=-1),
        np.stack([qz, zero, -qx], axis=-1),
        np.stack([-qy, qx, zero], axis=-1),
    ], axis=1)
    dRdq[1] = 2.0 * np.stack([
        np.stack([zero, qy, qz], axis=-1),
        np.stack([qy, -2 * qx, -w], axis=-1),
        np.stack([qz, w, -2 * qx], axis=-1),
    ], axis=1)
    dRdq[2] = 2.0 * np.stack([
        np.stack([-2 * qy, qx, w], axis=-1),
        np.stack([qx, zero, qz], axis=-1),
        np.stack([-w, qz, -2 * qy], axis=-1),
    ], axis=1)
    dRdq[3] = 2.0 * np.stack([
        np.stack([-2 * qz, -w, qx], axis=-1),
        np.stack([w, -2 * qz, qy], axis=-1),
        np.stack([qx, qy, zero], axis=-1),
    ], axis=1)
    g_qn = np.einsum("nij,knij->nk", g_R, dRdq)
    # through normalization q/|q|
    g_q = (g_qn - qn * np.sum(g_qn * qn, axis=1, keepdims=True)) / qnorm
    grads.quat[src] = g_q
    return grads
