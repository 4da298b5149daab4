"""Shared test utilities: scene generation and finite-difference gradients."""

import numpy as np

from splatloc.gaussians import GaussianSet, logit
from splatloc.geometry import Intrinsics, Pose, quat_from_axis_angle

PARAM_FIELDS = ("mu", "log_scale", "quat", "color", "opacity_logit")


def small_intrinsics(w=32, h=32, f=30.0):
    return Intrinsics(fx=f, fy=f, cx=(w - 1) / 2, cy=(h - 1) / 2, width=w, height=h)


def random_scene(rng, n, depth_range=(4.0, 12.0), span=2.0, sigma=(0.2, 0.9),
                 opacity=(0.25, 0.85)):
    """Gaussians comfortably inside the frustum of a camera at the origin."""
    mu = np.column_stack([
        rng.uniform(-span, span, n),
        rng.uniform(-span, span, n),
        rng.uniform(*depth_range, n),
    ])
    log_scale = np.log(rng.uniform(*sigma, (n, 3)))
    quat = rng.standard_normal((n, 4))
    quat /= np.linalg.norm(quat, axis=1, keepdims=True)
    color = rng.uniform(0.05, 0.95, (n, 3))
    op = logit(rng.uniform(*opacity, n))
    return GaussianSet(mu, log_scale, quat, color, op)


def jittered_pose(rng, angle=0.2, trans=0.5):
    return Pose(quat_from_axis_angle(rng.standard_normal(3), rng.uniform(-angle, angle)),
                rng.uniform(-trans, trans, 3))


def perturbed_copy(gs, field, i, j, delta):
    out = gs.copy()
    arr = getattr(out, field)
    if arr.ndim == 1:
        arr[i] += delta
    else:
        arr[i, j] += delta
    return out


def fd_gradients(objective, gs, step=1e-4):
    """Central finite differences of a scalar objective over all parameters."""
    grads = {}
    for field in PARAM_FIELDS:
        arr = getattr(gs, field)
        g = np.zeros_like(arr)
        it = np.ndindex(arr.shape)
        for idx in it:
            i = idx[0]
            j = idx[1] if len(idx) > 1 else None
            hi = objective(perturbed_copy(gs, field, i, j, +step))
            lo = objective(perturbed_copy(gs, field, i, j, -step))
            g[idx] = (hi - lo) / (2.0 * step)
        grads[field] = g
    return grads


def compare_grads(analytic, fd, rel_tol, floor=1e-6):
    """Max relative error over entries where the analytic gradient is material."""
    worst = 0.0
    worst_where = None
    for field in PARAM_FIELDS:
        a = np.asarray(getattr(analytic, field), dtype=np.float64)
        f = np.asarray(fd[field], dtype=np.float64)
        mask = np.abs(a) > floor
        if not mask.any():
            continue
        rel = np.abs(a - f)[mask] / np.maximum(np.abs(a[mask]), floor)
        k = int(np.argmax(rel))
        if rel[k] > worst:
            worst = float(rel[k])
            worst_where = (field, np.argwhere(mask)[k])
    assert worst <= rel_tol, f"gradient mismatch {worst:.3e} at {worst_where}"
    return worst
