"""Image losses for map training: L1, SSIM/D-SSIM, and their mix.

SSIM uses the standard 11x11 Gaussian window (sigma 1.5, C1=0.01^2,
C2=0.03^2), evaluated per channel on windows that fit entirely inside the
image ("valid" placement) and averaged over channels and window positions.
All losses are analytically differentiable with respect to the first image;
an optional pixel mask restricts L1 to masked pixels and SSIM to windows
fully inside the mask.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidInputError

WINDOW = 11
_SIGMA = 1.5
_C1 = 0.01 ** 2
_C2 = 0.03 ** 2


def _gauss_kernel():
    x = np.arange(WINDOW) - (WINDOW - 1) / 2
    k = np.exp(-0.5 * (x / _SIGMA) ** 2)
    return k / k.sum()


_KERNEL = _gauss_kernel()


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInputError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    if a.ndim != 3:
        raise InvalidInputError(f"expected HxW or HxWxC images, got shape {a.shape}")
    return a, b


def _filter_valid(img2d: np.ndarray) -> np.ndarray:
    """Separable Gaussian window sum with valid placement: (H,W)->(H-10,W-10)."""
    t = sliding_window_view(img2d, WINDOW, axis=0) @ _KERNEL
    return sliding_window_view(t, WINDOW, axis=1) @ _KERNEL


def _scatter_full(grid: np.ndarray, shape) -> np.ndarray:
    """Adjoint of _filter_valid: spread window-grid values back onto pixels."""
    pad = WINDOW - 1
    g = np.pad(grid, ((pad, pad), (pad, pad)))
    t = sliding_window_view(g, WINDOW, axis=0) @ _KERNEL
    out = sliding_window_view(t, WINDOW, axis=1) @ _KERNEL
    assert out.shape == shape
    return out


def l1_loss(a, b, mask=None) -> float:
    a, b = _check_pair(a, b)
    if mask is None:
        return float(np.mean(np.abs(a - b)))
    mask = np.asarray(mask, dtype=bool)
    n = int(mask.sum()) * a.shape[2]
    if n == 0:
        return 0.0
    return float(np.sum(np.abs(a - b)[mask]) / n)


def _l1_grad(a, b, mask=None) -> np.ndarray:
    g = np.sign(a - b)
    if mask is None:
        return g / a.size
    n = int(mask.sum()) * a.shape[2]
    g = np.where(mask[:, :, None], g, 0.0)
    return g / n if n else g * 0.0


def _ssim_core(a, b, mask=None, want_grad=False):
    """Returns (mean ssim, grad wrt a or None, number of valid windows)."""
    H, W, C = a.shape
    if H < WINDOW or W < WINDOW:
        raise InvalidInputError(f"images must be at least {WINDOW}x{WINDOW} for ssim")
    if mask is not None:
        # a window counts only when every pixel under it is masked in
        holes = _filter_valid(np.where(np.asarray(mask, dtype=bool), 0.0, 1.0))
        win_ok = holes < 1e-12
    else:
        win_ok = np.ones((H - WINDOW + 1, W - WINDOW + 1), dtype=bool)
    n_win = int(win_ok.sum())
    if n_win == 0:
        return 0.0, (np.zeros_like(a) if want_grad else None), 0

    total = 0.0
    grad = np.zeros_like(a) if want_grad else None
    denom = n_win * C
    for ch in range(C):
        x = a[:, :, ch]
        y = b[:, :, ch]
        mu_x = _filter_valid(x)
        mu_y = _filter_valid(y)
        var_x = _filter_valid(x * x) - mu_x * mu_x
        var_y = _filter_valid(y * y) - mu_y * mu_y
        cov = _filter_valid(x * y) - mu_x * mu_y
        A1 = 2 * mu_x * mu_y + _C1
        A2 = 2 * cov + _C2
        B1 = mu_x * mu_x + mu_y * mu_y + _C1
        B2 = var_x + var_y + _C2
        s = (A1 * A2) / (B1 * B2)
        total += float(s[win_ok].sum())
        if not want_grad:
            continue
        # partials holding (mu, var, cov) as the window-level intermediates
        d_mu = (2 * mu_y * A2) / (B1 * B2) - 2 * mu_x * s / B1
        d_var = -s / B2
        d_cov = 2 * A1 / (B1 * B2)
        d_mu = np.where(win_ok, d_mu, 0.0) / denom
        d_var = np.where(win_ok, d_var, 0.0) / denom
        d_cov = np.where(win_ok, d_cov, 0.0) / denom
        g = _scatter_full(d_mu - 2 * mu_x * d_var - mu_y * d_cov, x.shape)
        g += 2 * x * _scatter_full(d_var, x.shape)
        g += y * _scatter_full(d_cov, x.shape)
        grad[:, :, ch] = g
    return total / denom, grad, n_win


def ssim(a, b, mask=None) -> float:
    a, b = _check_pair(a, b)
    val, _, n = _ssim_core(a, b, mask)
    if n == 0:
        raise InvalidInputError("mask leaves no complete ssim window")
    return val


def d_ssim_loss(a, b, mask=None) -> float:
    return (1.0 - ssim(a, b, mask)) / 2.0


def rgb_loss(a, b, lam: float = 0.2, mask=None) -> float:
    """(1-lam)*L1 + lam*D-SSIM; the SSIM term is dropped when the mask leaves
    no complete window."""
    val, _ = rgb_loss_grad(a, b, lam, mask, want_grad=False)
    return val


def rgb_loss_grad(a, b, lam: float = 0.2, mask=None, want_grad: bool = True):
    """Loss value and its gradient with respect to `a` (same shape as `a`)."""
    if not 0.0 <= lam <= 1.0:
        raise InvalidInputError("lambda must lie in [0, 1]")
    a2, b2 = _check_pair(a, b)
    squeeze = np.asarray(a).ndim == 2
    val = (1.0 - lam) * l1_loss(a2, b2, mask)
    grad = None
    if want_grad:
        grad = (1.0 - lam) * _l1_grad(a2, b2, mask)
    if lam > 0.0:
        s_val, s_grad, n_win = _ssim_core(a2, b2, mask, want_grad=want_grad)
        if n_win > 0:
            val += lam * (1.0 - s_val) / 2.0
            if want_grad:
                grad -= (lam / 2.0) * s_grad
    if want_grad and squeeze:
        grad = grad[:, :, 0]
    return val, grad


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for images in [0, 1]."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return float("inf")
    return -10.0 * np.log10(mse)
