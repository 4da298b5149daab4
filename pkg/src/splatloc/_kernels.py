"""Numba compositing kernels for the splat rasterizer.

All kernels run in float64 and use scalar math.exp so the tiled path and the
per-pixel reference path perform bit-identical arithmetic per pixel: for any
pixel both walk the same depth-ordered contributions and apply the same
operation sequence. The only per-pixel support rule is the weight cutoff
q < W_CUTOFF; the tile binning uses a bounding box guaranteed to contain the
q >= W_CUTOFF region, so binning can never change results. Compositing stops
once transmittance drops below T_STOP.
"""

import math

import numpy as np
from numba import njit

W_CUTOFF = 1.0 / 255.0   # contributions below 8-bit resolution are skipped
T_STOP = 1e-4            # per-pixel early stop on transmittance
Q_CLAMP = 0.99           # footprint weight ceiling


@njit(cache=True, nogil=True)
def composite_tiled(centers, conics, opacs, depths, colors, bboxes,
                    tile_offsets, tile_items, width, height, tile,
                    background, out_color, out_depth, out_alpha,
                    out_trans, out_last):
    """Front-to-back compositing over per-tile depth-ordered splat lists.

    out_alpha accumulates sum(q*T); out_trans holds the final transmittance;
    out_last records, per pixel, the cut position in the pixel's tile list
    (contributions only come from list positions < out_last).
    """
    tiles_x = (width + tile - 1) // tile
    tiles_y = (height + tile - 1) // tile
    for ty in range(tiles_y):
        for tx in range(tiles_x):
            t = ty * tiles_x + tx
            lo = tile_offsets[t]
            hi = tile_offsets[t + 1]
            y_end = min((ty + 1) * tile, height)
            x_end = min((tx + 1) * tile, width)
            for py in range(ty * tile, y_end):
                for px in range(tx * tile, x_end):
                    T = 1.0
                    r = 0.0
                    g = 0.0
                    b = 0.0
                    dep = 0.0
                    aw = 0.0
                    cut = hi - lo
                    for j in range(lo, hi):
                        if T < T_STOP:
                            cut = j - lo
                            break
                        s = tile_items[j]
                        if px < bboxes[s, 0] or px > bboxes[s, 1] or py < bboxes[s, 2] or py > bboxes[s, 3]:
                            continue
                        dx = px - centers[s, 0]
                        dy = py - centers[s, 1]
                        m = conics[s, 0] * dx * dx + 2.0 * conics[s, 1] * dx * dy + conics[s, 2] * dy * dy
                        q = opacs[s] * math.exp(-0.5 * m)
                        if q > Q_CLAMP:
                            q = Q_CLAMP
                        if q < W_CUTOFF:
                            continue
                        w = q * T
                        r += colors[s, 0] * w
                        g += colors[s, 1] * w
                        b += colors[s, 2] * w
                        dep += depths[s] * w
                        aw += w
                        T *= 1.0 - q
                    out_color[py, px, 0] = r + background[0] * T
                    out_color[py, px, 1] = g + background[1] * T
                    out_color[py, px, 2] = b + background[2] * T
                    out_depth[py, px] = dep
                    out_alpha[py, px] = aw
                    out_trans[py, px] = T
                    out_last[py, px] = cut


@njit(cache=True, nogil=True)
def composite_reference(centers, conics, opacs, depths, colors,
                        width, height, background,
                        out_color, out_depth, out_alpha, out_trans):
    """Naive per-pixel oracle: every pixel walks every splat in depth order."""
    n = centers.shape[0]
    for py in range(height):
        for px in range(width):
            T = 1.0
            r = 0.0
            g = 0.0
            b = 0.0
            dep = 0.0
            aw = 0.0
            for s in range(n):
                if T < T_STOP:
                    break
                dx = px - centers[s, 0]
                dy = py - centers[s, 1]
                m = conics[s, 0] * dx * dx + 2.0 * conics[s, 1] * dx * dy + conics[s, 2] * dy * dy
                q = opacs[s] * math.exp(-0.5 * m)
                if q > Q_CLAMP:
                    q = Q_CLAMP
                if q < W_CUTOFF:
                    continue
                w = q * T
                r += colors[s, 0] * w
                g += colors[s, 1] * w
                b += colors[s, 2] * w
                dep += depths[s] * w
                aw += w
                T *= 1.0 - q
            out_color[py, px, 0] = r + background[0] * T
            out_color[py, px, 1] = g + background[1] * T
            out_color[py, px, 2] = b + background[2] * T
            out_depth[py, px] = dep
            out_alpha[py, px] = aw
            out_trans[py, px] = T


@njit(cache=True, nogil=True)
def composite_backward(centers, conics, opacs, depths, colors, bboxes,
                       tile_offsets, tile_items, width, height, tile,
                       background, grad_color, grad_depth, grad_alpha,
                       trans_final, last,
                       g_center, g_conic, g_opac, g_depth, g_color):
    """Accumulate d(sum grad.output)/d(splat 2D quantities).

    Walks each pixel's applied contributions back-to-front, rebuilding the
    transmittance by division (q <= 0.99 keeps 1-q >= 0.01). Tiles and pixels
    are visited in a fixed order so accumulation is run-to-run identical.
    """
    tiles_x = (width + tile - 1) // tile
    tiles_y = (height + tile - 1) // tile
    for ty in range(tiles_y):
        for tx in range(tiles_x):
            t = ty * tiles_x + tx
            lo = tile_offsets[t]
            y_end = min((ty + 1) * tile, height)
            x_end = min((tx + 1) * tile, width)
            for py in range(ty * tile, y_end):
                for px in range(tx * tile, x_end):
                    gc0 = grad_color[py, px, 0]
                    gc1 = grad_color[py, px, 1]
                    gc2 = grad_color[py, px, 2]
                    gd = grad_depth[py, px]
                    ga = grad_alpha[py, px]
                    if gc0 == 0.0 and gc1 == 0.0 and gc2 == 0.0 and gd == 0.0 and ga == 0.0:
                        continue
                    beta = gc0 * background[0] + gc1 * background[1] + gc2 * background[2]
                    T = trans_final[py, px]
                    S = beta * T
                    for j in range(lo + last[py, px] - 1, lo - 1, -1):
                        s = tile_items[j]
                        if px < bboxes[s, 0] or px > bboxes[s, 1] or py < bboxes[s, 2] or py > bboxes[s, 3]:
                            continue
                        dx = px - centers[s, 0]
                        dy = py - centers[s, 1]
                        mA = conics[s, 0]
                        mB = conics[s, 1]
                        mC = conics[s, 2]
                        m = mA * dx * dx + 2.0 * mB * dx * dy + mC * dy * dy
                        kern = math.exp(-0.5 * m)
                        q = opacs[s] * kern
                        clamped = q > Q_CLAMP
                        if clamped:
                            q = Q_CLAMP
                        if q < W_CUTOFF:
                            continue
                        T = T / (1.0 - q)      # transmittance seen by splat s
                        w = q * T
                        u = gc0 * colors[s, 0] + gc1 * colors[s, 1] + gc2 * colors[s, 2] \
                            + gd * depths[s] + ga
                        dq = u * T - S / (1.0 - q)
                        S += u * w
                        g_color[s, 0] += gc0 * w
                        g_color[s, 1] += gc1 * w
                        g_color[s, 2] += gc2 * w
                        g_depth[s] += gd * w
                        if clamped:
                            continue
                        g_opac[s] += dq * kern
                        dm = -0.5 * dq * q
                        g_conic[s, 0] += dm * dx * dx
                        g_conic[s, 1] += dm * 2.0 * dx * dy
                        g_conic[s, 2] += dm * dy * dy
                        g_center[s, 0] += dm * (-2.0) * (mA * dx + mB * dy)
                        g_center[s, 1] += dm * (-2.0) * (mB * dx + mC * dy)


@njit(cache=True, nogil=True)
def count_tile_items(order_bbox, tiles_x, counts):
    for s in range(order_bbox.shape[0]):
        for ty in range(order_bbox[s, 2], order_bbox[s, 3] + 1):
            base = ty * tiles_x
            for tx in range(order_bbox[s, 0], order_bbox[s, 1] + 1):
                counts[base + tx] += 1


@njit(cache=True, nogil=True)
def fill_tile_items(order_bbox, tiles_x, cursor, out_items):
    """Scatter depth-ordered splats into per-tile lists (CSR fill).

    order_bbox holds tile index ranges per splat in depth order; writing in
    that order keeps every tile list depth-sorted.
    """
    for s in range(order_bbox.shape[0]):
        for ty in range(order_bbox[s, 2], order_bbox[s, 3] + 1):
            base = ty * tiles_x
            for tx in range(order_bbox[s, 0], order_bbox[s, 1] + 1):
                t = base + tx
                out_items[cursor[t]] = s
                cursor[t] += 1


@njit(cache=True, nogil=True)
def warp_forward(src, depth, valid, R, t, fx, fy, cx, cy, near, ztol,
                 zbuf, num, den):
    """Forward-warp src by per-pixel depth: unproject, transform, project,
    bilinear scatter with nearest-depth z-buffering.

    Pass 1 fills zbuf with the minimum arriving depth per target pixel;
    pass 2 accumulates bilinear color/weight for samples within ztol of it.
    """
    H, W = depth.shape
    for sy in range(H):
        for sx in range(W):
            if not valid[sy, sx]:
                continue
            d = depth[sy, sx]
            ex = (sx - cx) / fx
            ey = (sy - cy) / fy
            px = d * ex
            py = d * ey
            pz = d
            qx = R[0, 0] * px + R[0, 1] * py + R[0, 2] * pz + t[0]
            qy = R[1, 0] * px + R[1, 1] * py + R[1, 2] * pz + t[1]
            qz = R[2, 0] * px + R[2, 1] * py + R[2, 2] * pz + t[2]
            if qz <= near:
                continue
            u = fx * qx / qz + cx
            v = fy * qy / qz + cy
            x0 = int(math.floor(u))
            y0 = int(math.floor(v))
            fu = u - x0
            fv = v - y0
            for k in range(4):
                xt = x0 + (k & 1)
                yt = y0 + (k >> 1)
                if xt < 0 or xt >= W or yt < 0 or yt >= H:
                    continue
                wu = fu if (k & 1) else 1.0 - fu
                wv = fv if (k >> 1) else 1.0 - fv
                w = wu * wv
                if w <= 1e-9:
                    continue
                if qz < zbuf[yt, xt]:
                    zbuf[yt, xt] = qz
    for sy in range(H):
        for sx in range(W):
            if not valid[sy, sx]:
                continue
            d = depth[sy, sx]
            px = d * (sx - cx) / fx
            py = d * (sy - cy) / fy
            pz = d
            qx = R[0, 0] * px + R[0, 1] * py + R[0, 2] * pz + t[0]
            qy = R[1, 0] * px + R[1, 1] * py + R[1, 2] * pz + t[1]
            qz = R[2, 0] * px + R[2, 1] * py + R[2, 2] * pz + t[2]
            if qz <= near:
                continue
            u = fx * qx / qz + cx
            v = fy * qy / qz + cy
            x0 = int(math.floor(u))
            y0 = int(math.floor(v))
            fu = u - x0
            fv = v - y0
            for k in range(4):
                xt = x0 + (k & 1)
                yt = y0 + (k >> 1)
                if xt < 0 or xt >= W or yt < 0 or yt >= H:
                    continue
                wu = fu if (k & 1) else 1.0 - fu
                wv = fv if (k >> 1) else 1.0 - fv
                w = wu * wv
                if w <= 1e-9:
                    continue
                if qz <= zbuf[yt, xt] * (1.0 + ztol):
                    num[yt, xt, 0] += w * src[sy, sx, 0]
                    num[yt, xt, 1] += w * src[sy, sx, 1]
                    num[yt, xt, 2] += w * src[sy, sx, 2]
                    den[yt, xt] += w


@njit(cache=True, nogil=True)
def warp_backward_depth(src, depth, valid, R, t, fx, fy, cx, cy, near, ztol,
                        zbuf, den, warped, grad_warped, grad_depth):
    """d(sum grad_warped*warped)/d(depth), holding z-buffer winners and the
    validity mask fixed (straight-through visibility)."""
    H, W = depth.shape
    for sy in range(H):
        for sx in range(W):
            if not valid[sy, sx]:
                continue
            d = depth[sy, sx]
            ex = (sx - cx) / fx
            ey = (sy - cy) / fy
            # direction of motion in the target camera per unit source depth
            rx = R[0, 0] * ex + R[0, 1] * ey + R[0, 2]
            ry = R[1, 0] * ex + R[1, 1] * ey + R[1, 2]
            rz = R[2, 0] * ex + R[2, 1] * ey + R[2, 2]
            qx = d * rx + t[0]
            qy = d * ry + t[1]
            qz = d * rz + t[2]
            if qz <= near:
                continue
            u = fx * qx / qz + cx
            v = fy * qy / qz + cy
            du_dd = fx * (rx * qz - qx * rz) / (qz * qz)
            dv_dd = fy * (ry * qz - qy * rz) / (qz * qz)
            x0 = int(math.floor(u))
            y0 = int(math.floor(v))
            fu = u - x0
            fv = v - y0
            acc = 0.0
            for k in range(4):
                xt = x0 + (k & 1)
                yt = y0 + (k >> 1)
                if xt < 0 or xt >= W or yt < 0 or yt >= H:
                    continue
                wu = fu if (k & 1) else 1.0 - fu
                wv = fv if (k >> 1) else 1.0 - fv
                w = wu * wv
                if w <= 1e-9:
                    continue
                if qz > zbuf[yt, xt] * (1.0 + ztol):
                    continue
                dw_du = (wv if (k & 1) else -wv)
                dw_dv = (wu if (k >> 1) else -wu)
                dw_dd = dw_du * du_dd + dw_dv * dv_dd
                if den[yt, xt] <= 1e-9:
                    continue
                coeff = 0.0
                for ch in range(3):
                    coeff += grad_warped[yt, xt, ch] * (src[sy, sx, ch] - warped[yt, xt, ch])
                acc += coeff / den[yt, xt] * dw_dd
            grad_depth[sy, sx] += acc
