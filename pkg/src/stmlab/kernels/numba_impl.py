"""Numba @njit kernels; signature-compatible with `numpy_impl`.

parallel=False everywhere: per-element accumulation must stay in a fixed
order so results are bit-identical run to run regardless of thread count.
"""

import numpy as np
from numba import njit

BACKEND_NAME = "numba"


@njit(cache=True)
def depthwise_conv2d_fwd(x, k, stride, pad, circular):
    # interior pixels take a check-free fast path; borders and the circular
    # mode use per-tap bounds handling. Taps accumulate row-major per output
    # element, a fixed order.
    n, c, h, w = x.shape
    kh, kw = k.shape[1], k.shape[2]
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((n, c, ho, wo), dtype=np.float32)
    # output range where every tap lands inside the map
    i_lo = -(-pad // stride)
    i_hi = (h - kh + pad) // stride
    j_lo = -(-pad // stride)
    j_hi = (w - kw + pad) // stride
    for b in range(n):
        for ch in range(c):
            if not circular:
                for i in range(max(0, i_lo), min(ho - 1, i_hi) + 1):
                    base_r = i * stride - pad
                    for j in range(max(0, j_lo), min(wo - 1, j_hi) + 1):
                        base_c = j * stride - pad
                        acc = np.float32(0.0)
                        for u in range(kh):
                            for v in range(kw):
                                acc += x[b, ch, base_r + u, base_c + v] * k[ch, u, v]
                        out[b, ch, i, j] = acc
            for i in range(ho):
                if not circular and i_lo <= i <= i_hi:
                    # fast pass covered [j_lo, j_hi]; only border columns remain
                    spans = ((0, min(wo, max(0, j_lo))), (max(0, min(wo, j_hi + 1)), wo))
                else:
                    spans = ((0, wo), (0, 0))
                for lo, hi in spans:
                    for j in range(lo, hi):
                        acc = np.float32(0.0)
                        for u in range(kh):
                            row = i * stride - pad + u
                            if circular:
                                row = row % h
                            elif row < 0 or row >= h:
                                continue
                            for v in range(kw):
                                col = j * stride - pad + v
                                if circular:
                                    col = col % w
                                elif col < 0 or col >= w:
                                    continue
                                acc += x[b, ch, row, col] * k[ch, u, v]
                        out[b, ch, i, j] = acc
    return out


@njit(cache=True)
def depthwise_conv2d_bwd(g, k, stride, pad, circular, h, w):
    # tap-major accumulation order, matching the numpy twin bit for bit
    n, c, ho, wo = g.shape
    kh, kw = k.shape[1], k.shape[2]
    gx = np.zeros((n, c, h, w), dtype=np.float32)
    for b in range(n):
        for ch in range(c):
            for u in range(kh):
                for v in range(kw):
                    kv = k[ch, u, v]
                    for i in range(ho):
                        row = i * stride - pad + u
                        if circular:
                            row = row % h
                        elif row < 0 or row >= h:
                            continue
                        for j in range(wo):
                            col = j * stride - pad + v
                            if circular:
                                col = col % w
                            elif col < 0 or col >= w:
                                continue
                            gx[b, ch, row, col] += g[b, ch, i, j] * kv
    return gx


@njit(cache=True)
def extract_patches_fwd(x, ksize, stride, pad_top, pad_left, ho, wo):
    n, c, h, w = x.shape
    out = np.zeros((n, ho, wo, c, ksize, ksize), dtype=np.float32)
    for b in range(n):
        for i in range(ho):
            for j in range(wo):
                for u in range(ksize):
                    row = i * stride - pad_top + u
                    if row < 0 or row >= h:
                        continue
                    for v in range(ksize):
                        col = j * stride - pad_left + v
                        if col < 0 or col >= w:
                            continue
                        for ch in range(c):
                            out[b, i, j, ch, u, v] = x[b, ch, row, col]
    return out


@njit(cache=True)
def extract_patches_bwd(g, ksize, stride, pad_top, pad_left, h, w):
    n, ho, wo, c = g.shape[:4]
    gx = np.zeros((n, c, h, w), dtype=np.float32)
    for b in range(n):
        for i in range(ho):
            for j in range(wo):
                for u in range(ksize):
                    row = i * stride - pad_top + u
                    if row < 0 or row >= h:
                        continue
                    for v in range(ksize):
                        col = j * stride - pad_left + v
                        if col < 0 or col >= w:
                            continue
                        for ch in range(c):
                            gx[b, ch, row, col] += g[b, i, j, ch, u, v]
    return gx


@njit(cache=True)
def bilinear_gather(x, ys, xs):
    n, c, h, w = x.shape
    p = ys.shape[1]
    out = np.zeros((n, c, p), dtype=np.float32)
    for b in range(n):
        for idx in range(p):
            y = ys[b, idx]
            x_ = xs[b, idx]
            y0 = int(np.floor(y))
            x0 = int(np.floor(x_))
            wy1 = np.float32(y - y0)
            wx1 = np.float32(x_ - x0)
            wy0 = np.float32(1.0) - wy1
            wx0 = np.float32(1.0) - wx1
            for dy in range(2):
                row = y0 + dy
                if row < 0 or row >= h:
                    continue
                wy = wy0 if dy == 0 else wy1
                for dx in range(2):
                    col = x0 + dx
                    if col < 0 or col >= w:
                        continue
                    wx = wx0 if dx == 0 else wx1
                    wgt = wy * wx
                    for ch in range(c):
                        out[b, ch, idx] += x[b, ch, row, col] * wgt
    return out


@njit(cache=True)
def bilinear_scatter(g, ys, xs, h, w):
    n, c, p = g.shape
    gx = np.zeros((n, c, h, w), dtype=np.float32)
    for b in range(n):
        for idx in range(p):
            y = ys[b, idx]
            x_ = xs[b, idx]
            y0 = int(np.floor(y))
            x0 = int(np.floor(x_))
            wy1 = np.float32(y - y0)
            wx1 = np.float32(x_ - x0)
            wy0 = np.float32(1.0) - wy1
            wx0 = np.float32(1.0) - wx1
            for dy in range(2):
                row = y0 + dy
                if row < 0 or row >= h:
                    continue
                wy = wy0 if dy == 0 else wy1
                for dx in range(2):
                    col = x0 + dx
                    if col < 0 or col >= w:
                        continue
                    wx = wx0 if dx == 0 else wx1
                    wgt = wy * wx
                    for ch in range(c):
                        gx[b, ch, row, col] += g[b, ch, idx] * wgt
    return gx
