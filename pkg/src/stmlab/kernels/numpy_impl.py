"""Pure-numpy kernels: the fallback path for the numba-accelerated loops.

Every function here has a twin with the same signature in `numba_impl`.
Determinism: accumulation happens tap-by-tap in a fixed (row-major kernel)
order, so repeated runs are bit-identical.
"""

import numpy as np

BACKEND_NAME = "numpy"


def depthwise_conv2d_fwd(x, k, stride, pad, circular):
    """Per-channel 2D correlation.

    x: [N,C,H,W] f32, k: [C,kh,kw] f32. Zero padding, or wrap-around when
    `circular` is set. Output extents floor((H+2p-kh)/s)+1.
    """
    n, c, h, w = x.shape
    kh, kw = k.shape[1], k.shape[2]
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    mode = "wrap" if circular else "constant"
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode=mode)
    out = np.zeros((n, c, ho, wo), dtype=np.float32)
    for u in range(kh):
        for v in range(kw):
            tap = xp[:, :, u : u + ho * stride : stride, v : v + wo * stride : stride]
            out += tap * k[None, :, u, v, None, None]
    return out


def depthwise_conv2d_bwd(g, k, stride, pad, circular, h, w):
    """Gradient of depthwise_conv2d_fwd w.r.t. its input map."""
    n, c, ho, wo = g.shape
    kh, kw = k.shape[1], k.shape[2]
    hp, wp = h + 2 * pad, w + 2 * pad
    gxp = np.zeros((n, c, hp, wp), dtype=np.float32)
    for u in range(kh):
        for v in range(kw):
            gxp[:, :, u : u + ho * stride : stride, v : v + wo * stride : stride] += (
                g * k[None, :, u, v, None, None]
            )
    if pad == 0:
        return gxp
    if not circular:
        return np.ascontiguousarray(gxp[:, :, pad : pad + h, pad : pad + w])
    gx = np.zeros((n, c, h, w), dtype=np.float32)
    rows = np.mod(np.arange(hp) - pad, h)
    cols = np.mod(np.arange(wp) - pad, w)
    np.add.at(gx, (slice(None), slice(None), rows[:, None], cols[None, :]), gxp)
    return gx


def extract_patches_fwd(x, ksize, stride, pad_top, pad_left, ho, wo):
    """Gather k x k patches on a strided grid into [N,Ho,Wo,C,k,k].

    Patch (i,j) covers input rows i*stride - pad_top ... + ksize-1 (same for
    columns); positions outside the map read as zero.
    """
    n, c, h, w = x.shape
    max_row = (ho - 1) * stride - pad_top + ksize - 1
    max_col = (wo - 1) * stride - pad_left + ksize - 1
    pad_bottom = max(0, max_row - (h - 1))
    pad_right = max(0, max_col - (w - 1))
    xp = np.pad(
        x, ((0, 0), (0, 0), (pad_top, pad_bottom), (pad_left, pad_right))
    )
    out = np.empty((n, ho, wo, c, ksize, ksize), dtype=np.float32)
    for u in range(ksize):
        for v in range(ksize):
            tap = xp[:, :, u : u + ho * stride : stride, v : v + wo * stride : stride]
            out[:, :, :, :, u, v] = tap.transpose(0, 2, 3, 1)
    return out


def extract_patches_bwd(g, ksize, stride, pad_top, pad_left, h, w):
    """Scatter-add patch gradients [N,Ho,Wo,C,k,k] back onto [N,C,H,W]."""
    n, ho, wo, c = g.shape[:4]
    max_row = (ho - 1) * stride - pad_top + ksize - 1
    max_col = (wo - 1) * stride - pad_left + ksize - 1
    pad_bottom = max(0, max_row - (h - 1))
    pad_right = max(0, max_col - (w - 1))
    gxp = np.zeros(
        (n, c, h + pad_top + pad_bottom, w + pad_left + pad_right), dtype=np.float32
    )
    for u in range(ksize):
        for v in range(ksize):
            gxp[:, :, u : u + ho * stride : stride, v : v + wo * stride : stride] += (
                g[:, :, :, :, u, v].transpose(0, 3, 1, 2)
            )
    return np.ascontiguousarray(gxp[:, :, pad_top : pad_top + h, pad_left : pad_left + w])


def bilinear_gather(x, ys, xs):
    """Sample x[N,C,H,W] at real coordinates (ys, xs)[N,P] -> [N,C,P].

    Four-neighbour interpolation; neighbours outside the map contribute
    zero, so fully out-of-bounds points return 0.
    """
    n, c, h, w = x.shape
    p = ys.shape[1]
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    wy1 = (ys - y0).astype(np.float32)
    wx1 = (xs - x0).astype(np.float32)
    wy0 = np.float32(1.0) - wy1
    wx0 = np.float32(1.0) - wx1
    nn = np.arange(n)[:, None]
    out = np.zeros((n, c, p), dtype=np.float32)
    for dy, wy in ((0, wy0), (1, wy1)):
        for dx, wx in ((0, wx0), (1, wx1)):
            yy = y0 + dy
            xx = x0 + dx
            ok = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            weight = (wy * wx * ok).astype(np.float32)
            # advanced indexing puts the sliced channel axis last
            vals = x[nn, :, np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
            out += vals.transpose(0, 2, 1) * weight[:, None, :]
    return out


def bilinear_scatter(g, ys, xs, h, w):
    """Gradient of bilinear_gather w.r.t. the sampled map."""
    n, c, p = g.shape
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    wy1 = (ys - y0).astype(np.float32)
    wx1 = (xs - x0).astype(np.float32)
    wy0 = np.float32(1.0) - wy1
    wx0 = np.float32(1.0) - wx1
    gx = np.zeros((n, c, h, w), dtype=np.float32)
    nn = np.arange(n)[:, None, None]
    cc = np.arange(c)[None, :, None]
    for dy, wy in ((0, wy0), (1, wy1)):
        for dx, wx in ((0, wx0), (1, wx1)):
            yy = y0 + dy
            xx = x0 + dx
            ok = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            weight = (wy * wx * ok).astype(np.float32)
            vals = g * weight[:, None, :]
            np.add.at(
                gx,
                (nn, cc, np.clip(yy, 0, h - 1)[:, None, :], np.clip(xx, 0, w - 1)[:, None, :]),
                vals,
            )
    return gx
