"""Independent brute-force reference implementations.

Everything here recomputes results with explicit loops and 64-bit floats,
deliberately sharing no code with the production path: these are the other
side of every dual-route check (fast kernel vs oracle, analytic VJP vs
finite differences). Sizes are expected to be small.
"""

from __future__ import annotations

import math

import numpy as np

from stmlab.mixers import (
    DcnWeights,
    DwConvWeights,
    HaloVariant,
    SrAttnWeights,
    StmParams,
    WindowAttnWeights,
)


def matmul_loops(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Triple-loop matrix product, accumulated in float64."""
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n), dtype=np.float64)
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += float(a[i, t]) * float(b[t, j])
            out[i, j] = acc
    return out


def softmax64(x: np.ndarray, axis: int = -1) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def layer_norm64(x: np.ndarray, gamma, beta, eps: float = 1e-6,
                 axis: int = -1) -> np.ndarray:
    """Two-pass mean/variance normalization in float64."""
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=axis, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=axis, keepdims=True)
    shape = [1] * x.ndim
    shape[axis] = x.shape[axis]
    g = np.asarray(gamma, dtype=np.float64).reshape(shape)
    b = np.asarray(beta, dtype=np.float64).reshape(shape)
    return (x - mu) / np.sqrt(var + eps) * g + b


def gelu64(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.array(
        [0.5 * v * (1.0 + math.erf(v / math.sqrt(2.0))) for v in x.reshape(-1)]
    ).reshape(x.shape)


def dwconv_loops(x: np.ndarray, k: np.ndarray, bias=None, stride: int = 1,
                 pad: int | None = None, circular: bool = False) -> np.ndarray:
    """Sliding-window depthwise correlation in float64."""
    n, c, h, w = x.shape
    ks = k.shape[1]
    if pad is None:
        pad = (ks - 1) // 2
    ho = (h + 2 * pad - ks) // stride + 1
    wo = (w + 2 * pad - ks) // stride + 1
    out = np.zeros((n, c, ho, wo), dtype=np.float64)
    for b_ in range(n):
        for ch in range(c):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for u in range(ks):
                        for v in range(ks):
                            row = i * stride - pad + u
                            col = j * stride - pad + v
                            if circular:
                                row %= h
                                col %= w
                            elif not (0 <= row < h and 0 <= col < w):
                                continue
                            acc += float(x[b_, ch, row, col]) * float(k[ch, u, v])
                    out[b_, ch, i, j] = acc
    if bias is not None:
        out = out + np.asarray(bias, dtype=np.float64)[None, :, None, None]
    return out


def conv2d_loops(x: np.ndarray, w: np.ndarray, bias=None, stride: int = 1,
                 pad: int = 0) -> np.ndarray:
    """Dense convolution (correlation) in float64."""
    n, cin, h, wd = x.shape
    cout, _, ks, _ = w.shape
    ho = (h + 2 * pad - ks) // stride + 1
    wo = (wd + 2 * pad - ks) // stride + 1
    out = np.zeros((n, cout, ho, wo), dtype=np.float64)
    for b_ in range(n):
        for co in range(cout):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ci in range(cin):
                        for u in range(ks):
                            for v in range(ks):
                                row = i * stride - pad + u
                                col = j * stride - pad + v
                                if 0 <= row < h and 0 <= col < wd:
                                    acc += float(x[b_, ci, row, col]) * float(w[co, ci, u, v])
                    out[b_, co, i, j] = acc
    if bias is not None:
        out = out + np.asarray(bias, dtype=np.float64)[None, :, None, None]
    return out


def bilinear_formula(x: np.ndarray, points) -> np.ndarray:
    """Direct four-neighbour interpolation; [N, C, P]."""
    n, c, h, w = x.shape
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 2:
        pts = np.broadcast_to(pts[None], (n,) + pts.shape)
    p = pts.shape[1]
    out = np.zeros((n, c, p), dtype=np.float64)

    def pixel(b_, ch, yy, xx):
        if 0 <= yy < h and 0 <= xx < w:
            return float(x[b_, ch, yy, xx])
        return 0.0

    for b_ in range(n):
        for i in range(p):
            y, xc = float(pts[b_, i, 0]), float(pts[b_, i, 1])
            y0, x0 = math.floor(y), math.floor(xc)
            fy, fx = y - y0, xc - x0
            for ch in range(c):
                out[b_, ch, i] = (
                    pixel(b_, ch, y0, x0) * (1 - fy) * (1 - fx)
                    + pixel(b_, ch, y0, x0 + 1) * (1 - fy) * fx
                    + pixel(b_, ch, y0 + 1, x0) * fy * (1 - fx)
                    + pixel(b_, ch, y0 + 1, x0 + 1) * fy * fx
                )
    return out


def attention_loops(q: np.ndarray, k: np.ndarray, v: np.ndarray, heads: int,
                    bias=None, scale: float | None = None) -> np.ndarray:
    """Dense nested-loop multi-head attention; q[Tq,C], k/v[Tk,C]."""
    tq, c = q.shape
    tk = k.shape[0]
    hd = c // heads
    if scale is None:
        scale = 1.0 / math.sqrt(hd)
    out = np.zeros((tq, c), dtype=np.float64)
    for hh in range(heads):
        sl = slice(hh * hd, (hh + 1) * hd)
        logits = np.zeros((tq, tk), dtype=np.float64)
        for i in range(tq):
            for j in range(tk):
                acc = 0.0
                for d in range(hd):
                    acc += float(q[i, sl][d]) * float(k[j, sl][d])
                logits[i, j] = acc * scale
                if bias is not None:
                    logits[i, j] += float(bias[hh, i, j])
        w = softmax64(logits, axis=-1)
        for i in range(tq):
            for d in range(hd):
                acc = 0.0
                for j in range(tk):
                    acc += w[i, j] * float(v[j, sl][d])
                out[i, hh * hd + d] = acc
    return out


def _project(tokens: np.ndarray, w, b) -> np.ndarray:
    return tokens @ np.asarray(w, dtype=np.float64) + np.asarray(b, dtype=np.float64)


def _qkv_maps(x: np.ndarray, w: WindowAttnWeights):
    n, c, h, wd = x.shape
    tokens = x.astype(np.float64).reshape(n, c, h * wd).transpose(0, 2, 1)
    qkv = _project(tokens, w.qkv_w, w.qkv_b)
    return qkv[:, :, :c], qkv[:, :, c : 2 * c], qkv[:, :, 2 * c :]


def halo_oracle(x: np.ndarray, w: WindowAttnWeights, params: StmParams,
                halo: int | None = None, zero_bias: bool = False) -> np.ndarray:
    """Per-block dense attention with explicitly materialized halo windows."""
    b = params.window_size
    h = params.halo_size if halo is None else halo
    shifted_query = params.halo_variant is HaloVariant.SHIFTED_QUERY
    n, c, hh, ww = x.shape
    heads = params.heads
    ksize = b + 2 * h
    origin = 0 if shifted_query else -h
    q_t, k_t, v_t = _qkv_maps(x, w)
    hp = math.ceil(hh / b) * b
    wp = math.ceil(ww / b) * b

    def token(t, bi, row, col):
        if 0 <= row < hh and 0 <= col < ww:
            return t[bi, row * ww + col]
        return np.zeros(c, dtype=np.float64)

    side = b + ksize - 1
    out = np.zeros((n, hh * ww, c), dtype=np.float64)
    for bi in range(n):
        for by in range(hp // b):
            for bx in range(wp // b):
                qs, ks_, vs, qpos, kpos = [], [], [], [], []
                for qi in range(b):
                    for qj in range(b):
                        qs.append(token(q_t, bi, by * b + qi, bx * b + qj))
                        qpos.append((qi, qj))
                for ki in range(ksize):
                    for kj in range(ksize):
                        ks_.append(token(k_t, bi, by * b + origin + ki, bx * b + origin + kj))
                        vs.append(token(v_t, bi, by * b + origin + ki, bx * b + origin + kj))
                        kpos.append((ki, kj))
                bias = None
                if not zero_bias:
                    bias = np.zeros((heads, b * b, ksize * ksize), dtype=np.float64)
                    for i, (qi, qj) in enumerate(qpos):
                        for j, (ki, kj) in enumerate(kpos):
                            idx = (qi - ki + ksize - 1) * side + (qj - kj + ksize - 1)
                            bias[:, i, j] = w.pos_table[idx]
                o = attention_loops(
                    np.array(qs), np.array(ks_), np.array(vs), heads, bias,
                    params.qk_scale(c),
                )
                for i, (qi, qj) in enumerate(qpos):
                    row, col = by * b + qi, bx * b + qj
                    if row < hh and col < ww:
                        out[bi, row * ww + col] = o[i]
    out = _project(out, w.proj_w, w.proj_b)
    return out.transpose(0, 2, 1).reshape(n, c, hh, ww)


def swin_oracle(x: np.ndarray, w: WindowAttnWeights, params: StmParams,
                shifted: bool, zero_bias: bool = False) -> np.ndarray:
    """Shifted-window attention with the partition and mask built explicitly."""
    b = params.window_size
    n, c, hh, ww = x.shape
    heads = params.heads
    q_t, k_t, v_t = _qkv_maps(x, w)
    hp = math.ceil(hh / b) * b
    wp = math.ceil(ww / b) * b
    shift = params.shift_size if params.shift_size is not None else b // 2
    if not shifted or min(hp, wp) <= b:
        shift = 0

    def padded(t):
        m = np.zeros((n, hp, wp, c), dtype=np.float64)
        m[:, :hh, :ww] = t.reshape(n, hh, ww, c)
        return m

    qm, km, vm = padded(q_t), padded(k_t), padded(v_t)
    region = np.zeros((hp, wp), dtype=np.int64)
    if shift:
        qm = np.roll(qm, (-shift, -shift), axis=(1, 2))
        km = np.roll(km, (-shift, -shift), axis=(1, 2))
        vm = np.roll(vm, (-shift, -shift), axis=(1, 2))
        cnt = 0
        for hs in (slice(0, hp - b), slice(hp - b, hp - shift), slice(hp - shift, hp)):
            for ws in (slice(0, wp - b), slice(wp - b, wp - shift), slice(wp - shift, wp)):
                region[hs, ws] = cnt
                cnt += 1

    side = 2 * b - 1
    om = np.zeros((n, hp, wp, c), dtype=np.float64)
    for bi in range(n):
        for by in range(hp // b):
            for bx in range(wp // b):
                sl = (bi, slice(by * b, (by + 1) * b), slice(bx * b, (bx + 1) * b))
                qs = qm[sl].reshape(b * b, c)
                ks_ = km[sl].reshape(b * b, c)
                vs = vm[sl].reshape(b * b, c)
                ids = region[sl[1], sl[2]].reshape(b * b)
                bias = np.zeros((heads, b * b, b * b), dtype=np.float64)
                for i in range(b * b):
                    qi, qj = divmod(i, b)
                    for j in range(b * b):
                        ki, kj = divmod(j, b)
                        if not zero_bias:
                            idx = (qi - ki + b - 1) * side + (qj - kj + b - 1)
                            bias[:, i, j] += w.pos_table[idx]
                        if ids[i] != ids[j]:
                            bias[:, i, j] += -1e9
                o = attention_loops(qs, ks_, vs, heads, bias, params.qk_scale(c))
                om[sl] = o.reshape(b, b, c)
    if shift:
        om = np.roll(om, (shift, shift), axis=(1, 2))
    out = _project(om[:, :hh, :ww].reshape(n, hh * ww, c), w.proj_w, w.proj_b)
    return out.transpose(0, 2, 1).reshape(n, c, hh, ww)


def sr_oracle(x: np.ndarray, w: SrAttnWeights, params: StmParams) -> np.ndarray:
    """Spatial-reduction attention from step-by-step numpy primitives."""
    sr = params.sr_ratio
    n, c, hh, ww = x.shape
    tokens = x.astype(np.float64).reshape(n, c, hh * ww).transpose(0, 2, 1)
    q = _project(tokens, w.q_w, w.q_b)
    if sr > 1:
        red = conv2d_loops(x, w.sr_w, w.sr_b, stride=sr, pad=0)
        rt = red.reshape(n, c, -1).transpose(0, 2, 1)
        rt = layer_norm64(rt, w.sr_norm_g, w.sr_norm_b)
        kv = _project(rt, w.kv_w, w.kv_b)
    else:
        kv = _project(tokens, w.kv_w, w.kv_b)
    out = np.zeros_like(q)
    for bi in range(n):
        out[bi] = attention_loops(
            q[bi], kv[bi, :, :c], kv[bi, :, c:], params.heads, None, params.qk_scale(c)
        )
    out = _project(out, w.proj_w, w.proj_b)
    return out.transpose(0, 2, 1).reshape(n, c, hh, ww)


def dwconv_mixer_oracle(x: np.ndarray, w: DwConvWeights) -> np.ndarray:
    """in-projection -> depthwise conv -> out-projection, all in float64."""
    n, c, hh, ww = x.shape
    tokens = x.astype(np.float64).reshape(n, c, hh * ww).transpose(0, 2, 1)
    t = _project(tokens, w.pin_w, w.pin_b)
    m = t.transpose(0, 2, 1).reshape(n, c, hh, ww)
    m = dwconv_loops(m, w.dw_k, w.dw_b)
    t = m.reshape(n, c, hh * ww).transpose(0, 2, 1)
    t = _project(t, w.pout_w, w.pout_b)
    return t.transpose(0, 2, 1).reshape(n, c, hh, ww)


def dcnv3_oracle(x: np.ndarray, w: DcnWeights, params: StmParams) -> np.ndarray:
    """Per-pixel loop over groups and sampling points."""
    n, c, hh, ww = x.shape
    g = params.dcn_groups
    kpts = params.dcn_points
    cg = c // g
    grid = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)]
    tokens = x.astype(np.float64).reshape(n, c, hh * ww).transpose(0, 2, 1)
    value = _project(tokens, w.value_w, w.value_b)
    v_map = value.transpose(0, 2, 1).reshape(n, c, hh, ww)
    gen = dwconv_loops(x, w.gen_dw, w.gen_dw_b, pad=1)
    gen_t = gen.reshape(n, c, hh * ww).transpose(0, 2, 1)
    offs = _project(gen_t, w.offset_w, w.offset_b).reshape(n, hh * ww, g, kpts, 2)
    offs = offs * params.offset_scale
    logits = _project(gen_t, w.mask_w, w.mask_b).reshape(n, hh * ww, g, kpts)

    out = np.zeros((n, hh * ww, c), dtype=np.float64)
    for bi in range(n):
        for p in range(hh * ww):
            py, px = divmod(p, ww)
            for gi in range(g):
                wts = softmax64(logits[bi, p, gi])
                acc = np.zeros(cg, dtype=np.float64)
                for kk in range(kpts):
                    cy = py + grid[kk][0] + offs[bi, p, gi, kk, 0]
                    cx = px + grid[kk][1] + offs[bi, p, gi, kk, 1]
                    sample = bilinear_formula(
                        v_map[bi : bi + 1, gi * cg : (gi + 1) * cg], [(cy, cx)]
                    )[0, :, 0]
                    acc += wts[kk] * sample
                out[bi, p, gi * cg : (gi + 1) * cg] = acc
    out = _project(out, w.proj_w, w.proj_b)
    return out.transpose(0, 2, 1).reshape(n, c, hh, ww)


def fd_input_gradient(f, x0: np.ndarray, seed: np.ndarray,
                      step: float = 1e-3) -> np.ndarray:
    """Central finite differences of sum(seed * f(x)) w.r.t. every entry of x."""
    x0 = np.asarray(x0, dtype=np.float32)
    seed64 = np.asarray(seed, dtype=np.float64)
    grad = np.zeros(x0.size, dtype=np.float64)
    flat = x0.reshape(-1)
    for i in range(flat.size):
        xp = flat.copy()
        xp[i] += np.float32(step)
        xm = flat.copy()
        xm[i] -= np.float32(step)
        fp = (np.asarray(f(xp.reshape(x0.shape)), dtype=np.float64) * seed64).sum()
        fm = (np.asarray(f(xm.reshape(x0.shape)), dtype=np.float64) * seed64).sum()
        grad[i] = (fp - fm) / (2.0 * step)
    return grad.reshape(x0.shape)


def relative_error(got: np.ndarray, want: np.ndarray) -> float:
    """Norm-relative deviation used by the gradient checks."""
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    denom = np.linalg.norm(want)
    if denom == 0.0:
        return float(np.linalg.norm(got))
    return float(np.linalg.norm(got - want) / denom)
