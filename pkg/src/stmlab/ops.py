"""Primitive tensor operations with reverse-mode VJPs.

All math is float32 (64-bit lives only in test oracles). Weight arguments
may be plain ndarrays; they are treated as constants and never receive
gradients. Reductions run in a fixed order so outputs are bit-identical
across runs.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf as _erf

from stmlab import kernels
from stmlab.tensor import ShapeError, Tensor, record

_INV_SQRT2 = np.float32(1.0 / np.sqrt(2.0))
_INV_SQRT2PI = np.float32(1.0 / np.sqrt(2.0 * np.pi))


def astensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `g` down to `shape` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return np.ascontiguousarray(g, dtype=np.float32)


# ---------------------------------------------------------------------------
# elementwise / linear algebra


def add(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    out = Tensor(a.data + b.data)
    return record(
        out,
        (a, b),
        (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(g, b.shape)),
        "add",
    )


def mul(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    out = Tensor(a.data * b.data)
    return record(
        out,
        (a, b),
        (
            lambda g: _unbroadcast(g * b.data, a.shape),
            lambda g: _unbroadcast(g * a.data, b.shape),
        ),
        "mul",
    )


def scale(a, s: float) -> Tensor:
    a = astensor(a)
    s32 = np.float32(s)
    out = Tensor(a.data * s32)
    return record(out, (a,), (lambda g: g * s32,), "scale")


def sub(a, b) -> Tensor:
    return add(a, scale(b, -1.0))


def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes.

    Leading batch axes follow numpy broadcasting; each output element is a
    single dot product accumulated in float32.
    """
    a, b = astensor(a), astensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands need rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul inner extents disagree: {a.shape} vs {b.shape}"
        )
    out = Tensor(np.matmul(a.data, b.data))

    def vjp_a(g):
        return _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)

    def vjp_b(g):
        return _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)

    return record(out, (a, b), (vjp_a, vjp_b), "matmul")


def linear(x, w, bias=None) -> Tensor:
    """Affine map over the last axis: x @ w (+ bias). w is [C_in, C_out]."""
    y = matmul(x, astensor(w))
    if bias is not None:
        y = add(y, astensor(bias))
    return y


# ---------------------------------------------------------------------------
# shape plumbing


def reshape(a, shape) -> Tensor:
    a = astensor(a)
    out = Tensor(a.data.reshape(shape))
    return record(out, (a,), (lambda g: g.reshape(a.shape),), "reshape")


def transpose(a, axes) -> Tensor:
    a = astensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = Tensor(np.ascontiguousarray(a.data.transpose(axes)))
    return record(out, (a,), (lambda g: g.transpose(inv),), "transpose")


def concat(parts, axis: int) -> Tensor:
    parts = [astensor(p) for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def make_vjp(i):
        lo, hi = bounds[i], bounds[i + 1]

        def fn(g):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            return g[tuple(sl)]

        return fn

    return record(out, tuple(parts), tuple(make_vjp(i) for i in range(len(parts))), "concat")


def slice_axis(a, axis: int, start: int, stop: int) -> Tensor:
    a = astensor(a)
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)
    out = Tensor(np.ascontiguousarray(a.data[sl]))

    def vjp(g):
        full = np.zeros(a.shape, dtype=np.float32)
        full[sl] = g
        return full

    return record(out, (a,), (vjp,), "slice_axis")


def roll2d(a, shift_y: int, shift_x: int) -> Tensor:
    """Cyclic shift of the two spatial axes of an NCHW map."""
    a = astensor(a)
    if a.ndim != 4:
        raise ShapeError("roll2d expects an NCHW map")
    out = Tensor(np.roll(a.data, (shift_y, shift_x), axis=(2, 3)))
    return record(
        out, (a,), (lambda g: np.roll(g, (-shift_y, -shift_x), axis=(2, 3)),), "roll2d"
    )


def pad2d(a, top: int, bottom: int, left: int, right: int) -> Tensor:
    """Zero-pad the spatial axes of an NCHW map."""
    a = astensor(a)
    if a.ndim != 4:
        raise ShapeError("pad2d expects an NCHW map")
    out = Tensor(np.pad(a.data, ((0, 0), (0, 0), (top, bottom), (left, right))))
    h, w = a.shape[2], a.shape[3]
    return record(
        out,
        (a,),
        (lambda g: np.ascontiguousarray(g[:, :, top : top + h, left : left + w]),),
        "pad2d",
    )


def crop2d(a, top: int, left: int, height: int, width: int) -> Tensor:
    a = astensor(a)
    if a.ndim != 4:
        raise ShapeError("crop2d expects an NCHW map")
    out = Tensor(np.ascontiguousarray(a.data[:, :, top : top + height, left : left + width]))

    def vjp(g):
        full = np.zeros(a.shape, dtype=np.float32)
        full[:, :, top : top + height, left : left + width] = g
        return full

    return record(out, (a,), (vjp,), "crop2d")


def sum_axis(a, axis: int, keepdims: bool = False) -> Tensor:
    a = astensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims, dtype=np.float32))

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, a.shape).astype(np.float32)

    return record(out, (a,), (vjp,), "sum_axis")


def mean_axes(a, axes: tuple) -> Tensor:
    """Mean over `axes` (dropped from the shape); used for global pooling."""
    a = astensor(a)
    axes = tuple(sorted(axes))
    out = Tensor(a.data.mean(axis=axes, dtype=np.float32))
    count = np.float32(np.prod([a.shape[ax] for ax in axes]))

    def vjp(g):
        gexp = g
        for ax in axes:
            gexp = np.expand_dims(gexp, ax)
        return (np.broadcast_to(gexp, a.shape) / count).astype(np.float32)

    return record(out, (a,), (vjp,), "mean_axes")


# ---------------------------------------------------------------------------
# nonlinearities and normalization


def softmax(a, axis: int = -1) -> Tensor:
    a = astensor(a)
    if not np.isfinite(a.data).all():
        raise ValueError("softmax input contains non-finite values")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted, dtype=np.float32)
    y = e / e.sum(axis=axis, keepdims=True, dtype=np.float32)
    out = Tensor(y)

    def vjp(g):
        dot = (g * y).sum(axis=axis, keepdims=True, dtype=np.float32)
        return y * (g - dot)

    return record(out, (a,), (vjp,), "softmax")


def layer_norm(a, gamma, beta, eps: float = 1e-6, axis: int = -1) -> Tensor:
    """Zero-mean/unit-variance over `axis`, then affine with gamma/beta."""
    a = astensor(a)
    gamma = np.asarray(gamma, dtype=np.float32)
    beta = np.asarray(beta, dtype=np.float32)
    dim = a.shape[axis]
    if gamma.shape != (dim,) or beta.shape != (dim,):
        raise ShapeError(
            f"layer_norm affine parameters must have shape ({dim},)"
        )
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    mu = a.data.mean(axis=axis, keepdims=True, dtype=np.float32)
    centered = a.data - mu
    var = np.mean(centered * centered, axis=axis, keepdims=True, dtype=np.float32)
    inv = 1.0 / np.sqrt(var + np.float32(eps))
    xhat = centered * inv
    shape = [1] * a.ndim
    shape[axis] = dim
    gview = gamma.reshape(shape)
    out = Tensor(xhat * gview + beta.reshape(shape))

    def vjp(g):
        gh = g * gview
        m1 = gh.mean(axis=axis, keepdims=True, dtype=np.float32)
        m2 = (gh * xhat).mean(axis=axis, keepdims=True, dtype=np.float32)
        return (gh - m1 - xhat * m2) * inv

    return record(out, (a,), (vjp,), "layer_norm")


def gelu(a) -> Tensor:
    """Exact-erf GELU: x * Phi(x)."""
    a = astensor(a)
    phi_cdf = np.float32(0.5) * (np.float32(1.0) + _erf(a.data * _INV_SQRT2))
    out = Tensor(a.data * phi_cdf)

    def vjp(g):
        pdf = _INV_SQRT2PI * np.exp(np.float32(-0.5) * a.data * a.data)
        return g * (phi_cdf + a.data * pdf)

    return record(out, (a,), (vjp,), "gelu")


# ---------------------------------------------------------------------------
# spatial kernels


def depthwise_conv2d(x, kernel, bias=None, stride: int = 1, pad: int | None = None,
                     circular: bool = False) -> Tensor:
    """Per-channel spatial correlation of an NCHW map.

    kernel is [C, k, k] with odd k; pad defaults to (k-1)/2. Padding is
    zeros, or wrap-around with `circular` (used by the translation-
    invariance harness).
    """
    x = astensor(x)
    kernel = np.asarray(kernel, dtype=np.float32)
    if x.ndim != 4 or kernel.ndim != 3:
        raise ShapeError("depthwise_conv2d expects x[N,C,H,W] and kernel[C,k,k]")
    if kernel.shape[0] != x.shape[1]:
        raise ShapeError(
            f"kernel channels {kernel.shape[0]} != input channels {x.shape[1]}"
        )
    if kernel.shape[1] != kernel.shape[2] or kernel.shape[1] % 2 == 0:
        raise ShapeError("depthwise kernels must be square with odd extent")
    k = kernel.shape[1]
    if pad is None:
        pad = (k - 1) // 2
    n, c, h, w = x.shape
    if h + 2 * pad < k or w + 2 * pad < k:
        raise ShapeError("kernel larger than padded input")
    out = Tensor(kernels.depthwise_conv2d_fwd(x.data, kernel, stride, pad, circular))
    if bias is not None:
        bias = np.asarray(bias, dtype=np.float32)
        out = Tensor(out.data + bias[None, :, None, None])

    def vjp(g):
        return kernels.depthwise_conv2d_bwd(
            np.ascontiguousarray(g), kernel, stride, pad, circular, h, w
        )

    return record(out, (x,), (vjp,), "depthwise_conv2d")


def extract_patches(x, ksize: int, stride: int, pad_top: int, pad_left: int,
                    out_hw: tuple) -> Tensor:
    """Strided k x k patch gather -> [N, Ho, Wo, C, k, k] (zeros off-map)."""
    x = astensor(x)
    if x.ndim != 4:
        raise ShapeError("extract_patches expects an NCHW map")
    ho, wo = out_hw
    n, c, h, w = x.shape
    out = Tensor(
        kernels.extract_patches_fwd(x.data, ksize, stride, pad_top, pad_left, ho, wo)
    )

    def vjp(g):
        return kernels.extract_patches_bwd(
            np.ascontiguousarray(g), ksize, stride, pad_top, pad_left, h, w
        )

    return record(out, (x,), (vjp,), "extract_patches")


def conv2d(x, weight, bias=None, stride: int = 1, pad: int = 0) -> Tensor:
    """Dense convolution (correlation) via patch gather + matmul.

    weight is [C_out, C_in, k, k]; gradients flow to x only.
    """
    x = astensor(x)
    weight = np.asarray(weight, dtype=np.float32)
    if weight.ndim != 4 or weight.shape[1] != x.shape[1]:
        raise ShapeError("conv2d weight must be [C_out, C_in, k, k] matching input")
    cout, cin, k, _ = weight.shape
    n, _, h, w = x.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError("kernel larger than padded input")
    patches = extract_patches(x, k, stride, pad, pad, (ho, wo))
    flat = reshape(patches, (n * ho * wo, cin * k * k))
    y = linear(flat, weight.reshape(cout, cin * k * k).T, bias)
    y = reshape(y, (n, ho, wo, cout))
    return transpose(y, (0, 3, 1, 2))


def bilinear_sample(x, points) -> Tensor:
    """Bilinear interpolation of x[N,C,H,W] at real (y, x) coordinates.

    `points` is [P, 2] (shared across the batch) or [N, P, 2]. Neighbours
    outside the map contribute zero; the gradient is w.r.t. x only, never
    the coordinates.
    """
    x = astensor(x)
    if x.ndim != 4:
        raise ShapeError("bilinear_sample expects an NCHW map")
    pts = np.asarray(points, dtype=np.float32)
    if not np.isfinite(pts).all():
        raise ValueError("sampling coordinates must be finite")
    if pts.ndim == 2:
        pts = np.broadcast_to(pts[None], (x.shape[0],) + pts.shape)
    if pts.ndim != 3 or pts.shape[2] != 2:
        raise ShapeError("points must be [P,2] or [N,P,2]")
    ys = np.ascontiguousarray(pts[:, :, 0])
    xs = np.ascontiguousarray(pts[:, :, 1])
    h, w = x.shape[2], x.shape[3]
    out = Tensor(kernels.bilinear_gather(x.data, ys, xs))

    def vjp(g):
        return kernels.bilinear_scatter(np.ascontiguousarray(g), ys, xs, h, w)

    return record(out, (x,), (vjp,), "bilinear_sample")


# ---------------------------------------------------------------------------
# layout helpers (compositions of taped primitives)


def map_to_tokens(x) -> Tensor:
    """[N,C,H,W] -> [N, H*W, C]."""
    n, c, h, w = x.shape
    return transpose(reshape(x, (n, c, h * w)), (0, 2, 1))


def tokens_to_map(t, h: int, w: int) -> Tensor:
    """[N, H*W, C] -> [N,C,H,W]."""
    n, _, c = t.shape
    return reshape(transpose(t, (0, 2, 1)), (n, c, h, w))


def window_partition(x, b: int) -> Tensor:
    """[N,C,H,W] -> [N, H//b, W//b, b*b, C] non-overlapping b x b windows."""
    n, c, h, w = x.shape
    if h % b or w % b:
        raise ShapeError(f"map extents {(h, w)} not divisible by window {b}")
    t = reshape(x, (n, c, h // b, b, w // b, b))
    t = transpose(t, (0, 2, 4, 3, 5, 1))
    return reshape(t, (n, h // b, w // b, b * b, c))


def window_merge(wins, b: int, h: int, w: int) -> Tensor:
    """Inverse of window_partition."""
    n = wins.shape[0]
    c = wins.shape[-1]
    t = reshape(wins, (n, h // b, w // b, b, b, c))
    t = transpose(t, (0, 5, 1, 3, 2, 4))
    return reshape(t, (n, c, h, w))
