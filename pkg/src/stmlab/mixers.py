"""The five spatial token mixers and the halo ablation variants.

Every mixer maps an NCHW feature map to a same-shape map: project, gather
spatial context per pixel (statically, by windows, or by learned sampling
points), aggregate with weights that sum to one per query, then apply the
output projection. Maps whose extents do not divide the window size are
zero-padded bottom/right and the output is cropped back.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from stmlab import ops
from stmlab.tensor import ShapeError, Tensor

MASK_NEG = np.float32(-1e9)


class StmKind(str, enum.Enum):
    HALO = "halo"
    SWIN = "swin"
    SR = "sr"
    DWCONV = "dwconv"
    DCNV3 = "dcnv3"


class HaloVariant(str, enum.Enum):
    STANDARD = "standard"
    SWITCH = "switch"
    ONE_PIXEL = "onepixel"
    SHIFTED_QUERY = "shiftedquery"


@dataclass(frozen=True)
class StmParams:
    """Geometry of one mixer instance (weights live separately)."""

    heads: int
    window_size: int = 7
    halo_size: int = 3
    shift_size: int | None = None  # swin only; defaults to window_size // 2
    sr_ratio: int = 1
    dcn_groups: int = 1
    dcn_points: int = 9
    offset_scale: float = 1.0
    halo_variant: HaloVariant = HaloVariant.STANDARD

    def qk_scale(self, channels: int) -> float:
        return 1.0 / math.sqrt(channels // self.heads)


# ---------------------------------------------------------------------------
# weight containers (field order fixes the checkpoint enumeration order)


@dataclass
class WindowAttnWeights:
    """Shared shape for halo and shifted-window attention."""

    qkv_w: np.ndarray  # [C, 3C]
    qkv_b: np.ndarray
    proj_w: np.ndarray  # [C, C]
    proj_b: np.ndarray
    pos_table: np.ndarray  # [(q_side + k_side - 1)^2, heads]


@dataclass
class SrAttnWeights:
    q_w: np.ndarray
    q_b: np.ndarray
    kv_w: np.ndarray  # [C, 2C]
    kv_b: np.ndarray
    proj_w: np.ndarray
    proj_b: np.ndarray
    sr_w: np.ndarray | None = None  # [C, C, sr, sr] when sr_ratio > 1
    sr_b: np.ndarray | None = None
    sr_norm_g: np.ndarray | None = None
    sr_norm_b: np.ndarray | None = None


@dataclass
class DwConvWeights:
    pin_w: np.ndarray
    pin_b: np.ndarray
    dw_k: np.ndarray  # [C, 7, 7]
    dw_b: np.ndarray
    pout_w: np.ndarray
    pout_b: np.ndarray


@dataclass
class DwCoreWeights:
    """Bare depthwise kernel, used inside single-residual (D/E) blocks."""

    dw_k: np.ndarray
    dw_b: np.ndarray


@dataclass
class DcnWeights:
    value_w: np.ndarray
    value_b: np.ndarray
    gen_dw: np.ndarray  # [C, 3, 3]
    gen_dw_b: np.ndarray
    offset_w: np.ndarray  # [C, G*K*2], zero-initialized
    offset_b: np.ndarray
    mask_w: np.ndarray  # [C, G*K], zero-initialized
    mask_b: np.ndarray
    proj_w: np.ndarray
    proj_b: np.ndarray


# ---------------------------------------------------------------------------
# multi-head attention core


def mha_core(q, k, v, heads: int, bias=None, scale: float | None = None) -> Tensor:
    """Scaled dot-product attention over the last two axes.

    q is [..., T_q, C]; k and v are [..., T_k, C]. `bias` is an optional
    additive logit term broadcastable to [..., heads, T_q, T_k]. Heads are
    split from C, attended independently, and re-concatenated; the output
    projection belongs to the caller.
    """
    c = q.shape[-1]
    if c % heads:
        raise ShapeError(f"channels {c} not divisible by heads {heads}")
    if k.shape[-1] != c or v.shape[-1] != c or k.shape[-2] != v.shape[-2]:
        raise ShapeError("k/v shapes disagree with q")
    hd = c // heads
    if scale is None:
        scale = 1.0 / math.sqrt(hd)
    lead = q.ndim - 2

    def split_heads(t):
        tq = t.shape[-2]
        t = ops.reshape(t, t.shape[:-1] + (heads, hd))
        axes = tuple(range(lead)) + (lead + 1, lead, lead + 2)
        return ops.transpose(t, axes)  # [..., heads, T, hd]

    qh = split_heads(ops.scale(q, scale))
    kh = split_heads(k)
    vh = split_heads(v)
    kt = ops.transpose(kh, tuple(range(lead + 1)) + (lead + 2, lead + 1))
    logits = ops.matmul(qh, kt)  # [..., heads, T_q, T_k]
    if bias is not None:
        logits = ops.add(logits, ops.astensor(bias))
    attn = ops.softmax(logits, axis=-1)
    oh = ops.matmul(attn, vh)  # [..., heads, T_q, hd]
    axes = tuple(range(lead)) + (lead + 1, lead, lead + 2)
    o = ops.transpose(oh, axes)
    return ops.reshape(o, o.shape[:-2] + (c,))


def relative_bias_index(q_side: int, k_side: int) -> np.ndarray:
    """Flat table index per (query cell, key cell) pair: [q_side^2, k_side^2].

    Covers every axis-wise displacement between a q_side x q_side query grid
    and a k_side x k_side key grid; the table side is q_side + k_side - 1.
    """
    side = q_side + k_side - 1
    qi, qj = np.divmod(np.arange(q_side * q_side), q_side)
    ki, kj = np.divmod(np.arange(k_side * k_side), k_side)
    rel_y = qi[:, None] - ki[None, :] + (k_side - 1)
    rel_x = qj[:, None] - kj[None, :] + (k_side - 1)
    return rel_y * side + rel_x


def _gather_bias(table: np.ndarray, q_side: int, k_side: int) -> np.ndarray:
    """[heads, q_side^2, k_side^2] additive logit bias from a learned table."""
    idx = relative_bias_index(q_side, k_side)
    return np.ascontiguousarray(table[idx].transpose(2, 0, 1))


# ---------------------------------------------------------------------------
# layout helpers


def _pad_to_multiple(m, b: int):
    n, c, h, w = m.shape
    hp = -(-h // b) * b
    wp = -(-w // b) * b
    if (hp, wp) != (h, w):
        m = ops.pad2d(m, 0, hp - h, 0, wp - w)
    return m, hp, wp


def _project_tokens(x, w, b):
    """1x1 projection of an NCHW map, returned as a map again."""
    n, c, h, wd = x.shape
    t = ops.linear(ops.map_to_tokens(x), w, b)
    return ops.tokens_to_map(t, h, wd)


def _patches_to_keys(patches, ksize: int):
    """[N,nH,nW,C,k,k] -> [N,nH,nW,k*k,C]."""
    n, nh, nw, c = patches.shape[:4]
    p = ops.reshape(patches, (n, nh, nw, c, ksize * ksize))
    return ops.transpose(p, (0, 1, 2, 4, 3))


# ---------------------------------------------------------------------------
# the five mixers


def dwconv_mixer(x, w: DwConvWeights) -> Tensor:
    """Linear in-projection, 7x7 depthwise convolution, linear out-projection."""
    n, c, h, wd = x.shape
    if w.pin_w.shape[0] != c:
        raise ShapeError("dwconv_mixer channel mismatch")
    m = _project_tokens(x, w.pin_w, w.pin_b)
    k = w.dw_k.shape[1]
    m = ops.depthwise_conv2d(m, w.dw_k, w.dw_b, stride=1, pad=(k - 1) // 2)
    return _project_tokens(m, w.pout_w, w.pout_b)


def halo_attention(x, w: WindowAttnWeights, params: StmParams,
                   halo: int | None = None, zero_bias: bool = False) -> Tensor:
    """Block-local attention with a halo band of extra keys around each block.

    Queries come from non-overlapping b x b blocks; keys/values from the
    (b+2h) x (b+2h) neighbourhood (zero-padded at borders). The
    shifted-query variant anchors the query block at the top-left of the
    enlarged window instead of its centre.
    """
    b = params.window_size
    if b < 1:
        raise ShapeError("window size must be >= 1")
    h = params.halo_size if halo is None else halo
    shifted_query = params.halo_variant is HaloVariant.SHIFTED_QUERY
    n, c, hh, ww = x.shape
    heads = params.heads
    if c % heads:
        raise ShapeError(f"channels {c} not divisible by heads {heads}")

    qkv = _project_tokens(x, w.qkv_w, w.qkv_b)  # [N,3C,H,W]
    q_map = ops.slice_axis(qkv, 1, 0, c)
    k_map = ops.slice_axis(qkv, 1, c, 2 * c)
    v_map = ops.slice_axis(qkv, 1, 2 * c, 3 * c)

    q_map, hp, wp = _pad_to_multiple(q_map, b)
    k_map, _, _ = _pad_to_multiple(k_map, b)
    v_map, _, _ = _pad_to_multiple(v_map, b)
    nh, nw = hp // b, wp // b

    ksize = b + 2 * h
    pad = 0 if shifted_query else h
    q_win = ops.window_partition(q_map, b)  # [N,nH,nW,b^2,C]
    k_win = _patches_to_keys(ops.extract_patches(k_map, ksize, b, pad, pad, (nh, nw)), ksize)
    v_win = _patches_to_keys(ops.extract_patches(v_map, ksize, b, pad, pad, (nh, nw)), ksize)

    bias = None if zero_bias else _gather_bias(w.pos_table, b, ksize)
    o_win = mha_core(q_win, k_win, v_win, heads, bias, params.qk_scale(c))
    o = ops.window_merge(o_win, b, hp, wp)
    if (hp, wp) != (hh, ww):
        o = ops.crop2d(o, 0, 0, hh, ww)
    return _project_tokens(o, w.proj_w, w.proj_b)


def swin_mask(hp: int, wp: int, b: int, shift: int) -> np.ndarray:
    """Additive attention mask for a cyclically shifted window partition.

    Tokens wrapped in from the opposite border get a -1e9 logit against
    tokens from a different region: [nH, nW, 1, b^2, b^2].
    """
    img = np.zeros((hp, wp), dtype=np.int64)
    cnt = 0
    for hs in (slice(0, hp - b), slice(hp - b, hp - shift), slice(hp - shift, hp)):
        for ws in (slice(0, wp - b), slice(wp - b, wp - shift), slice(wp - shift, wp)):
            img[hs, ws] = cnt
            cnt += 1
    nh, nw = hp // b, wp // b
    ids = img.reshape(nh, b, nw, b).transpose(0, 2, 1, 3).reshape(nh, nw, b * b)
    diff = ids[:, :, :, None] != ids[:, :, None, :]
    return np.where(diff, MASK_NEG, np.float32(0.0))[:, :, None, :, :]


def swin_attention(x, w: WindowAttnWeights, params: StmParams,
                   shifted: bool, zero_bias: bool = False) -> Tensor:
    """Window attention with an optional half-window cyclic shift.

    When shifted, the map is rolled by (-b//2, -b//2) before partitioning
    and the wrap seams are masked so opposite borders never attend to each
    other; the roll is undone afterwards.
    """
    b = params.window_size
    if b < 1:
        raise ShapeError("window size must be >= 1")
    n, c, hh, ww = x.shape
    heads = params.heads
    if c % heads:
        raise ShapeError(f"channels {c} not divisible by heads {heads}")

    qkv = _project_tokens(x, w.qkv_w, w.qkv_b)
    q_map = ops.slice_axis(qkv, 1, 0, c)
    k_map = ops.slice_axis(qkv, 1, c, 2 * c)
    v_map = ops.slice_axis(qkv, 1, 2 * c, 3 * c)

    q_map, hp, wp = _pad_to_multiple(q_map, b)
    k_map, _, _ = _pad_to_multiple(k_map, b)
    v_map, _, _ = _pad_to_multiple(v_map, b)

    shift = params.shift_size if params.shift_size is not None else b // 2
    # a window covering the whole (padded) map has nothing to shift across
    if not shifted or shift == 0 or min(hp, wp) <= b:
        shift = 0
    if shift:
        q_map = ops.roll2d(q_map, -shift, -shift)
        k_map = ops.roll2d(k_map, -shift, -shift)
        v_map = ops.roll2d(v_map, -shift, -shift)

    q_win = ops.window_partition(q_map, b)
    k_win = ops.window_partition(k_map, b)
    v_win = ops.window_partition(v_map, b)

    bias = None if zero_bias else _gather_bias(w.pos_table, b, b)
    if shift:
        mask = swin_mask(hp, wp, b, shift)
        bias = mask if bias is None else bias[None, None] + mask
    o_win = mha_core(q_win, k_win, v_win, heads, bias, params.qk_scale(c))
    o = ops.window_merge(o_win, b, hp, wp)
    if shift:
        o = ops.roll2d(o, shift, shift)
    if (hp, wp) != (hh, ww):
        o = ops.crop2d(o, 0, 0, hh, ww)
    return _project_tokens(o, w.proj_w, w.proj_b)


def sr_attention(x, w: SrAttnWeights, params: StmParams) -> Tensor:
    """Global attention whose keys/values come from a strided-conv-reduced map.

    Queries stay at full resolution; with sr_ratio == 1 the reduction (and
    its normalization) vanishes and this is vanilla global attention.
    """
    sr = params.sr_ratio
    n, c, hh, ww = x.shape
    if sr < 1:
        raise ShapeError("sr_ratio must be >= 1")
    if hh % sr or ww % sr:
        raise ShapeError(f"sr_ratio {sr} does not divide map extents {(hh, ww)}")
    t = ops.map_to_tokens(x)
    q = ops.linear(t, w.q_w, w.q_b)
    if sr > 1:
        xr = ops.conv2d(x, w.sr_w, w.sr_b, stride=sr, pad=0)
        tr = ops.layer_norm(ops.map_to_tokens(xr), w.sr_norm_g, w.sr_norm_b)
        kv = ops.linear(tr, w.kv_w, w.kv_b)
    else:
        kv = ops.linear(t, w.kv_w, w.kv_b)
    k = ops.slice_axis(kv, 2, 0, c)
    v = ops.slice_axis(kv, 2, c, 2 * c)
    o = mha_core(q, k, v, params.heads, None, params.qk_scale(c))
    o = ops.linear(o, w.proj_w, w.proj_b)
    return ops.tokens_to_map(o, hh, ww)


_DCN_GRID = np.array(
    [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)], dtype=np.float32
)  # [9, 2], row-major around the centre


def dcnv3_mixer(x, w: DcnWeights, params: StmParams) -> Tensor:
    """Deformable aggregation of 9 sampled points per pixel per group.

    A 3x3 depthwise conv + linear heads generate per-pixel offsets (added
    to the unit 3x3 grid) and modulation logits; logits are softmaxed over
    the 9 points and used to blend bilinearly sampled values. Offsets are
    a constant path: gradients flow through values and modulation only,
    never through sampling coordinates.
    """
    n, c, hh, ww = x.shape
    g = params.dcn_groups
    kpts = params.dcn_points
    if kpts != _DCN_GRID.shape[0]:
        raise ShapeError("only the 9-point (3x3) sampling grid is supported")
    if c % g:
        raise ShapeError(f"channels {c} not divisible by groups {g}")
    cg = c // g
    t = ops.map_to_tokens(x)
    value = ops.linear(t, w.value_w, w.value_b)

    gen = ops.depthwise_conv2d(x, w.gen_dw, w.gen_dw_b, stride=1, pad=1)
    gen_t = ops.map_to_tokens(gen)  # [N, HW, C]
    logits = ops.linear(gen_t, w.mask_w, w.mask_b)  # [N, HW, G*K]

    # offsets are generated off-tape: sampling positions carry no gradient
    off = gen_t.data @ w.offset_w + w.offset_b
    if not np.isfinite(off).all():
        raise ValueError("dcnv3 offsets are not finite")
    off = off.reshape(n, hh * ww, g, kpts, 2) * np.float32(params.offset_scale)

    yy, xx = np.divmod(np.arange(hh * ww, dtype=np.float32), np.float32(ww))
    base = np.stack([yy, xx], axis=-1)  # [HW, 2]
    coords = base[None, :, None, None, :] + _DCN_GRID[None, None, None, :, :] + off
    coords = np.ascontiguousarray(
        coords.transpose(0, 2, 1, 3, 4).reshape(n * g, hh * ww * kpts, 2),
        dtype=np.float32,
    )

    v_map = ops.tokens_to_map(value, hh, ww)
    v_grp = ops.reshape(v_map, (n * g, cg, hh, ww))
    sampled = ops.bilinear_sample(v_grp, coords)  # [N*G, Cg, HW*K]
    sampled = ops.reshape(sampled, (n, g, cg, hh * ww, kpts))

    wts = ops.softmax(ops.reshape(logits, (n, hh * ww, g, kpts)), axis=-1)
    wts = ops.transpose(wts, (0, 2, 1, 3))  # [N, G, HW, K]
    wts = ops.reshape(wts, (n, g, 1, hh * ww, kpts))
    agg = ops.sum_axis(ops.mul(sampled, wts), axis=4)  # [N, G, Cg, HW]
    agg = ops.reshape(agg, (n, c, hh * ww))
    out = ops.linear(ops.transpose(agg, (0, 2, 1)), w.proj_w, w.proj_b)
    return ops.tokens_to_map(out, hh, ww)
