"""Four-stage backbone hosting any spatial token mixer.

Stage layout: overlapped stem (two 3x3 stride-2 convs), four block stages
with 3x3 stride-2 transitions between them, global-average-pool head.
Architecture variants:

    A  transformer-style blocks, LN after every stage (stage 3's LN feeds
       the pooled head)
    B  like A but the head-side LN moves after the pooling
    C  like B with the per-stage LNs removed
    D  like A with single-residual (ConvNeXt-style) blocks
    E  like C with single-residual blocks

Models are immutable after build; forwards are pure and thread-safe.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from scipy.special import erf, erfinv

from stmlab import mixers, ops
from stmlab.mixers import (
    DcnWeights,
    DwConvWeights,
    DwCoreWeights,
    HaloVariant,
    SrAttnWeights,
    StmKind,
    StmParams,
    WindowAttnWeights,
)
from stmlab.tensor import ShapeError, Tensor

VARIANTS = ("A", "B", "C", "D", "E")


class ConfigError(ValueError):
    """Model configuration violates a structural constraint."""


@dataclass(frozen=True)
class ModelConfig:
    """Complete recipe for one backbone instance."""

    stm: StmKind
    depths: tuple[int, int, int, int]
    widths: tuple[int, int, int, int]
    heads: tuple[int, int, int, int]
    variant: str = "A"
    mlp_ratio: float = 4.0
    layer_scale_init: float = 1e-6
    num_classes: int = 1000
    input_size: int = 224
    window_size: int = 7
    halo_size: int = 3
    halo_variant: HaloVariant = HaloVariant.STANDARD
    halo_switch_skips_block: bool = False
    sr_ratios: tuple[int, int, int, int] = (8, 4, 2, 1)
    dcn_group_channels: int = 16
    drop_path: float = 0.0  # accepted for recipe parity; identity at inference
    norm_mean: tuple[float, float, float] = (0.485, 0.456, 0.406)
    norm_std: tuple[float, float, float] = (0.229, 0.224, 0.225)

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not (len(self.depths) == len(self.widths) == len(self.heads) == 4):
            raise ConfigError("depths/widths/heads must all have four entries")
        for s in range(4):
            if self.depths[s] < 1 or self.widths[s] < 1 or self.heads[s] < 1:
                raise ConfigError("depths/widths/heads must be positive")
            if self.widths[s] % self.heads[s]:
                raise ConfigError(
                    f"stage {s}: width {self.widths[s]} not divisible by heads {self.heads[s]}"
                )
            if self.stm is StmKind.DCNV3 and self.widths[s] % self.dcn_group_channels:
                raise ConfigError(
                    f"stage {s}: width {self.widths[s]} not divisible by "
                    f"group channels {self.dcn_group_channels}"
                )
        if self.stm is StmKind.SR and len(self.sr_ratios) != 4:
            raise ConfigError("sr_ratios must have four entries")
        if self.mlp_ratio <= 0:
            raise ConfigError("mlp_ratio must be positive")

    def stm_params(self, stage: int) -> StmParams:
        return StmParams(
            heads=self.heads[stage],
            window_size=self.window_size,
            halo_size=self.halo_size,
            sr_ratio=self.sr_ratios[stage],
            dcn_groups=max(1, self.widths[stage] // self.dcn_group_channels),
            halo_variant=self.halo_variant,
        )

    def halo_for_block(self, block_idx: int) -> int:
        """Effective halo per block (the switch variant alternates it off)."""
        if self.halo_variant is HaloVariant.ONE_PIXEL:
            return 1
        if (
            self.halo_variant is HaloVariant.SWITCH
            and not self.halo_switch_skips_block
            and block_idx % 2 == 0
        ):
            return 0
        return self.halo_size

    def block_skips_stm(self, block_idx: int) -> bool:
        """Alternate reading of halo-switch: drop the mixer branch entirely."""
        return (
            self.halo_variant is HaloVariant.SWITCH
            and self.halo_switch_skips_block
            and block_idx % 2 == 0
        )

    def single_residual(self) -> bool:
        return self.variant in ("D", "E")

    def stage_norms(self) -> tuple[bool, bool, bool, bool]:
        """Which stages end with a LayerNorm."""
        if self.variant in ("A", "D"):
            return (True, True, True, True)
        if self.variant == "B":
            return (True, True, True, False)
        return (False, False, False, False)  # C, E

    def head_norm_after_pool(self) -> bool:
        return self.variant in ("B", "C", "E")

    def stage_resolutions(self) -> list[int]:
        return [self.input_size // 4 // (2 ** s) for s in range(4)]


# ---------------------------------------------------------------------------
# weight containers


@dataclass
class NormW:
    g: np.ndarray
    b: np.ndarray


@dataclass
class ConvW:
    w: np.ndarray  # [C_out, C_in, k, k]
    b: np.ndarray


@dataclass
class StemW:
    conv1: ConvW
    norm1: NormW
    conv2: ConvW
    norm2: NormW


@dataclass
class MlpW:
    fc1_w: np.ndarray
    fc1_b: np.ndarray
    fc2_w: np.ndarray
    fc2_b: np.ndarray


@dataclass
class TransformerBlockW:
    norm1: NormW
    mixer: object
    ls1: np.ndarray
    norm2: NormW
    mlp: MlpW
    ls2: np.ndarray


@dataclass
class SingleResidualBlockW:
    """ConvNeXt-style block: spatial core, LN, expand/contract MLP, one skip."""

    mixer: object
    norm: NormW
    pin_w: np.ndarray
    pin_b: np.ndarray
    pout_w: np.ndarray
    pout_b: np.ndarray
    ls: np.ndarray


@dataclass
class StageW:
    blocks: list
    norm: NormW | None
    transition: ConvW | None


@dataclass
class HeadW:
    norm: NormW | None
    fc_w: np.ndarray
    fc_b: np.ndarray


@dataclass
class Model:
    config: ModelConfig
    stem: StemW
    stages: list[StageW]
    head: HeadW
    phantom: bool = field(default=False, repr=False)  # shape-only build


def named_parameters(model: Model) -> Iterator[tuple[str, np.ndarray]]:
    """Deterministic (name, array) walk; this order is the checkpoint order."""

    def walk(obj, prefix):
        if obj is None:
            return
        if isinstance(obj, np.ndarray):
            yield prefix, obj
        elif dataclasses.is_dataclass(obj) and not isinstance(obj, type):
            for f in dataclasses.fields(obj):
                if f.name in ("config", "phantom"):
                    continue
                yield from walk(getattr(obj, f.name), f"{prefix}.{f.name}" if prefix else f.name)
        elif isinstance(obj, (list, tuple)):
            for i, item in enumerate(obj):
                yield from walk(item, f"{prefix}.{i}")

    yield from walk(model, "")


# ---------------------------------------------------------------------------
# initialization


TRUNC_STD = 0.02
_PHI_LO = 0.5 * (1.0 + erf(-2.0 / np.sqrt(2.0)))
_PHI_HI = 0.5 * (1.0 + erf(2.0 / np.sqrt(2.0)))


class _Alloc:
    """Parameter factory.

    mode "random": deterministic draws from `rng`; "empty": uninitialized
    buffers for checkpoint loading; "phantom": stride-0 stubs that only
    carry shape (accounting and shape tracing).
    """

    def __init__(self, rng: np.random.Generator | None, mode: str = "random"):
        self.rng = rng
        self.mode = mode

    def _inert(self, shape):
        if self.mode == "empty":
            return np.empty(shape, dtype=np.float32)
        return np.broadcast_to(np.float32(0.0), shape)

    def trunc_normal(self, *shape, std: float = TRUNC_STD):
        if self.mode != "random":
            return self._inert(shape)
        u = self.rng.random(shape, dtype=np.float32)
        u = np.float32(_PHI_LO) + u * np.float32(_PHI_HI - _PHI_LO)
        x = np.float32(math.sqrt(2.0) * std) * erfinv(np.float32(2.0) * u - np.float32(1.0))
        return np.ascontiguousarray(x, dtype=np.float32)

    def zeros(self, *shape):
        if self.mode != "random":
            return self._inert(shape)
        return np.zeros(shape, dtype=np.float32)

    def ones(self, *shape):
        if self.mode != "random":
            return self._inert(shape)
        return np.ones(shape, dtype=np.float32)

    def full(self, value, *shape):
        if self.mode != "random":
            return self._inert(shape)
        return np.full(shape, value, dtype=np.float32)


def _make_norm(al: _Alloc, c: int) -> NormW:
    return NormW(al.ones(c), al.zeros(c))


def _make_linear(al: _Alloc, cin: int, cout: int):
    return al.trunc_normal(cin, cout), al.zeros(cout)


def _make_mixer(al: _Alloc, cfg: ModelConfig, stage: int, block_idx: int):
    c = cfg.widths[stage]
    p = cfg.stm_params(stage)
    core_only = cfg.single_residual()
    kind = cfg.stm
    if kind is StmKind.DWCONV:
        dw_k = al.trunc_normal(c, 7, 7)
        dw_b = al.zeros(c)
        if core_only:
            return DwCoreWeights(dw_k, dw_b)
        pin_w, pin_b = _make_linear(al, c, c)
        pout_w, pout_b = _make_linear(al, c, c)
        return DwConvWeights(pin_w, pin_b, dw_k, dw_b, pout_w, pout_b)
    if kind in (StmKind.HALO, StmKind.SWIN):
        qkv_w, qkv_b = al.trunc_normal(c, 3 * c), al.zeros(3 * c)
        proj_w, proj_b = _make_linear(al, c, c)
        b = p.window_size
        if kind is StmKind.HALO:
            k_side = b + 2 * cfg.halo_for_block(block_idx)
        else:
            k_side = b
        side = b + k_side - 1
        table = al.trunc_normal(side * side, p.heads)
        return WindowAttnWeights(qkv_w, qkv_b, proj_w, proj_b, table)
    if kind is StmKind.SR:
        q_w, q_b = _make_linear(al, c, c)
        kv_w, kv_b = al.trunc_normal(c, 2 * c), al.zeros(2 * c)
        proj_w, proj_b = _make_linear(al, c, c)
        sr = p.sr_ratio
        if sr > 1:
            sr_w = al.trunc_normal(c, c, sr, sr)
            sr_b = al.zeros(c)
            nrm = _make_norm(al, c)
            return SrAttnWeights(q_w, q_b, kv_w, kv_b, proj_w, proj_b,
                                 sr_w, sr_b, nrm.g, nrm.b)
        return SrAttnWeights(q_w, q_b, kv_w, kv_b, proj_w, proj_b)
    if kind is StmKind.DCNV3:
        g = p.dcn_groups
        kpts = p.dcn_points
        value_w, value_b = _make_linear(al, c, c)
        gen_dw = al.trunc_normal(c, 3, 3)
        gen_dw_b = al.zeros(c)
        # zero-initialized heads: the initial sampling grid is the plain 3x3
        offset_w = al.zeros(c, g * kpts * 2)
        offset_b = al.zeros(g * kpts * 2)
        mask_w = al.zeros(c, g * kpts)
        mask_b = al.zeros(g * kpts)
        proj_w, proj_b = _make_linear(al, c, c)
        return DcnWeights(value_w, value_b, gen_dw, gen_dw_b,
                          offset_w, offset_b, mask_w, mask_b, proj_w, proj_b)
    raise ConfigError(f"unknown mixer kind {kind}")


def _make_block(al: _Alloc, cfg: ModelConfig, stage: int, block_idx: int):
    c = cfg.widths[stage]
    hidden = int(round(c * cfg.mlp_ratio))
    mixer = _make_mixer(al, cfg, stage, block_idx)
    if cfg.single_residual():
        pin_w, pin_b = _make_linear(al, c, hidden)
        pout_w, pout_b = _make_linear(al, hidden, c)
        return SingleResidualBlockW(
            mixer, _make_norm(al, c), pin_w, pin_b, pout_w, pout_b,
            al.full(cfg.layer_scale_init, c),
        )
    fc1_w, fc1_b = _make_linear(al, c, hidden)
    fc2_w, fc2_b = _make_linear(al, hidden, c)
    return TransformerBlockW(
        _make_norm(al, c), mixer, al.full(cfg.layer_scale_init, c),
        _make_norm(al, c), MlpW(fc1_w, fc1_b, fc2_w, fc2_b),
        al.full(cfg.layer_scale_init, c),
    )


def _build(cfg: ModelConfig, rng: np.random.Generator | None,
           mode: str = "random") -> Model:
    cfg.validate()
    al = _Alloc(rng, mode)
    c0 = cfg.widths[0]
    mid = max(c0 // 2, 8)
    stem = StemW(
        ConvW(al.trunc_normal(mid, 3, 3, 3), al.zeros(mid)),
        _make_norm(al, mid),
        ConvW(al.trunc_normal(c0, mid, 3, 3), al.zeros(c0)),
        _make_norm(al, c0),
    )
    norms = cfg.stage_norms()
    stages = []
    for s in range(4):
        blocks = [_make_block(al, cfg, s, i) for i in range(cfg.depths[s])]
        norm = _make_norm(al, cfg.widths[s]) if norms[s] else None
        transition = None
        if s < 3:
            transition = ConvW(
                al.trunc_normal(cfg.widths[s + 1], cfg.widths[s], 3, 3),
                al.zeros(cfg.widths[s + 1]),
            )
        stages.append(StageW(blocks, norm, transition))
    head = HeadW(
        _make_norm(al, cfg.widths[3]) if cfg.head_norm_after_pool() else None,
        al.trunc_normal(cfg.widths[3], cfg.num_classes),
        al.zeros(cfg.num_classes),
    )
    return Model(cfg, stem, stages, head, phantom=mode == "phantom")


def build_model(config: ModelConfig, seed: int = 42) -> Model:
    """Deterministically initialized model: same (config, seed) => same bits."""
    rng = np.random.Generator(np.random.Philox(seed))
    return _build(config, rng)


def phantom_model(config: ModelConfig) -> Model:
    """Shape-correct model with stride-0 stub arrays (accounting/tracing only)."""
    return _build(config, None, mode="phantom")


def empty_model(config: ModelConfig) -> Model:
    """Allocated but uninitialized model, for checkpoint loading."""
    return _build(config, None, mode="empty")


# ---------------------------------------------------------------------------
# forward passes


def _ln_map(x, norm: NormW):
    """Channelwise LayerNorm of an NCHW map."""
    n, c, h, w = x.shape
    t = ops.layer_norm(ops.map_to_tokens(x), norm.g, norm.b)
    return ops.tokens_to_map(t, h, w)


def _ls_map(x, ls: np.ndarray):
    return ops.mul(x, ls.reshape(1, -1, 1, 1))


def _apply_mixer(x, mixer, cfg: ModelConfig, stage: int, block_idx: int):
    p = cfg.stm_params(stage)
    kind = cfg.stm
    if isinstance(mixer, DwConvWeights):
        return mixers.dwconv_mixer(x, mixer)
    if isinstance(mixer, DwCoreWeights):
        k = mixer.dw_k.shape[1]
        return ops.depthwise_conv2d(x, mixer.dw_k, mixer.dw_b, stride=1, pad=(k - 1) // 2)
    if isinstance(mixer, WindowAttnWeights):
        if kind is StmKind.HALO:
            return mixers.halo_attention(x, mixer, p, halo=cfg.halo_for_block(block_idx))
        return mixers.swin_attention(x, mixer, p, shifted=block_idx % 2 == 1)
    if isinstance(mixer, SrAttnWeights):
        return mixers.sr_attention(x, mixer, p)
    if isinstance(mixer, DcnWeights):
        return mixers.dcnv3_mixer(x, mixer, p)
    raise ConfigError(f"unknown mixer weights {type(mixer)!r}")


def block_forward(x, block, cfg: ModelConfig, stage: int, block_idx: int):
    """One block. Two residuals for variants A-C, one for D/E."""
    n, c, h, w = x.shape
    skip_stm = cfg.stm is StmKind.HALO and cfg.block_skips_stm(block_idx)
    if isinstance(block, TransformerBlockW):
        if not skip_stm:
            y = _apply_mixer(_ln_map(x, block.norm1), block.mixer, cfg, stage, block_idx)
            x = ops.add(x, _ls_map(y, block.ls1))
        t = ops.layer_norm(ops.map_to_tokens(x), block.norm2.g, block.norm2.b)
        t = ops.linear(t, block.mlp.fc1_w, block.mlp.fc1_b)
        t = ops.gelu(t)
        t = ops.linear(t, block.mlp.fc2_w, block.mlp.fc2_b)
        z = ops.tokens_to_map(t, h, w)
        return ops.add(x, _ls_map(z, block.ls2))
    if skip_stm:
        return x
    y = _apply_mixer(x, block.mixer, cfg, stage, block_idx)
    t = ops.layer_norm(ops.map_to_tokens(y), block.norm.g, block.norm.b)
    t = ops.linear(t, block.pin_w, block.pin_b)
    t = ops.gelu(t)
    t = ops.linear(t, block.pout_w, block.pout_b)
    z = ops.tokens_to_map(t, h, w)
    return ops.add(x, _ls_map(z, block.ls))


def stem_forward(model: Model, x) -> Tensor:
    """Two 3x3 stride-2 convs with a normalization between and after."""
    x = ops.astensor(x)
    if x.ndim != 4 or x.shape[2] % 4 or x.shape[3] % 4:
        raise ShapeError("stem input must be [N,C,H,W] with H, W divisible by 4")
    y = ops.conv2d(x, model.stem.conv1.w, model.stem.conv1.b, stride=2, pad=1)
    y = _ln_map(y, model.stem.norm1)
    y = ops.conv2d(y, model.stem.conv2.w, model.stem.conv2.b, stride=2, pad=1)
    return _ln_map(y, model.stem.norm2)


def forward_features(model: Model, x, upto: int | None = None) -> list[Tensor]:
    """Post-stage maps (after blocks and any stage LN, before the transition)."""
    x = ops.astensor(x)
    if x.shape[2] % 32 or x.shape[3] % 32:
        raise ShapeError("input extents must be divisible by 32")
    cfg = model.config
    y = stem_forward(model, x)
    outs: list[Tensor] = []
    for s, stage in enumerate(model.stages):
        for i, blk in enumerate(stage.blocks):
            y = block_forward(y, blk, cfg, s, i)
        if stage.norm is not None:
            y = _ln_map(y, stage.norm)
        outs.append(y)
        if upto is not None and s == upto:
            return outs
        if stage.transition is not None:
            y = ops.conv2d(y, stage.transition.w, stage.transition.b, stride=2, pad=1)
    return outs


def forward_classify(model: Model, x) -> Tensor:
    """Logits [N, num_classes]: GAP over the last stage, LN per variant, linear."""
    feats = forward_features(model, x)[-1]
    pooled = ops.mean_axes(feats, (2, 3))  # [N, C]
    if model.head.norm is not None:
        pooled = ops.layer_norm(pooled, model.head.norm.g, model.head.norm.b)
    return ops.linear(pooled, model.head.fc_w, model.head.fc_b)
