"""Parameter and multiply-accumulate accounting.

Parameters are exact element counts from the model's weight enumeration.
MACs are analytic: matmul-like ops only (linear maps T*Cin*Cout, dense
conv Cout*Cin*k^2*Ho*Wo, depthwise conv C*k^2*Ho*Wo, attention logits and
aggregation T_q*T_k*C each, deformable sampling K*C*T). Normalizations,
activations, bias adds, layer scale and pooling are excluded; one
multiply-accumulate counts as one unit and the G-numbers reported by the
CLI's "FLOPs" column are these MACs.
"""

from __future__ import annotations

from dataclasses import dataclass

from stmlab.mixers import StmKind
from stmlab.model import Model, ModelConfig, named_parameters, phantom_model


@dataclass
class CostRow:
    name: str
    params: int
    macs: int


@dataclass
class CostReport:
    rows: list[CostRow]
    input_size: int

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def total_macs(self) -> int:
        return sum(r.macs for r in self.rows)

    def csv_lines(self) -> list[str]:
        lines = ["module,params,macs"]
        lines += [f"{r.name},{r.params},{r.macs}" for r in self.rows]
        lines.append(f"total,{self.total_params},{self.total_macs}")
        return lines


def _param_counts_by_prefix(model: Model) -> dict[str, int]:
    counts: dict[str, int] = {}
    for name, arr in named_parameters(model):
        counts[name] = int(arr.size)
    return counts


def _sum_prefix(counts: dict[str, int], prefix: str) -> int:
    dotted = prefix + "."
    return sum(v for k, v in counts.items() if k == prefix or k.startswith(dotted))


def _pad_up(extent: int, b: int) -> int:
    return -(-extent // b) * b


def _mixer_macs(cfg: ModelConfig, stage: int, block_idx: int, r: int) -> int:
    """MACs of one mixer application on an r x r map."""
    c = cfg.widths[stage]
    t = r * r
    kind = cfg.stm
    if kind is StmKind.HALO and cfg.block_skips_stm(block_idx):
        return 0
    if kind is StmKind.DWCONV:
        if cfg.single_residual():
            return 49 * c * t
        return t * c * c + 49 * c * t + t * c * c
    if kind is StmKind.HALO:
        b = cfg.window_size
        k_side = b + 2 * cfg.halo_for_block(block_idx)
        rp = _pad_up(r, b)
        nwin = (rp // b) ** 2
        qkv = 3 * t * c * c
        attn = nwin * 2 * (b * b) * (k_side * k_side) * c
        proj = t * c * c
        return qkv + attn + proj
    if kind is StmKind.SWIN:
        b = cfg.window_size
        rp = _pad_up(r, b)
        nwin = (rp // b) ** 2
        qkv = 3 * t * c * c
        attn = nwin * 2 * (b * b) * (b * b) * c
        proj = t * c * c
        return qkv + attn + proj
    if kind is StmKind.SR:
        sr = cfg.sr_ratios[stage]
        tr = (r // sr) ** 2 if sr > 1 else t
        q = t * c * c
        red = c * c * sr * sr * tr if sr > 1 else 0
        kv = 2 * tr * c * c
        attn = 2 * t * tr * c
        proj = t * c * c
        return q + red + kv + attn + proj
    if kind is StmKind.DCNV3:
        g = max(1, c // cfg.dcn_group_channels)
        kpts = 9
        value = t * c * c
        gen_dw = 9 * c * t
        gen_off = t * c * (g * kpts * 2)
        gen_mask = t * c * (g * kpts)
        sampling = kpts * c * t
        proj = t * c * c
        return value + gen_dw + gen_off + gen_mask + sampling + proj
    raise ValueError(f"unknown mixer kind {kind}")


def _block_macs(cfg: ModelConfig, stage: int, block_idx: int, r: int) -> int:
    c = cfg.widths[stage]
    hidden = int(round(c * cfg.mlp_ratio))
    t = r * r
    mixer = _mixer_macs(cfg, stage, block_idx, r)
    if cfg.single_residual():
        if cfg.stm is StmKind.HALO and cfg.block_skips_stm(block_idx):
            return 0
        return mixer + t * c * hidden + t * hidden * c
    return mixer + t * c * hidden + t * hidden * c


def cost_report(config: ModelConfig, input_size: int | None = None) -> CostReport:
    """Per-module parameter and MAC table for one model configuration."""
    config.validate()
    size = config.input_size if input_size is None else input_size
    if size % 32:
        raise ValueError("input size must be divisible by 32")
    counts = _param_counts_by_prefix(_param_counts_cache(config))
    rows: list[CostRow] = []

    mid = max(config.widths[0] // 2, 8)
    stem_macs = (
        mid * 3 * 9 * (size // 2) ** 2
        + config.widths[0] * mid * 9 * (size // 4) ** 2
    )
    rows.append(CostRow("stem", _sum_prefix(counts, "stem"), stem_macs))

    for s in range(4):
        r = size // 4 // (2 ** s)
        for i in range(config.depths[s]):
            rows.append(
                CostRow(
                    f"stages.{s}.blocks.{i}",
                    _sum_prefix(counts, f"stages.{s}.blocks.{i}"),
                    _block_macs(config, s, i, r),
                )
            )
        norm_params = _sum_prefix(counts, f"stages.{s}.norm")
        if norm_params:
            rows.append(CostRow(f"stages.{s}.norm", norm_params, 0))
        if s < 3:
            tr_macs = config.widths[s + 1] * config.widths[s] * 9 * (r // 2) ** 2
            rows.append(
                CostRow(
                    f"stages.{s}.transition",
                    _sum_prefix(counts, f"stages.{s}.transition"),
                    tr_macs,
                )
            )

    head_macs = config.widths[3] * config.num_classes
    rows.append(CostRow("head", _sum_prefix(counts, "head"), head_macs))
    return CostReport(rows, size)


_PHANTOM_CACHE: dict = {}


def _param_counts_cache(config: ModelConfig) -> Model:
    key = config
    if key not in _PHANTOM_CACHE:
        if len(_PHANTOM_CACHE) > 64:
            _PHANTOM_CACHE.clear()
        _PHANTOM_CACHE[key] = phantom_model(config)
    return _PHANTOM_CACHE[key]


def count_params(model_or_config) -> CostReport:
    """Exact per-module parameter counts (input-size independent)."""
    config = model_or_config.config if isinstance(model_or_config, Model) else model_or_config
    return cost_report(config, config.input_size)


def count_macs(model_or_config, input_size: int | None = None) -> CostReport:
    """Analytic multiply-accumulate counts at the given input size."""
    config = model_or_config.config if isinstance(model_or_config, Model) else model_or_config
    return cost_report(config, input_size)


def depthwise_macs(channels: int, h: int, w: int, k: int, stride: int = 1,
                   pad: int | None = None) -> int:
    """Closed form for one depthwise convolution: C * Ho * Wo * k^2."""
    if pad is None:
        pad = (k - 1) // 2
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    return channels * ho * wo * k * k
