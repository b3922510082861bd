"""Model config files: INI-style key/value with nested sections.

Schema (all keys shown; [model] stm/depths/widths/heads are required, the
rest default):

    [model]
    stm = halo | swin | sr | dwconv | dcnv3
    depths = 2,2,6,2
    widths = 32,64,128,256
    heads = 1,2,4,8
    variant = A | B | C | D | E
    mlp_ratio = 4.0
    layer_scale_init = 1e-6
    num_classes = 1000
    input_size = 224
    drop_path = 0.0

    [stm]
    window = 7
    halo = 3
    halo_variant = standard | switch | onepixel | shiftedquery
    halo_switch_skips_block = false
    shift_size =            (empty: window // 2)
    sr_ratios = 8,4,2,1
    dcn_group_channels = 16

    [normalize]
    mean = 0.485,0.456,0.406
    std = 0.229,0.224,0.225

Unknown sections or keys are hard errors: silent misconfiguration is worse
than a loud one.
"""

from __future__ import annotations

import configparser

from stmlab.mixers import HaloVariant, StmKind
from stmlab.model import ConfigError, ModelConfig

_MODEL_KEYS = {
    "stm", "depths", "widths", "heads", "variant", "mlp_ratio",
    "layer_scale_init", "num_classes", "input_size", "drop_path",
}
_STM_KEYS = {
    "window", "halo", "halo_variant", "halo_switch_skips_block",
    "shift_size", "sr_ratios", "dcn_group_channels",
}
_NORM_KEYS = {"mean", "std"}
_SECTIONS = {"model": _MODEL_KEYS, "stm": _STM_KEYS, "normalize": _NORM_KEYS}


def _int_tuple(raw: str, key: str, n: int) -> tuple:
    try:
        values = tuple(int(v.strip()) for v in raw.split(","))
    except ValueError:
        raise ConfigError(f"key {key!r}: expected comma-separated integers, got {raw!r}")
    if len(values) != n:
        raise ConfigError(f"key {key!r}: expected {n} values, got {len(values)}")
    return values


def _float_tuple(raw: str, key: str, n: int) -> tuple:
    try:
        values = tuple(float(v.strip()) for v in raw.split(","))
    except ValueError:
        raise ConfigError(f"key {key!r}: expected comma-separated numbers, got {raw!r}")
    if len(values) != n:
        raise ConfigError(f"key {key!r}: expected {n} values, got {len(values)}")
    return values


def _scalar(parse, raw: str, key: str):
    try:
        return parse(raw.strip())
    except ValueError:
        raise ConfigError(f"key {key!r}: cannot parse {raw!r}")


def _bool(raw: str, key: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"key {key!r}: expected a boolean, got {raw!r}")


def parse_config(path: str) -> ModelConfig:
    """Read and validate a model config file."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keep key case
    read = cp.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path!r}")

    for section in cp.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}] in {path}")
        for key in cp[section]:
            if key not in _SECTIONS[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}] of {path}")
    if "model" not in cp:
        raise ConfigError(f"{path}: missing required [model] section")

    model = cp["model"]
    for required in ("stm", "depths", "widths", "heads"):
        if required not in model:
            raise ConfigError(f"{path}: missing required key {required!r} in [model]")

    stm_raw = model["stm"].strip().lower()
    try:
        stm = StmKind(stm_raw)
    except ValueError:
        raise ConfigError(
            f"key 'stm': {stm_raw!r} is not one of {[k.value for k in StmKind]}"
        )

    stm_section = cp["stm"] if "stm" in cp else {}
    norm_section = cp["normalize"] if "normalize" in cp else {}

    halo_variant_raw = stm_section.get("halo_variant", "standard").strip().lower()
    try:
        halo_variant = HaloVariant(halo_variant_raw)
    except ValueError:
        raise ConfigError(
            f"key 'halo_variant': {halo_variant_raw!r} is not one of "
            f"{[v.value for v in HaloVariant]}"
        )

    kwargs = dict(
        stm=stm,
        depths=_int_tuple(model["depths"], "depths", 4),
        widths=_int_tuple(model["widths"], "widths", 4),
        heads=_int_tuple(model["heads"], "heads", 4),
        variant=model.get("variant", "A").strip().upper(),
        mlp_ratio=_scalar(float, model.get("mlp_ratio", "4.0"), "mlp_ratio"),
        layer_scale_init=_scalar(
            float, model.get("layer_scale_init", "1e-6"), "layer_scale_init"
        ),
        num_classes=_scalar(int, model.get("num_classes", "1000"), "num_classes"),
        input_size=_scalar(int, model.get("input_size", "224"), "input_size"),
        drop_path=_scalar(float, model.get("drop_path", "0.0"), "drop_path"),
        window_size=_scalar(int, stm_section.get("window", "7"), "window"),
        halo_size=_scalar(int, stm_section.get("halo", "3"), "halo"),
        halo_variant=halo_variant,
        halo_switch_skips_block=_bool(
            stm_section.get("halo_switch_skips_block", "false"),
            "halo_switch_skips_block",
        ),
        sr_ratios=_int_tuple(stm_section.get("sr_ratios", "8,4,2,1"), "sr_ratios", 4),
        dcn_group_channels=_scalar(
            int, stm_section.get("dcn_group_channels", "16"), "dcn_group_channels"
        ),
        norm_mean=_float_tuple(norm_section.get("mean", "0.485,0.456,0.406"), "mean", 3),
        norm_std=_float_tuple(norm_section.get("std", "0.229,0.224,0.225"), "std", 3),
    )
    cfg = ModelConfig(**kwargs)
    cfg.validate()
    return cfg


def write_config(cfg: ModelConfig, path: str) -> None:
    """Serialize a ModelConfig back to the file format."""
    lines = [
        "[model]",
        f"stm = {cfg.stm.value}",
        f"depths = {','.join(map(str, cfg.depths))}",
        f"widths = {','.join(map(str, cfg.widths))}",
        f"heads = {','.join(map(str, cfg.heads))}",
        f"variant = {cfg.variant}",
        f"mlp_ratio = {cfg.mlp_ratio:g}",
        f"layer_scale_init = {cfg.layer_scale_init:g}",
        f"num_classes = {cfg.num_classes}",
        f"input_size = {cfg.input_size}",
        f"drop_path = {cfg.drop_path:g}",
        "",
        "[stm]",
        f"window = {cfg.window_size}",
        f"halo = {cfg.halo_size}",
        f"halo_variant = {cfg.halo_variant.value}",
        f"halo_switch_skips_block = {str(cfg.halo_switch_skips_block).lower()}",
        f"sr_ratios = {','.join(map(str, cfg.sr_ratios))}",
        f"dcn_group_channels = {cfg.dcn_group_channels}",
        "",
        "[normalize]",
        f"mean = {','.join(f'{v:g}' for v in cfg.norm_mean)}",
        f"std = {','.join(f'{v:g}' for v in cfg.norm_std)}",
        "",
    ]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))
