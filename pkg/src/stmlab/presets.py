"""The 20 stock configurations: five mixers at four scales.

Depths/widths were tuned so that parameters and MACs at 224 x 224 land
within +-10% of the published reference budgets in BUDGET_TARGETS (most
are within 5%). Window geometry uses the mixers' public defaults: 7x7
windows, halo 3, spatial-reduction ratios (8,4,2,1), 16-channel
deformable groups.
"""

from __future__ import annotations

from stmlab.mixers import HaloVariant, StmKind
from stmlab.model import ModelConfig

SCALES = ("micro", "tiny", "small", "base")
STM_NAMES = ("halo", "swin", "sr", "dwconv", "dcnv3")

# (widths, heads, depths) per (stm, scale)
_SHAPES = {
    ("halo", "micro"): ((32, 64, 160, 256), (1, 2, 5, 8), (2, 2, 3, 3)),
    ("sr", "micro"): ((24, 48, 96, 192), (1, 1, 3, 6), (2, 2, 16, 3)),
    ("swin", "micro"): ((32, 64, 128, 256), (1, 2, 4, 8), (3, 3, 6, 3)),
    ("dwconv", "micro"): ((32, 64, 128, 256), (1, 2, 4, 8), (2, 2, 10, 3)),
    ("dcnv3", "micro"): ((32, 64, 128, 256), (1, 2, 4, 8), (3, 3, 6, 3)),
    ("halo", "tiny"): ((80, 160, 320, 640), (2, 5, 10, 20), (2, 2, 10, 3)),
    ("sr", "tiny"): ((80, 160, 320, 640), (2, 5, 10, 20), (3, 3, 9, 2)),
    ("swin", "tiny"): ((72, 144, 288, 576), (2, 4, 9, 18), (2, 2, 16, 3)),
    ("dwconv", "tiny"): ((96, 192, 384, 768), (3, 6, 12, 24), (3, 3, 6, 3)),
    ("dcnv3", "tiny"): ((64, 128, 256, 512), (2, 4, 8, 16), (2, 2, 23, 3)),
    ("halo", "small"): ((128, 256, 512, 1024), (4, 8, 16, 32), (2, 2, 6, 2)),
    ("sr", "small"): ((80, 160, 320, 640), (2, 5, 10, 20), (3, 3, 21, 2)),
    ("swin", "small"): ((80, 160, 320, 640), (2, 5, 10, 20), (3, 3, 27, 3)),
    ("dwconv", "small"): ((96, 192, 384, 768), (3, 6, 12, 24), (3, 3, 21, 3)),
    ("dcnv3", "small"): ((80, 160, 320, 640), (2, 5, 10, 20), (2, 2, 26, 3)),
    ("halo", "base"): ((160, 320, 640, 1280), (5, 10, 20, 40), (2, 2, 8, 2)),
    ("sr", "base"): ((160, 320, 640, 1280), (5, 10, 20, 40), (3, 3, 4, 2)),
    ("swin", "base"): ((96, 192, 480, 768), (3, 6, 15, 24), (2, 2, 24, 3)),
    ("dwconv", "base"): ((128, 256, 512, 1024), (4, 8, 16, 32), (3, 3, 21, 3)),
    ("dcnv3", "base"): ((128, 256, 512, 1024), (4, 8, 16, 32), (3, 3, 16, 3)),
}

# published reference budgets (params, MACs at 224^2) the presets reproduce
BUDGET_TARGETS = {
    ("halo", "micro"): (4.4e6, 0.65e9),
    ("sr", "micro"): (4.3e6, 0.57e9),
    ("swin", "micro"): (4.4e6, 0.71e9),
    ("dwconv", "micro"): (4.4e6, 0.65e9),
    ("dcnv3", "micro"): (4.3e6, 0.65e9),
    ("halo", "tiny"): (31.5e6, 4.75e9),
    ("sr", "tiny"): (30.8e6, 4.56e9),
    ("swin", "tiny"): (31.5e6, 4.91e9),
    ("dwconv", "tiny"): (31.9e6, 5.01e9),
    ("dcnv3", "tiny"): (29.9e6, 4.83e9),
    ("halo", "small"): (52.8e6, 8.92e9),
    ("sr", "small"): (50.5e6, 7.33e9),
    ("swin", "small"): (52.9e6, 9.18e9),
    ("dwconv", "small"): (54.4e6, 9.40e9),
    ("dcnv3", "small"): (50.1e6, 8.24e9),
    ("halo", "base"): (93.3e6, 15.84e9),
    ("sr", "base"): (91.1e6, 12.73e9),
    ("swin", "base"): (93.4e6, 16.18e9),
    ("dwconv", "base"): (95.8e6, 16.64e9),
    ("dcnv3", "base"): (97.5e6, 16.08e9),
}

_KINDS = {
    "halo": StmKind.HALO,
    "swin": StmKind.SWIN,
    "sr": StmKind.SR,
    "dwconv": StmKind.DWCONV,
    "dcnv3": StmKind.DCNV3,
}


def preset_names() -> list[str]:
    """All 20 names, mixers grouped and scales in ascending size order."""
    return [f"{stm}-{scale}" for stm in STM_NAMES for scale in SCALES]


def get_preset(name: str, variant: str = "A",
               halo_variant: HaloVariant = HaloVariant.STANDARD,
               num_classes: int = 1000, input_size: int = 224) -> ModelConfig:
    """Look up `name` ("<stm>-<scale>", e.g. "halo-micro") as a ModelConfig."""
    try:
        stm, scale = name.split("-")
        widths, heads, depths = _SHAPES[(stm, scale)]
    except (ValueError, KeyError):
        raise KeyError(
            f"unknown preset {name!r}; expected <stm>-<scale> with "
            f"stm in {STM_NAMES} and scale in {SCALES}"
        ) from None
    return ModelConfig(
        stm=_KINDS[stm],
        depths=depths,
        widths=widths,
        heads=heads,
        variant=variant,
        halo_variant=halo_variant,
        num_classes=num_classes,
        input_size=input_size,
    )
