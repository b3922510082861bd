import numpy as np
import pytest

from stmlab.mixers import (
    DcnWeights,
    DwConvWeights,
    SrAttnWeights,
    WindowAttnWeights,
)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def randf(rng, *shape, scale=0.2):
    return (rng.standard_normal(shape) * scale).astype(np.float32)


def window_weights(rng, c, heads, q_side, k_side, zero_table=False):
    side = q_side + k_side - 1
    table = np.zeros((side * side, heads), np.float32) if zero_table else randf(
        rng, side * side, heads
    )
    return WindowAttnWeights(
        randf(rng, c, 3 * c), randf(rng, 3 * c),
        randf(rng, c, c), randf(rng, c), table,
    )


def sr_weights(rng, c, sr):
    if sr > 1:
        return SrAttnWeights(
            randf(rng, c, c), randf(rng, c),
            randf(rng, c, 2 * c), randf(rng, 2 * c),
            randf(rng, c, c), randf(rng, c),
            randf(rng, c, c, sr, sr), randf(rng, c),
            np.ones(c, np.float32), np.zeros(c, np.float32),
        )
    return SrAttnWeights(
        randf(rng, c, c), randf(rng, c),
        randf(rng, c, 2 * c), randf(rng, 2 * c),
        randf(rng, c, c), randf(rng, c),
    )


def dw_weights(rng, c):
    return DwConvWeights(
        randf(rng, c, c), randf(rng, c),
        randf(rng, c, 7, 7), randf(rng, c),
        randf(rng, c, c), randf(rng, c),
    )


def dcn_weights(rng, c, groups, zero_offsets=True, zero_mask=False):
    k = 9
    off_w = np.zeros((c, groups * k * 2), np.float32) if zero_offsets else randf(
        rng, c, groups * k * 2, scale=0.4
    )
    off_b = np.zeros(groups * k * 2, np.float32) if zero_offsets else randf(
        rng, groups * k * 2, scale=0.4
    )
    mask_w = np.zeros((c, groups * k), np.float32) if zero_mask else randf(rng, c, groups * k)
    mask_b = np.zeros(groups * k, np.float32) if zero_mask else randf(rng, groups * k)
    return DcnWeights(
        randf(rng, c, c), randf(rng, c),
        randf(rng, c, 3, 3), randf(rng, c),
        off_w, off_b, mask_w, mask_b,
        randf(rng, c, c), randf(rng, c),
    )


@pytest.fixture
def rng():
    return make_rng(1234)
