"""The five token mixers against brute-force oracles and their invariants."""

import numpy as np
import pytest

from stmlab import mixers, oracles
from stmlab.mixers import (
    DcnWeights,
    DwConvWeights,
    HaloVariant,
    StmParams,
    WindowAttnWeights,
)
from stmlab.tensor import ShapeError, Tensor

from conftest import dcn_weights, dw_weights, make_rng, sr_weights, window_weights


def spatial_spread(m, border=0):
    """Max deviation from the value at one interior pixel."""
    inner = m[:, :, border : m.shape[2] - border, border : m.shape[3] - border]
    ref = inner[:, :, :1, :1]
    return float(np.abs(inner - ref).max())


class TestMhaCore:
    def test_single_key_broadcasts_value(self):
        rng = make_rng(40)
        q = Tensor(rng.standard_normal((5, 8)).astype(np.float32))
        k = Tensor(rng.standard_normal((1, 8)).astype(np.float32))
        v = Tensor(rng.standard_normal((1, 8)).astype(np.float32))
        out = mixers.mha_core(q, k, v, heads=2).data
        for i in range(5):
            np.testing.assert_allclose(out[i], v.data[0], atol=1e-6)

    def test_equal_logits_average_values(self):
        rng = make_rng(41)
        q = Tensor(rng.standard_normal((3, 4)).astype(np.float32))
        k = Tensor(np.zeros((2, 4), np.float32))  # zero keys: all logits equal
        v = Tensor(rng.standard_normal((2, 4)).astype(np.float32))
        out = mixers.mha_core(q, k, v, heads=1).data
        want = v.data.mean(axis=0)
        for i in range(3):
            np.testing.assert_allclose(out[i], want, atol=1e-6)

    def test_against_dense_loop_oracle(self):
        rng = make_rng(42)
        q = rng.standard_normal((6, 8)).astype(np.float32)
        k = rng.standard_normal((6, 8)).astype(np.float32)
        v = rng.standard_normal((6, 8)).astype(np.float32)
        bias = rng.standard_normal((2, 6, 6)).astype(np.float32)
        got = mixers.mha_core(Tensor(q), Tensor(k), Tensor(v), 2, bias).data
        want = oracles.attention_loops(q, k, v, 2, bias)
        assert np.abs(got - want).max() <= 1e-5

    def test_rectangular_tokens(self):
        rng = make_rng(43)
        q = rng.standard_normal((4, 8)).astype(np.float32)
        k = rng.standard_normal((9, 8)).astype(np.float32)
        v = rng.standard_normal((9, 8)).astype(np.float32)
        got = mixers.mha_core(Tensor(q), Tensor(k), Tensor(v), 4).data
        want = oracles.attention_loops(q, k, v, 4)
        assert np.abs(got - want).max() <= 1e-5

    def test_heads_divisibility(self):
        t = Tensor(np.ones((3, 7), np.float32))
        with pytest.raises(ShapeError):
            mixers.mha_core(t, t, t, heads=2)

    def test_weight_rows_sum_to_one(self):
        # constant values expose the weight row sums: output == v0 iff sum == 1
        rng = make_rng(44)
        q = Tensor(rng.standard_normal((5, 8)).astype(np.float32))
        k = Tensor(rng.standard_normal((7, 8)).astype(np.float32))
        v0 = rng.standard_normal(8).astype(np.float32)
        v = Tensor(np.tile(v0, (7, 1)))
        out = mixers.mha_core(q, k, v, heads=2).data
        assert np.abs(out - v0).max() <= 1e-6


class TestDwConvMixer:
    def test_delta_kernel_identity(self):
        c = 6
        eye = np.eye(c, dtype=np.float32)
        kernel = np.zeros((c, 7, 7), np.float32)
        kernel[:, 3, 3] = 1.0
        w = DwConvWeights(eye, np.zeros(c, np.float32), kernel, np.zeros(c, np.float32),
                          eye, np.zeros(c, np.float32))
        rng = make_rng(45)
        x = rng.standard_normal((1, c, 9, 9)).astype(np.float32)
        out = mixers.dwconv_mixer(Tensor(x), w).data
        assert np.abs(out - x).max() <= 1e-6

    def test_constant_input_constant_interior(self):
        rng = make_rng(46)
        c = 4
        w = dw_weights(rng, c)
        x = np.full((1, c, 15, 15), 1.5, np.float32)
        out = mixers.dwconv_mixer(Tensor(x), w).data
        assert spatial_spread(out, border=3) <= 1e-5

    def test_against_composition_oracle(self):
        rng = make_rng(47)
        c = 8
        w = dw_weights(rng, c)
        x = rng.standard_normal((1, c, 14, 14)).astype(np.float32)
        got = mixers.dwconv_mixer(Tensor(x), w).data
        want = oracles.dwconv_mixer_oracle(x, w)
        assert np.abs(got - want).max() <= 1e-6

    def test_channel_mismatch(self):
        rng = make_rng(48)
        w = dw_weights(rng, 4)
        with pytest.raises(ShapeError):
            mixers.dwconv_mixer(Tensor(np.ones((1, 6, 8, 8), np.float32)), w)

    def test_any_shift_equivariance(self):
        rng = make_rng(49)
        c = 4
        w = dw_weights(rng, c)
        x = rng.standard_normal((1, c, 16, 16)).astype(np.float32)
        y1 = mixers.dwconv_mixer(Tensor(x), w).data
        for dy, dx in [(1, 0), (2, 5), (3, 3)]:
            x2 = np.zeros_like(x)
            x2[:, :, dy:, dx:] = x[:, :, :-dy or None, :-dx or None]
            y2 = mixers.dwconv_mixer(Tensor(x2), w).data
            a = y2[:, :, dy + 3 : -3, dx + 3 : -3]
            b = y1[:, :, 3 : -3 - dy, 3 : -3 - dx]
            assert np.abs(a - b).max() <= 1e-6


class TestHaloAttention:
    def test_whole_map_no_halo_equals_global(self):
        rng = make_rng(50)
        c, heads, b = 8, 2, 4
        w = window_weights(rng, c, heads, b, b, zero_table=True)
        x = rng.standard_normal((1, c, b, b)).astype(np.float32)
        p = StmParams(heads=heads, window_size=b, halo_size=0)
        got = mixers.halo_attention(Tensor(x), w, p, zero_bias=True).data
        tokens = x.reshape(c, b * b).T.astype(np.float64)
        qkv = tokens @ w.qkv_w.astype(np.float64) + w.qkv_b
        dense = oracles.attention_loops(
            qkv[:, :c], qkv[:, c : 2 * c], qkv[:, 2 * c :], heads, None,
            p.qk_scale(c),
        )
        want = (dense @ w.proj_w.astype(np.float64) + w.proj_b).T.reshape(1, c, b, b)
        assert np.abs(got - want).max() <= 1e-5

    def test_constant_input_constant_output(self):
        rng = make_rng(51)
        c, heads = 8, 2
        w = window_weights(rng, c, heads, 3, 3)
        p = StmParams(heads=heads, window_size=3, halo_size=0)
        x = np.full((1, c, 9, 9), 0.7, np.float32)
        out = mixers.halo_attention(Tensor(x), w, p, zero_bias=True).data
        assert spatial_spread(out) <= 1e-5

    def test_against_per_block_oracle(self):
        rng = make_rng(52)
        c, heads = 8, 2
        w = window_weights(rng, c, heads, 2, 4)
        p = StmParams(heads=heads, window_size=2, halo_size=1)
        x = rng.standard_normal((1, c, 4, 4)).astype(np.float32)
        got = mixers.halo_attention(Tensor(x), w, p).data
        assert np.abs(got - oracles.halo_oracle(x, w, p)).max() <= 1e-5

    def test_non_divisible_map_pads_and_crops(self):
        rng = make_rng(53)
        c, heads = 8, 2
        w = window_weights(rng, c, heads, 3, 5)
        p = StmParams(heads=heads, window_size=3, halo_size=1)
        x = rng.standard_normal((2, c, 7, 5)).astype(np.float32)
        got = mixers.halo_attention(Tensor(x), w, p)
        assert got.shape == x.shape
        assert np.abs(got.data - oracles.halo_oracle(x, w, p)).max() <= 1e-5

    def test_one_pixel_variant_is_halo_one(self):
        rng = make_rng(54)
        c, heads, b = 8, 2, 3
        w = window_weights(rng, c, heads, b, b + 2)
        x = rng.standard_normal((1, c, 6, 6)).astype(np.float32)
        p1 = StmParams(heads=heads, window_size=b, halo_size=3,
                       halo_variant=HaloVariant.ONE_PIXEL)
        got = mixers.halo_attention(Tensor(x), w, p1, halo=1).data
        p2 = StmParams(heads=heads, window_size=b, halo_size=1)
        want = mixers.halo_attention(Tensor(x), w, p2).data
        np.testing.assert_array_equal(got, want)

    def test_shifted_query_against_oracle(self):
        rng = make_rng(55)
        c, heads = 8, 2
        w = window_weights(rng, c, heads, 2, 4)
        p = StmParams(heads=heads, window_size=2, halo_size=1,
                      halo_variant=HaloVariant.SHIFTED_QUERY)
        x = rng.standard_normal((1, c, 6, 6)).astype(np.float32)
        got = mixers.halo_attention(Tensor(x), w, p).data
        assert np.abs(got - oracles.halo_oracle(x, w, p)).max() <= 1e-5
        # the anchoring genuinely changes the output
        std = mixers.halo_attention(
            Tensor(x), w, StmParams(heads=heads, window_size=2, halo_size=1)
        ).data
        assert np.abs(got - std).max() > 1e-3

    def test_halo_wider_than_block(self):
        # halo band larger than the block itself still matches the oracle
        rng = make_rng(57)
        c, heads, b, h = 8, 2, 2, 3
        w = window_weights(rng, c, heads, b, b + 2 * h)
        p = StmParams(heads=heads, window_size=b, halo_size=h)
        x = rng.standard_normal((1, c, 6, 6)).astype(np.float32)
        got = mixers.halo_attention(Tensor(x), w, p).data
        assert np.abs(got - oracles.halo_oracle(x, w, p)).max() <= 1e-5

    def test_block_translation_equivariance(self):
        rng = make_rng(56)
        c, heads, b, h = 8, 2, 2, 1
        w = window_weights(rng, c, heads, b, b + 2 * h)
        p = StmParams(heads=heads, window_size=b, halo_size=h)
        size = 12
        x = rng.standard_normal((1, c, size, size)).astype(np.float32)
        x2 = np.zeros_like(x)
        x2[:, :, b:, b:] = x[:, :, :-b, :-b]
        y1 = mixers.halo_attention(Tensor(x), w, p).data
        y2 = mixers.halo_attention(Tensor(x2), w, p).data
        lo, hi = 2 * b, size - b - h
        diff = y2[:, :, lo:hi, lo:hi] - y1[:, :, lo - b : hi - b, lo - b : hi - b]
        assert np.abs(diff).max() <= 1e-6


class TestSwinAttention:
    def test_unshifted_whole_map_equals_global(self):
        rng = make_rng(60)
        c, heads, b = 8, 2, 4
        w = window_weights(rng, c, heads, b, b)
        x = rng.standard_normal((1, c, b, b)).astype(np.float32)
        p = StmParams(heads=heads, window_size=b)
        got = mixers.swin_attention(Tensor(x), w, p, shifted=False, zero_bias=True).data
        tokens = x.reshape(c, b * b).T.astype(np.float64)
        qkv = tokens @ w.qkv_w.astype(np.float64) + w.qkv_b
        dense = oracles.attention_loops(
            qkv[:, :c], qkv[:, c : 2 * c], qkv[:, 2 * c :], heads, None, p.qk_scale(c)
        )
        want = (dense @ w.proj_w.astype(np.float64) + w.proj_b).T.reshape(1, c, b, b)
        assert np.abs(got - want).max() <= 1e-5

    def test_single_token_windows_identity(self):
        # b=1 with identity v/proj paths: partition round-trip is exact
        c = 4
        eye = np.eye(c, dtype=np.float32)
        qkv_w = np.concatenate([eye, eye, eye], axis=1)
        w = WindowAttnWeights(qkv_w, np.zeros(3 * c, np.float32), eye,
                              np.zeros(c, np.float32), np.zeros((1, 1), np.float32))
        rng = make_rng(61)
        x = rng.standard_normal((1, c, 5, 5)).astype(np.float32)
        p = StmParams(heads=1, window_size=1)
        out = mixers.swin_attention(Tensor(x), w, p, shifted=True).data
        np.testing.assert_allclose(out, x, atol=1e-6)

    def test_shifted_against_explicit_mask_oracle(self):
        rng = make_rng(62)
        c, heads, b = 8, 2, 4
        w = window_weights(rng, c, heads, b, b)
        p = StmParams(heads=heads, window_size=b)
        x = rng.standard_normal((1, c, 8, 8)).astype(np.float32)
        got = mixers.swin_attention(Tensor(x), w, p, shifted=True).data
        want = oracles.swin_oracle(x, w, p, shifted=True)
        assert np.abs(got - want).max() <= 1e-5

    def test_shift_changes_output(self):
        rng = make_rng(63)
        c, heads, b = 8, 2, 4
        w = window_weights(rng, c, heads, b, b)
        p = StmParams(heads=heads, window_size=b)
        x = rng.standard_normal((1, c, 8, 8)).astype(np.float32)
        a = mixers.swin_attention(Tensor(x), w, p, shifted=False).data
        s = mixers.swin_attention(Tensor(x), w, p, shifted=True).data
        assert np.abs(a - s).max() > 1e-3

    def test_window_translation_equivariance_unshifted(self):
        rng = make_rng(64)
        c, heads, b = 8, 2, 2
        w = window_weights(rng, c, heads, b, b)
        p = StmParams(heads=heads, window_size=b)
        size = 10
        x = rng.standard_normal((1, c, size, size)).astype(np.float32)
        x2 = np.zeros_like(x)
        x2[:, :, b:, b:] = x[:, :, :-b, :-b]
        y1 = mixers.swin_attention(Tensor(x), w, p, shifted=False).data
        y2 = mixers.swin_attention(Tensor(x2), w, p, shifted=False).data
        lo, hi = 2 * b, size - b
        diff = y2[:, :, lo:hi, lo:hi] - y1[:, :, lo - b : hi - b, lo - b : hi - b]
        assert np.abs(diff).max() <= 1e-6

    def test_constant_input_constant_interior(self):
        rng = make_rng(65)
        c, heads, b = 8, 2, 3
        w = window_weights(rng, c, heads, b, b)
        p = StmParams(heads=heads, window_size=b)
        x = np.full((1, c, 9, 9), -0.4, np.float32)
        out = mixers.swin_attention(Tensor(x), w, p, shifted=False, zero_bias=True).data
        assert spatial_spread(out) <= 1e-5


class TestSrAttention:
    def test_unit_ratio_is_vanilla_global(self):
        rng = make_rng(70)
        c, heads = 8, 2
        w = sr_weights(rng, c, 1)
        x = rng.standard_normal((1, c, 4, 4)).astype(np.float32)
        p = StmParams(heads=heads, sr_ratio=1)
        got = mixers.sr_attention(Tensor(x), w, p).data
        tokens = x.reshape(c, 16).T.astype(np.float64)
        q = tokens @ w.q_w.astype(np.float64) + w.q_b
        kv = tokens @ w.kv_w.astype(np.float64) + w.kv_b
        dense = oracles.attention_loops(q, kv[:, :c], kv[:, c:], heads, None, p.qk_scale(c))
        want = (dense @ w.proj_w.astype(np.float64) + w.proj_b).T.reshape(1, c, 4, 4)
        assert np.abs(got - want).max() <= 1e-5

    def test_single_pixel_input(self):
        rng = make_rng(71)
        c = 8
        w = sr_weights(rng, c, 1)
        x = rng.standard_normal((1, c, 1, 1)).astype(np.float32)
        got = mixers.sr_attention(Tensor(x), w, StmParams(heads=2, sr_ratio=1)).data
        token = x.reshape(c).astype(np.float64)
        v = token @ w.kv_w.astype(np.float64)[:, c:] + w.kv_b[c:]
        want = v @ w.proj_w.astype(np.float64) + w.proj_b
        np.testing.assert_allclose(got.reshape(c), want, atol=1e-5)

    def test_against_compose_oracle(self):
        rng = make_rng(72)
        c, heads = 8, 2
        w = sr_weights(rng, c, 2)
        x = rng.standard_normal((1, c, 8, 8)).astype(np.float32)
        p = StmParams(heads=heads, sr_ratio=2)
        got = mixers.sr_attention(Tensor(x), w, p).data
        assert np.abs(got - oracles.sr_oracle(x, w, p)).max() <= 1e-5

    def test_ratio_must_divide(self):
        rng = make_rng(73)
        w = sr_weights(rng, 8, 3)
        with pytest.raises(ShapeError):
            mixers.sr_attention(Tensor(np.ones((1, 8, 8, 8), np.float32)),
                                w, StmParams(heads=2, sr_ratio=3))


class TestDcnv3:
    def test_zero_generator_is_nine_point_mean(self):
        rng = make_rng(80)
        c, g = 4, 2
        eye = np.eye(c, dtype=np.float32)
        w = DcnWeights(
            eye, np.zeros(c, np.float32),
            np.zeros((c, 3, 3), np.float32), np.zeros(c, np.float32),
            np.zeros((c, g * 18), np.float32), np.zeros(g * 18, np.float32),
            np.zeros((c, g * 9), np.float32), np.zeros(g * 9, np.float32),
            eye, np.zeros(c, np.float32),
        )
        x = rng.standard_normal((1, c, 6, 6)).astype(np.float32)
        got = mixers.dcnv3_mixer(Tensor(x), w, StmParams(heads=1, dcn_groups=g)).data
        # independent mean-filter oracle: zero-padded 3x3 box average
        want = oracles.dwconv_loops(x, np.full((c, 3, 3), 1.0 / 9.0), pad=1)
        assert np.abs(got - want).max() <= 1e-6

    def test_one_hot_center_is_identity(self):
        c, g = 4, 2
        eye = np.eye(c, dtype=np.float32)
        mask_b = np.zeros((g, 9), np.float32)
        mask_b[:, 4] = 1000.0  # softmax saturates to an exact one-hot in f32
        w = DcnWeights(
            eye, np.zeros(c, np.float32),
            np.zeros((c, 3, 3), np.float32), np.zeros(c, np.float32),
            np.zeros((c, g * 18), np.float32), np.zeros(g * 18, np.float32),
            np.zeros((c, g * 9), np.float32), mask_b.reshape(-1),
            eye, np.zeros(c, np.float32),
        )
        rng = make_rng(81)
        x = rng.standard_normal((1, c, 5, 5)).astype(np.float32)
        got = mixers.dcnv3_mixer(Tensor(x), w, StmParams(heads=1, dcn_groups=g)).data
        np.testing.assert_allclose(got, x, atol=1e-6)

    def test_against_per_pixel_oracle(self):
        rng = make_rng(82)
        c, g = 8, 2
        w = dcn_weights(rng, c, g, zero_offsets=False)
        x = rng.standard_normal((1, c, 10, 10)).astype(np.float32)
        p = StmParams(heads=2, dcn_groups=g)
        got = mixers.dcnv3_mixer(Tensor(x), w, p).data
        assert np.abs(got - oracles.dcnv3_oracle(x, w, p)).max() <= 1e-5

    def test_modulation_sums_via_constant_values(self):
        # constant value map with zero offsets: interior output equals the
        # constant iff the nine modulation weights sum to one (the random
        # generator weights still produce non-trivial modulations)
        rng = make_rng(83)
        c, g = 4, 2
        eye = np.eye(c, dtype=np.float32)
        w = dcn_weights(rng, c, g, zero_offsets=True)
        w.value_w = eye
        w.value_b = np.zeros(c, np.float32)
        w.proj_w = eye
        w.proj_b = np.zeros(c, np.float32)
        const = np.full((1, c, 7, 7), 2.5, np.float32)
        got = mixers.dcnv3_mixer(Tensor(const), w, StmParams(heads=1, dcn_groups=g)).data
        interior = got[:, :, 1:-1, 1:-1]
        assert np.abs(interior - 2.5).max() <= 1e-6

    def test_groups_must_divide(self):
        rng = make_rng(84)
        w = dcn_weights(rng, 6, 4)
        with pytest.raises(ShapeError):
            mixers.dcnv3_mixer(Tensor(np.ones((1, 6, 4, 4), np.float32)),
                               w, StmParams(heads=1, dcn_groups=4))

    def test_non_finite_offsets_rejected(self):
        c, g = 4, 1
        w = dcn_weights(make_rng(85), c, g, zero_offsets=True)
        w.offset_b = np.full(g * 18, np.inf, np.float32)
        with pytest.raises(ValueError):
            mixers.dcnv3_mixer(Tensor(np.ones((1, c, 4, 4), np.float32)),
                               w, StmParams(heads=1, dcn_groups=g))


class TestSharedInvariants:
    def test_output_shape_preserved(self, rng):
        c, heads = 8, 2
        x = rng.standard_normal((2, c, 9, 11)).astype(np.float32)
        halo_w = window_weights(rng, c, heads, 3, 5)
        p = StmParams(heads=heads, window_size=3, halo_size=1)
        assert mixers.halo_attention(Tensor(x), halo_w, p).shape == x.shape
        swin_w = window_weights(rng, c, heads, 3, 3)
        assert mixers.swin_attention(
            Tensor(x), swin_w, StmParams(heads=heads, window_size=3), shifted=True
        ).shape == x.shape
        dw = dw_weights(rng, c)
        assert mixers.dwconv_mixer(Tensor(x), dw).shape == x.shape
        dc = dcn_weights(rng, c, 2)
        assert mixers.dcnv3_mixer(
            Tensor(x), dc, StmParams(heads=heads, dcn_groups=2)
        ).shape == x.shape
        x44 = rng.standard_normal((2, c, 4, 4)).astype(np.float32)
        sr = sr_weights(rng, c, 2)
        assert mixers.sr_attention(
            Tensor(x44), sr, StmParams(heads=heads, sr_ratio=2)
        ).shape == x44.shape

    def test_constant_input_constant_interior_all_attention(self, rng):
        c, heads = 8, 2
        x = np.full((1, c, 8, 8), 1.1, np.float32)
        halo_w = window_weights(rng, c, heads, 2, 4)
        out = mixers.halo_attention(
            Tensor(x), halo_w, StmParams(heads=heads, window_size=2, halo_size=1),
            zero_bias=True,
        ).data
        assert spatial_spread(out, border=2) <= 1e-5
        sr = sr_weights(rng, c, 2)
        out = mixers.sr_attention(Tensor(x), sr, StmParams(heads=heads, sr_ratio=2)).data
        assert spatial_spread(out) <= 1e-5
