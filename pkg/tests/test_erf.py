"""Receptive-field maps: analytic supports, window enumeration, FD probes."""

import numpy as np
import pytest

from stmlab import ops, oracles
from stmlab.erf import (
    erf_at_50,
    erf_suite,
    gradient_map,
    gradient_map_fn,
    map_to_pgm_bytes,
    noise_images,
)
from stmlab.model import build_model
from stmlab.presets import get_preset
from stmlab.tensor import Tensor

from conftest import make_rng


def enumerate_erf50(norm_map):
    """Independent oracle: try every odd window side in turn."""
    m = np.asarray(norm_map, dtype=np.float64)
    h, w = m.shape
    cy, cx = h // 2, w // 2
    side = max(h, w)
    for r in range(1, 2 * side + 2, 2):
        k = (r - 1) // 2
        window = m[max(0, cy - k) : cy + k + 1, max(0, cx - k) : cx + k + 1]
        if window.sum() >= 0.5 * m.sum():
            return min(r, side) / side
    return 1.0


class TestErfAt50:
    def test_delta_map(self):
        m = np.zeros((224, 224))
        m[112, 112] = 1.0
        assert erf_at_50(m) == 1 / 224

    def test_uniform_nine_by_nine(self):
        m = np.full((9, 9), 1.0 / 81)
        assert erf_at_50(m) == pytest.approx(7 / 9)
        assert enumerate_erf50(m) == pytest.approx(7 / 9)

    def test_three_by_three_support_on_224(self):
        m = np.zeros((224, 224))
        m[111:114, 111:114] = 1.0 / 9
        assert erf_at_50(m) == 3 / 224

    def test_matches_enumeration_oracle_on_random_maps(self):
        rng = make_rng(130)
        for _ in range(10):
            m = rng.random((15, 15))
            m /= m.sum()
            assert erf_at_50(m) == pytest.approx(enumerate_erf50(m))

    def test_zero_map_is_error(self):
        with pytest.raises(ValueError):
            erf_at_50(np.zeros((5, 5)))

    def test_monotone_under_outside_mass(self):
        rng = make_rng(131)
        for _ in range(8):
            m = np.zeros((21, 21))
            m[8:13, 8:13] = rng.random((5, 5)) + 0.1
            base = erf_at_50(m / m.sum())
            grown = m.copy()
            grown[0, 0] += m.sum()  # mass strictly outside the current window
            assert erf_at_50(grown / grown.sum()) >= base


class TestGradientMapToys:
    def test_identity_model_delta(self):
        rng = make_rng(132)
        img = rng.random((3, 16, 16), dtype=np.float32)
        m = gradient_map_fn(lambda x: ops.scale(x, 1.0), img)
        assert m.shape == (16, 16)
        assert m[8, 8] > 0
        m[8, 8] = 0
        assert np.abs(m).max() == 0.0

    def test_single_conv_support(self):
        k = np.ones((3, 3, 3), np.float32)
        rng = make_rng(133)
        img = rng.random((3, 17, 17), dtype=np.float32)
        m = gradient_map_fn(lambda x: ops.depthwise_conv2d(x, k), img)
        support = m > 0
        want = np.zeros((17, 17), bool)
        want[7:10, 7:10] = True
        assert np.array_equal(support, want)

    def test_stacked_convs_triangular_vs_fd(self):
        rng = make_rng(134)
        k1 = rng.standard_normal((2, 3, 3)).astype(np.float32)
        k2 = rng.standard_normal((2, 3, 3)).astype(np.float32)

        def fwd(x):
            return ops.depthwise_conv2d(ops.depthwise_conv2d(x, k1), k2)

        img = rng.random((2, 9, 9), dtype=np.float32)
        m = gradient_map_fn(fwd, img)
        assert (m[2:7, 2:7] != 0).any()
        assert np.abs(m[:2]).max() == 0.0 and np.abs(m[7:]).max() == 0.0

        # per-channel signed gradient against a finite-difference probe
        seed = np.zeros((1, 2, 9, 9), np.float32)
        seed[:, :, 4, 4] = 1.0
        from stmlab.tensor import Tape

        with Tape() as tape:
            xt = tape.watch(Tensor(img[None]))
            y = fwd(xt)
            (gv,) = tape.vjp(y, Tensor(seed), [xt])
        gf = oracles.fd_input_gradient(
            lambda a: oracles.dwconv_loops(oracles.dwconv_loops(a, k1), k2),
            img[None], seed,
        )
        assert oracles.relative_error(gv, gf) <= 1e-3

    def test_all_ones_stack_triangular_weights(self):
        # two stacked all-ones 3x3 convs: influence = 2D convolution of two
        # boxes, i.e. a separable triangle peaking at the centre
        k = np.ones((1, 3, 3), np.float32)
        img = np.ones((1, 11, 11), np.float32)
        m = gradient_map_fn(
            lambda x: ops.depthwise_conv2d(ops.depthwise_conv2d(x, k), k), img
        )
        tri = np.array([1, 2, 3, 2, 1], dtype=np.float64)
        want = np.outer(tri, tri)
        got = m[3:8, 3:8]
        assert np.allclose(got / got.max(), want / want.max(), atol=1e-6)


class TestErfSuite:
    def test_singleton_equals_composition(self):
        cfg = get_preset("dwconv-micro", input_size=64)
        model = build_model(cfg, seed=1)
        img = noise_images(1, 64, seed=7)[0]
        (report,) = erf_suite(model, [img], [1])
        direct = gradient_map(model, img, 1)
        direct = direct / direct.sum()
        np.testing.assert_allclose(report.map, direct, atol=1e-9)
        assert report.erf50 == pytest.approx(erf_at_50(direct))

    def test_duplicate_images_idempotent(self):
        cfg = get_preset("dwconv-micro", input_size=64)
        model = build_model(cfg, seed=1)
        img = noise_images(1, 64, seed=8)[0]
        (once,) = erf_suite(model, [img], [0])
        (twice,) = erf_suite(model, [img, img], [0])
        np.testing.assert_allclose(once.map, twice.map, atol=1e-12)
        assert once.erf50 == twice.erf50

    def test_normalization_invariants(self):
        cfg = get_preset("swin-micro", input_size=64)
        model = build_model(cfg, seed=2)
        reports = erf_suite(model, noise_images(2, 64, seed=9), [2, 3])
        for rep in reports:
            assert rep.map.min() >= 0.0
            assert abs(rep.map.sum() - 1.0) <= 1e-6
            assert 0.0 < rep.erf50 <= 1.0

    def test_conv_support_bounded_by_theoretical_field(self):
        # depthwise-conv models cannot see past the analytic receptive field
        cfg = get_preset("dwconv-micro", input_size=64)
        model = build_model(cfg, seed=3)
        img = noise_images(1, 64, seed=10)[0]
        m = gradient_map(model, img, 0)
        # stage 0: stem (two stride-2 3x3) + blocks of 7x7 depthwise at /4
        # resolution; the field stays well inside a generous half-width bound
        depth0 = cfg.depths[0]
        halfwidth = (1 + 2 * 2) + 4 * (3 * (depth0 + 1) + 3 * depth0)
        cy = 64 // 4 // 2 * 4 + 2  # centre pixel of the stage map, in pixels
        ys, xs = np.nonzero(m)
        assert np.abs(ys - cy).max() <= halfwidth
        assert np.abs(xs - cy).max() <= halfwidth

    def test_global_attention_can_span_input(self):
        cfg = get_preset("sr-micro", input_size=64)
        model = build_model(cfg, seed=4)
        img = noise_images(1, 64, seed=11)[0]
        m = gradient_map(model, img, 3)
        # reduced-token global attention reaches the outer quarter of the map
        assert m[:8].sum() > 0 and m[-8:].sum() > 0

    def test_empty_image_set_is_error(self):
        model = build_model(get_preset("dwconv-micro", input_size=64), seed=0)
        with pytest.raises(ValueError):
            erf_suite(model, [], [0])


class TestPgm:
    def test_pgm_bytes(self):
        m = np.zeros((4, 6))
        m[2, 3] = 2.0
        data = map_to_pgm_bytes(m)
        assert data.startswith(b"P5\n6 4\n255\n")
        pix = np.frombuffer(data[len(b"P5\n6 4\n255\n"):], dtype=np.uint8).reshape(4, 6)
        assert pix[2, 3] == 255 and pix.sum() == 255
