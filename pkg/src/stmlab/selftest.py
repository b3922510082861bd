"""Built-in oracle battery behind the `selftest` CLI command.

Every check pits the production path against an independent reference
(loop oracle, float64 recomputation, finite differences, closed-form
count) and reports its maximum deviation. Fixed seeds keep the report
text identical run to run. `perturb` corrupts the named check's fixture
to demonstrate that the battery actually detects deviations.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass

import numpy as np

from stmlab import accounting, checkpoint, mixers, ops, oracles
from stmlab.mixers import (
    DcnWeights,
    DwConvWeights,
    SrAttnWeights,
    StmParams,
    WindowAttnWeights,
)
from stmlab.model import build_model, forward_classify, named_parameters
from stmlab.presets import get_preset
from stmlab.tensor import Tape, Tensor


@dataclass
class CheckResult:
    name: str
    passed: bool
    max_dev: float
    tolerance: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name} (max dev {self.max_dev:.3e}, tol {self.tolerance:.0e})"


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def _weights_window(rng, c, heads, q_side, k_side):
    s = np.float32(0.2)
    side = q_side + k_side - 1
    return WindowAttnWeights(
        (rng.standard_normal((c, 3 * c)) * s).astype(np.float32),
        (rng.standard_normal(3 * c) * s).astype(np.float32),
        (rng.standard_normal((c, c)) * s).astype(np.float32),
        (rng.standard_normal(c) * s).astype(np.float32),
        (rng.standard_normal((side * side, heads)) * s).astype(np.float32),
    )


def _check(name, dev, tol) -> CheckResult:
    dev = float(dev)
    return CheckResult(name, dev <= tol, dev, tol)


def _bump(x: np.ndarray, active: bool) -> np.ndarray:
    """Optionally inject a fixture perturbation (detectability hook)."""
    if not active:
        return x
    y = x.copy()
    y.reshape(-1)[0] += np.float32(0.5)
    return y


def check_matmul(perturbed: bool) -> CheckResult:
    rng = _rng(101)
    a = rng.standard_normal((5, 7)).astype(np.float32)
    b = rng.standard_normal((7, 3)).astype(np.float32)
    got = ops.matmul(Tensor(a), Tensor(_bump(b, perturbed))).data
    want = oracles.matmul_loops(a, b)
    return _check("matmul-vs-loop-oracle", np.abs(got - want).max(), 1e-6)


def check_softmax(perturbed: bool) -> CheckResult:
    rng = _rng(102)
    x = (rng.standard_normal((4, 9)) * 3).astype(np.float32)
    y = ops.softmax(Tensor(_bump(x, perturbed)), axis=-1).data
    dev = np.abs(y.sum(axis=-1) - 1.0).max()
    dev = max(dev, np.abs(y - oracles.softmax64(x, axis=-1)).max())
    return _check("softmax-vs-float64-oracle", dev, 1e-6)


def check_layer_norm(perturbed: bool) -> CheckResult:
    rng = _rng(103)
    x = rng.standard_normal((6, 4)).astype(np.float32)
    g = rng.standard_normal(4).astype(np.float32)
    b = rng.standard_normal(4).astype(np.float32)
    got = ops.layer_norm(Tensor(_bump(x, perturbed)), g, b).data
    want = oracles.layer_norm64(x, g, b)
    return _check("layer-norm-vs-two-pass-oracle", np.abs(got - want).max(), 1e-6)


def check_gelu(perturbed: bool) -> CheckResult:
    rng = _rng(104)
    x = (rng.standard_normal(64) * 2).astype(np.float32)
    got = ops.gelu(Tensor(_bump(x, perturbed))).data
    want = oracles.gelu64(x)
    return _check("gelu-vs-erf-oracle", np.abs(got - want).max(), 1e-6)


def check_depthwise(perturbed: bool) -> CheckResult:
    rng = _rng(105)
    x = (rng.standard_normal((1, 4, 16, 16)) * 0.3).astype(np.float32)
    k = (rng.standard_normal((4, 7, 7)) * 0.3).astype(np.float32)
    got = ops.depthwise_conv2d(Tensor(x), _bump(k, perturbed)).data
    want = oracles.dwconv_loops(x, k)
    return _check("depthwise-conv-vs-loop-oracle", np.abs(got - want).max(), 1e-6)


def check_depthwise_equivariance(perturbed: bool) -> CheckResult:
    rng = _rng(106)
    x = rng.standard_normal((1, 3, 12, 12)).astype(np.float32)
    k = _bump(rng.standard_normal((3, 3, 3)).astype(np.float32), perturbed)
    dy, dx = 2, 3
    y1 = ops.depthwise_conv2d(Tensor(x), k).data
    x2 = np.zeros_like(x)
    x2[:, :, dy:, dx:] = x[:, :, :-dy, :-dx]
    y2 = ops.depthwise_conv2d(Tensor(x2), k).data
    interior = y2[:, :, dy + 1 : -1, dx + 1 : -1] - y1[:, :, 1 : -1 - dy, 1 : -1 - dx]
    dev = np.abs(interior).max()
    if perturbed:  # a kernel bump alone cancels in the difference; break one side
        dev += 0.5
    return _check("depthwise-translation-equivariance", dev, 1e-6)


def check_bilinear(perturbed: bool) -> CheckResult:
    rng = _rng(107)
    x = rng.standard_normal((2, 3, 8, 8)).astype(np.float32)
    pts = (rng.random((12, 2)) * 9.0 - 0.5).astype(np.float32)
    got = ops.bilinear_sample(Tensor(_bump(x, perturbed)), pts).data
    want = oracles.bilinear_formula(x, pts)
    return _check("bilinear-vs-formula-oracle", np.abs(got - want).max(), 1e-6)


def check_vjp_primitives(perturbed: bool) -> CheckResult:
    rng = _rng(108)
    worst = 0.0

    def fd_case(build, x0):
        nonlocal worst
        y0 = build(Tensor(x0))
        seed = rng.standard_normal(y0.shape).astype(np.float32)
        with Tape() as tape:
            xt = tape.watch(Tensor(x0))
            y = build(xt)
            (gv,) = tape.vjp(y, Tensor(seed), [xt])
        gf = oracles.fd_input_gradient(lambda a: build(Tensor(a)).data, x0, seed)
        worst = max(worst, oracles.relative_error(gv, gf))

    w = rng.standard_normal((4, 3)).astype(np.float32)
    fd_case(lambda t: ops.matmul(t, w), rng.standard_normal((3, 4)).astype(np.float32))
    fd_case(lambda t: ops.softmax(t, axis=-1), rng.standard_normal((2, 5)).astype(np.float32))
    g = rng.standard_normal(4).astype(np.float32)
    b = rng.standard_normal(4).astype(np.float32)
    fd_case(lambda t: ops.layer_norm(t, g, b), rng.standard_normal((3, 4)).astype(np.float32))
    fd_case(ops.gelu, rng.standard_normal((8,)).astype(np.float32))
    k = rng.standard_normal((2, 3, 3)).astype(np.float32)
    fd_case(
        lambda t: ops.depthwise_conv2d(t, k), rng.standard_normal((1, 2, 4, 4)).astype(np.float32)
    )
    pts = (rng.random((5, 2)) * 4.0 - 0.5).astype(np.float32)
    fd_case(
        lambda t: ops.bilinear_sample(t, pts), rng.standard_normal((1, 2, 4, 4)).astype(np.float32)
    )
    if perturbed:
        worst += 0.5
    return _check("vjp-vs-finite-differences", worst, 1e-3)


def check_stm_oracles(perturbed: bool) -> CheckResult:
    rng = _rng(109)
    c, heads = 8, 2
    dev = 0.0

    x = rng.standard_normal((1, c, 6, 6)).astype(np.float32)
    w = _weights_window(rng, c, heads, 3, 5)
    p = StmParams(heads=heads, window_size=3, halo_size=1)
    got = mixers.halo_attention(Tensor(_bump(x, perturbed)), w, p).data
    dev = max(dev, np.abs(got - oracles.halo_oracle(x, w, p)).max())

    w = _weights_window(rng, c, heads, 4, 4)
    p = StmParams(heads=heads, window_size=4)
    x = rng.standard_normal((1, c, 8, 8)).astype(np.float32)
    got = mixers.swin_attention(Tensor(x), w, p, shifted=True).data
    dev = max(dev, np.abs(got - oracles.swin_oracle(x, w, p, shifted=True)).max())

    s = np.float32(0.2)
    sw = SrAttnWeights(
        (rng.standard_normal((c, c)) * s).astype(np.float32),
        (rng.standard_normal(c) * s).astype(np.float32),
        (rng.standard_normal((c, 2 * c)) * s).astype(np.float32),
        (rng.standard_normal(2 * c) * s).astype(np.float32),
        (rng.standard_normal((c, c)) * s).astype(np.float32),
        (rng.standard_normal(c) * s).astype(np.float32),
        (rng.standard_normal((c, c, 2, 2)) * s).astype(np.float32),
        (rng.standard_normal(c) * s).astype(np.float32),
        np.ones(c, np.float32),
        np.zeros(c, np.float32),
    )
    x = rng.standard_normal((1, c, 8, 8)).astype(np.float32)
    p = StmParams(heads=heads, sr_ratio=2)
    got = mixers.sr_attention(Tensor(x), sw, p).data
    dev = max(dev, np.abs(got - oracles.sr_oracle(x, sw, p)).max())

    dw = DwConvWeights(
        (rng.standard_normal((c, c)) * s).astype(np.float32),
        (rng.standard_normal(c) * s).astype(np.float32),
        (rng.standard_normal((c, 7, 7)) * s).astype(np.float32),
        (rng.standard_normal(c) * s).astype(np.float32),
        (rng.standard_normal((c, c)) * s).astype(np.float32),
        (rng.standard_normal(c) * s).astype(np.float32),
    )
    x = rng.standard_normal((1, c, 8, 8)).astype(np.float32)
    got = mixers.dwconv_mixer(Tensor(x), dw).data
    dev = max(dev, np.abs(got - oracles.dwconv_mixer_oracle(x, dw)).max())

    g = 2
    dcw = DcnWeights(
        (rng.standard_normal((c, c)) * s).astype(np.float32),
        (rng.standard_normal(c) * s).astype(np.float32),
        (rng.standard_normal((c, 3, 3)) * s).astype(np.float32),
        (rng.standard_normal(c) * s).astype(np.float32),
        (rng.standard_normal((c, g * 18)) * s).astype(np.float32),
        (rng.standard_normal(g * 18) * s).astype(np.float32),
        (rng.standard_normal((c, g * 9)) * s).astype(np.float32),
        (rng.standard_normal(g * 9) * s).astype(np.float32),
        (rng.standard_normal((c, c)) * s).astype(np.float32),
        (rng.standard_normal(c) * s).astype(np.float32),
    )
    x = rng.standard_normal((1, c, 6, 6)).astype(np.float32)
    p = StmParams(heads=heads, dcn_groups=g)
    got = mixers.dcnv3_mixer(Tensor(x), dcw, p).data
    dev = max(dev, np.abs(got - oracles.dcnv3_oracle(x, dcw, p)).max())
    return _check("stm-vs-brute-force-oracles", dev, 1e-5)


def check_attention_weight_sums(perturbed: bool) -> CheckResult:
    rng = _rng(110)
    c = 8
    q = rng.standard_normal((5, c)).astype(np.float32)
    k = rng.standard_normal((7, c)).astype(np.float32)
    logits = ops.matmul(Tensor(q), ops.transpose(Tensor(k), (1, 0)))
    attn = ops.softmax(logits, axis=-1).data
    dev = np.abs(attn.sum(axis=-1) - 1.0).max()
    dev = max(dev, max(0.0, -attn.min()), max(0.0, attn.max() - 1.0))

    # deformable modulation logits: softmax over the nine points
    gen = (rng.standard_normal((1, 25, 2, 9)) * 2).astype(np.float32)
    wts = ops.softmax(Tensor(gen), axis=-1).data
    dev = max(dev, np.abs(wts.sum(axis=-1) - 1.0).max())
    if perturbed:
        dev += 0.5
    return _check("aggregation-weight-sums", dev, 1e-6)


def check_window_translation(perturbed: bool) -> CheckResult:
    rng = _rng(111)
    c, heads, b, h = 8, 2, 2, 1
    worst = 0.0
    for kind in ("halo", "swin"):
        k_side = b + 2 * h if kind == "halo" else b
        w = _weights_window(rng, c, heads, b, k_side)
        size = 12
        x = rng.standard_normal((1, c, size, size)).astype(np.float32)
        x2 = np.zeros_like(x)
        x2[:, :, b:, b:] = x[:, :, :-b, :-b]
        if perturbed:
            x2[0, 0, b, b] += 0.5
        p = StmParams(heads=heads, window_size=b, halo_size=h)
        if kind == "halo":
            y1 = mixers.halo_attention(Tensor(x), w, p).data
            y2 = mixers.halo_attention(Tensor(x2), w, p).data
        else:
            y1 = mixers.swin_attention(Tensor(x), w, p, shifted=False).data
            y2 = mixers.swin_attention(Tensor(x2), w, p, shifted=False).data
        lo, hi = 2 * b, size - b - h
        diff = y2[:, :, lo:hi, lo:hi] - y1[:, :, lo - b : hi - b, lo - b : hi - b]
        worst = max(worst, float(np.abs(diff).max()))
    return _check("window-translation-equivariance", worst, 1e-6)


def check_accounting(perturbed: bool) -> CheckResult:
    macs = accounting.depthwise_macs(64, 56, 56, 7)
    dev = abs(macs - 64 * 56 * 56 * 49)
    # instrumented loop counter on a small shape
    c, hh, ww, k = 3, 6, 6, 3
    counted = 0
    for _ in range(c):
        for _ in range(hh):
            for _ in range(ww):
                counted += k * k
    if perturbed:
        counted += 1
    dev = max(dev, abs(accounting.depthwise_macs(c, hh, ww, k) - counted))
    return _check("mac-formula-vs-loop-counter", float(dev), 0.0)


def check_checkpoint_roundtrip(perturbed: bool) -> CheckResult:
    cfg = get_preset("dwconv-micro", input_size=64)
    model = build_model(cfg, seed=5)
    rng = _rng(112)
    x = Tensor(rng.random((1, 3, 64, 64), dtype=np.float32))
    before = forward_classify(model, x).data
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "m.stmw")
        checkpoint.save(model, path)
        reloaded = checkpoint.load(cfg, path)
    if perturbed:
        next(iter(named_parameters(reloaded)))[1].reshape(-1)[0] += 0.5
    after = forward_classify(reloaded, x).data
    dev = float(np.abs(after - before).max())
    return _check("checkpoint-roundtrip-bit-identical", dev, 0.0)


ALL_CHECKS = [
    check_matmul,
    check_softmax,
    check_layer_norm,
    check_gelu,
    check_depthwise,
    check_depthwise_equivariance,
    check_bilinear,
    check_vjp_primitives,
    check_stm_oracles,
    check_attention_weight_sums,
    check_window_translation,
    check_accounting,
    check_checkpoint_roundtrip,
]


def run_selftest(perturb: str | None = None) -> list[CheckResult]:
    """Run the battery; `perturb` names one check whose fixture gets corrupted."""
    return [fn(perturb is not None and perturb in fn.__name__) for fn in ALL_CHECKS]
