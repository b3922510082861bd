"""Effective-receptive-field maps and the ERF@50 metric.

For a chosen stage, the probe objective is the sum over channels of the
feature at the centre spatial location; the map is the channel-summed
absolute input gradient of that objective. Magnitude maps are averaged
over probe images before normalization (signed averaging would cancel).
ERF@50 is the side/input ratio of the smallest centred odd square window
holding at least half of the map's mass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from stmlab.model import Model, forward_features
from stmlab.tensor import Tape, Tensor


@dataclass
class ErfReport:
    stage: int
    map: np.ndarray  # [H_in, W_in], entries >= 0, sums to 1
    erf50: float
    n_images: int


def gradient_map_fn(forward, image: np.ndarray) -> np.ndarray:
    """Gradient map of an arbitrary taped map-to-map forward callable.

    `forward` maps an input Tensor [1,C,H,W] to a feature Tensor
    [1,C',H',W']; the probe seeds all channels at the centre location.
    """
    img = np.asarray(image, dtype=np.float32)
    if img.ndim == 3:
        img = img[None]
    with Tape() as tape:
        x = tape.watch(Tensor(img))
        feats = forward(x)
        n, c, h, w = feats.shape
        seed = np.zeros((n, c, h, w), dtype=np.float32)
        seed[:, :, h // 2, w // 2] = 1.0
        (grad,) = tape.vjp(feats, Tensor(seed), [x])
    return np.abs(grad[0]).sum(axis=0)


def gradient_map(model: Model, image: np.ndarray, stage: int) -> np.ndarray:
    """Channel-summed |d(centre stage activation sum)/d input|, [H_in, W_in]."""
    if not 0 <= stage <= 3:
        raise ValueError("stage must be in 0..3")
    return gradient_map_fn(
        lambda x: forward_features(model, x, upto=stage)[stage], image
    )


def erf_at_50(norm_map: np.ndarray) -> float:
    """Smallest odd window side holding >= 50% of the mass, over input side.

    The window is centred at (H//2, W//2) and clipped at the borders; the
    reported side is capped at the input side so the ratio stays in (0,1].
    """
    m = np.asarray(norm_map, dtype=np.float64)
    total = m.sum()
    if total <= 0:
        raise ValueError("gradient map has no mass")
    h, w = m.shape
    cy, cx = h // 2, w // 2
    side = max(h, w)
    r = 1
    while True:
        k = (r - 1) // 2
        window = m[max(0, cy - k) : cy + k + 1, max(0, cx - k) : cx + k + 1]
        if window.sum() >= 0.5 * total or r >= 2 * side + 1:
            break
        r += 2
    return min(r, side) / side


def erf_suite(model: Model, images, stages) -> list[ErfReport]:
    """Per-stage reports; magnitude maps are image-averaged, then normalized."""
    images = list(images)
    if not images:
        raise ValueError("erf_suite needs at least one probe image")
    stages = list(stages)
    reports = []
    for stage in stages:
        acc = None
        for img in images:
            g = gradient_map(model, img, stage).astype(np.float64)
            acc = g if acc is None else acc + g
        acc /= len(images)
        total = acc.sum()
        if total <= 0:
            raise ValueError(f"stage {stage}: gradient map has no mass")
        norm = acc / total
        reports.append(ErfReport(stage, norm, erf_at_50(norm), len(images)))
    return reports


def noise_images(count: int, side: int, seed: int = 42) -> list[np.ndarray]:
    """Seeded uniform-noise probes for when no image directory is given."""
    rng = np.random.Generator(np.random.Philox(seed))
    return [rng.random((3, side, side), dtype=np.float32) for _ in range(count)]


def map_to_pgm_bytes(norm_map: np.ndarray, log_scale: bool = False) -> bytes:
    """8-bit max-normalized PGM rendering of a gradient map."""
    m = np.asarray(norm_map, dtype=np.float64)
    if log_scale:
        m = np.log1p(m / max(m[m > 0].min(), 1e-30)) if (m > 0).any() else m
    peak = m.max()
    scaled = np.zeros_like(m) if peak <= 0 else m / peak
    pix = np.clip(np.round(scaled * 255.0), 0, 255).astype(np.uint8)
    header = f"P5\n{m.shape[1]} {m.shape[0]}\n255\n".encode("ascii")
    return header + pix.tobytes()


def csv_lines(reports: list[ErfReport]) -> list[str]:
    lines = ["stage,erf50,n_images"]
    lines += [f"{r.stage},{r.erf50:.8f},{r.n_images}" for r in reports]
    return lines
