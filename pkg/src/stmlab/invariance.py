"""Geometric-invariance sweeps: translation, rotation, scaling.

Each sweep transforms probe images over a magnitude grid and reports
prediction consistency (fraction of images keeping their argmax label,
ties broken toward the lowest class index) plus accuracy when labels are
supplied. Translation averages the four axis directions per magnitude.
The scale sweep reuses classification consistency; detection-style box
matching is out of scope, so scale rows are labeled "scale(adapted)" in
CSV output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from stmlab import kernels
from stmlab.model import Model, forward_classify
from stmlab.tensor import Tensor

TRANSLATE_GRID = tuple(float(v) for v in range(0, 65, 8))  # 9 magnitudes
ROTATE_GRID = tuple(float(v) for v in range(0, 46, 5))  # 10 magnitudes
SCALE_GRID = tuple(0.25 * k for k in range(1, 13))  # 12 magnitudes

_IDENTITY = {"translate": 0.0, "rotate": 0.0, "scale": 1.0}


@dataclass(frozen=True)
class TransformSpec:
    kind: str  # translate | rotate | scale
    magnitudes: tuple[float, ...]
    fill: float = 0.0

    def __post_init__(self):
        if self.kind not in _IDENTITY:
            raise ValueError(f"unknown transform kind {self.kind!r}")
        mags = self.magnitudes
        if any(b <= a for a, b in zip(mags, mags[1:])):
            raise ValueError("magnitudes must be strictly increasing")
        if _IDENTITY[self.kind] not in mags:
            raise ValueError(
                f"{self.kind} grid must contain the identity magnitude "
                f"{_IDENTITY[self.kind]}"
            )

    @property
    def identity_magnitude(self) -> float:
        return _IDENTITY[self.kind]


def default_spec(kind: str, fill: float = 0.0) -> TransformSpec:
    grids = {"translate": TRANSLATE_GRID, "rotate": ROTATE_GRID, "scale": SCALE_GRID}
    if kind not in grids:
        raise ValueError(f"unknown transform kind {kind!r}")
    return TransformSpec(kind, grids[kind], fill)


@dataclass
class SweepRow:
    magnitude: float
    consistency: float
    accuracy: float | None
    n_images: int


@dataclass
class InvarianceReport:
    kind: str
    rows: list[SweepRow] = field(default_factory=list)

    def csv_lines(self) -> list[str]:
        label = "scale(adapted)" if self.kind == "scale" else self.kind
        lines = ["transform,magnitude,consistency,accuracy,n"]
        for r in self.rows:
            acc = "" if r.accuracy is None else f"{r.accuracy:.6f}"
            lines.append(f"{label},{r.magnitude:g},{r.consistency:.6f},{acc},{r.n_images}")
        return lines


# ---------------------------------------------------------------------------
# image transforms ([C,H,W] float arrays)


def translate_image(img: np.ndarray, dy: int, dx: int, fill: float = 0.0) -> np.ndarray:
    """Shift content by (dy, dx) pixels; vacated pixels become `fill`."""
    img = np.asarray(img, dtype=np.float32)
    c, h, w = img.shape
    if abs(dy) >= h or abs(dx) >= w:
        raise ValueError(f"shift {(dy, dx)} must be smaller than the image side")
    if dy == 0 and dx == 0:
        return img.copy()
    out = np.full_like(img, np.float32(fill))
    ys_dst = slice(max(dy, 0), h + min(dy, 0))
    xs_dst = slice(max(dx, 0), w + min(dx, 0))
    ys_src = slice(max(-dy, 0), h + min(-dy, 0))
    xs_src = slice(max(-dx, 0), w + min(-dx, 0))
    out[:, ys_dst, xs_dst] = img[:, ys_src, xs_src]
    return out


def _warp(img: np.ndarray, src_y: np.ndarray, src_x: np.ndarray, fill: float,
          out_hw: tuple[int, int]) -> np.ndarray:
    """Bilinear pull-back at the given source coordinates, constant fill.

    Sampling (img - fill) with zero outside the border and adding fill back
    is exactly constant-fill interpolation.
    """
    c = img.shape[0]
    shifted = (img - np.float32(fill))[None]  # [1,C,H,W]
    ys = np.ascontiguousarray(src_y.reshape(1, -1), dtype=np.float32)
    xs = np.ascontiguousarray(src_x.reshape(1, -1), dtype=np.float32)
    sampled = kernels.bilinear_gather(np.ascontiguousarray(shifted), ys, xs)
    return sampled.reshape(c, *out_hw) + np.float32(fill)


def rotate_image(img: np.ndarray, degrees: float, fill: float = 0.0) -> np.ndarray:
    """Rotate about the image centre with bilinear inverse-mapping."""
    img = np.asarray(img, dtype=np.float32)
    if not -180.0 <= degrees <= 180.0:
        raise ValueError("rotation angle must lie in [-180, 180] degrees")
    if degrees == 0.0:
        return img.copy()
    _, h, w = img.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = math.radians(degrees)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64) - cy,
                         np.arange(w, dtype=np.float64) - cx, indexing="ij")
    src_y = cy + cos_t * yy + sin_t * xx
    src_x = cx - sin_t * yy + cos_t * xx
    return _warp(img, src_y, src_x, fill, (h, w))


def scale_image(img: np.ndarray, factor: float, fill: float = 0.0) -> np.ndarray:
    """Bilinear resize by `factor`, then centre-crop or centre-pad back.

    Output extents always equal the input extents; factor > 1 crops the
    enlarged image, factor < 1 pads the shrunken one with `fill`.
    """
    img = np.asarray(img, dtype=np.float32)
    if factor <= 0:
        raise ValueError("scale factor must be positive")
    if factor == 1.0:
        return img.copy()
    c, h, w = img.shape
    nh, nw = int(round(h * factor)), int(round(w * factor))
    if nh < 1 or nw < 1:
        raise ValueError(f"scale factor {factor} collapses the image")
    # half-pixel-centred sampling grid
    src_y = (np.arange(nh, dtype=np.float64)[:, None] + 0.5) * (h / nh) - 0.5
    src_x = (np.arange(nw, dtype=np.float64)[None, :] + 0.5) * (w / nw) - 0.5
    src_y, src_x = np.broadcast_arrays(src_y, src_x)
    resized = _warp(img, src_y, src_x, fill, (nh, nw))
    out = np.full((c, h, w), np.float32(fill), dtype=np.float32)
    if nh >= h:
        top, left = (nh - h) // 2, (nw - w) // 2
        out[:] = resized[:, top : top + h, left : left + w]
    else:
        top, left = (h - nh) // 2, (w - nw) // 2
        out[:, top : top + nh, left : left + nw] = resized
    return out


def apply_transform(img: np.ndarray, kind: str, magnitude: float, direction: int = 0,
                    fill: float = 0.0) -> np.ndarray:
    """One transformed copy; `direction` picks the translation axis (0..3)."""
    if kind == "translate":
        m = int(round(magnitude))
        dy, dx = [(m, 0), (-m, 0), (0, m), (0, -m)][direction]
        return translate_image(img, dy, dx, fill)
    if kind == "rotate":
        return rotate_image(img, magnitude, fill)
    if kind == "scale":
        return scale_image(img, magnitude, fill)
    raise ValueError(f"unknown transform kind {kind!r}")


# ---------------------------------------------------------------------------
# the sweep


def _predict(model, images: list[np.ndarray]) -> np.ndarray:
    batch = np.stack([np.asarray(im, dtype=np.float32) for im in images])
    if isinstance(model, Model):
        logits = forward_classify(model, Tensor(batch)).data
    else:  # any callable [N,C,H,W] -> [N, classes] works (toy classifiers)
        logits = np.asarray(model(batch))
    return np.argmax(logits, axis=1)  # numpy argmax takes the lowest tied index


def consistency_sweep(model, images, labels=None,
                      spec: TransformSpec | None = None) -> InvarianceReport:
    """Prediction-consistency (and accuracy) across one magnitude grid.

    `model` is a built Model or any callable mapping an image batch to a
    logits array.
    """
    images = [np.asarray(im, dtype=np.float32) for im in images]
    if not images:
        raise ValueError("consistency_sweep needs at least one image")
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape[0] != len(images):
            raise ValueError("labels count does not match image count")
    if spec is None:
        spec = default_spec("translate")

    base_pred = _predict(model, images)
    directions = range(4) if spec.kind == "translate" else (0,)
    report = InvarianceReport(spec.kind)
    for mag in spec.magnitudes:
        cons, accs = [], []
        for d in directions:
            if mag == spec.identity_magnitude:
                pred = base_pred  # T_identity(x) == x exactly
            else:
                pred = _predict(
                    model, [apply_transform(im, spec.kind, mag, d, spec.fill) for im in images]
                )
            cons.append(float(np.mean(pred == base_pred)))
            if labels is not None:
                accs.append(float(np.mean(pred == labels)))
        report.rows.append(
            SweepRow(
                magnitude=mag,
                consistency=float(np.mean(cons)),
                accuracy=float(np.mean(accs)) if labels is not None else None,
                n_images=len(images),
            )
        )
    return report
