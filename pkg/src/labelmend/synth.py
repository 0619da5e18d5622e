"""Synthetic shapes with simulated pseudo-label noise.

Pseudo labels are produced from the ground truth by three corruptions:
a morphological boundary shift (erosion or dilation by a disk), holes
punched into the foreground, and false-positive blobs in the background.
Each image is either "mild" (shift radius at most 1, no holes) or
"severe" (larger shift plus holes).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .data import Dataset, LabelMask, Sample, save_dataset

FG_RANGE = (0.05, 0.6)
NOISE_AMPLITUDE = 0.15


@dataclass(frozen=True)
class NoiseSpec:
    severity: float = 0.5
    boundary_radius_max: int = 8
    hole_count_max: int = 4
    blob_count_max: int = 2
    severe_fraction: float = 0.3
    # probability that the boundary shift shrinks rather than grows the object
    erode_prob: float = 0.5
    # a mild image's boundary moves by one pixel with probability mild_shift * severity
    mild_shift: float = 0.4

    def __post_init__(self):
        for name in ("severity", "severe_fraction", "erode_prob", "mild_shift"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


def sample_rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), *stream])


def disk(radius: int) -> np.ndarray:
    r = int(radius)
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return yy * yy + xx * xx <= r * r


def _draw_shape(rng, h, w):
    yy, xx = np.mgrid[0:h, 0:w]
    cy, cx = rng.uniform(0.15 * h, 0.85 * h), rng.uniform(0.15 * w, 0.85 * w)
    ry, rx = rng.uniform(0.08 * h, 0.3 * h), rng.uniform(0.08 * w, 0.3 * w)
    if rng.random() < 0.5:
        return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    return (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)


def _one_sample(rng, h, w):
    while True:
        mask = np.zeros((h, w), dtype=bool)
        for _ in range(rng.integers(1, 4)):
            mask |= _draw_shape(rng, h, w)
        if FG_RANGE[0] <= mask.mean() <= FG_RANGE[1]:
            break
    blurred = ndimage.uniform_filter(mask.astype(np.float64), size=3, mode="nearest")
    noise = rng.uniform(-NOISE_AMPLITUDE, NOISE_AMPLITUDE, size=(h, w))
    image = np.clip(blurred + noise, 0.0, 1.0)
    return image, LabelMask(mask.astype(np.uint8), 2, "ground_truth")


def gen_shapes(n: int, h: int, w: int, seed: int, stream: int = 0):
    """``n`` (image, ground-truth mask) pairs of 1-3 ellipses/rectangles."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if h % 4 or w % 4 or h < 4 or w < 4:
        raise ValueError(f"size {h}x{w} must be divisible by 4")
    return [_one_sample(sample_rng(seed, stream, i), h, w) for i in range(n)]


def _stamp(mask, centers, radii):
    h, w = mask.shape
    yy, xx = np.mgrid[0:h, 0:w]
    out = np.zeros_like(mask)
    for (cy, cx), r in zip(centers, radii):
        out |= (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    return out


def corrupt(gt: LabelMask, spec: NoiseSpec, rng: np.random.Generator):
    """Return (pseudo label, regime) for one ground-truth mask."""
    if gt.provenance != "ground_truth":
        raise ValueError("noise is injected into ground-truth masks only")
    fg = gt.data == 1
    severe = bool(rng.random() < spec.severe_fraction)
    regime = "severe" if severe else "mild"
    s = spec.severity

    r_cap = math.ceil(s * spec.boundary_radius_max)
    if severe:
        radius = int(rng.integers(min(1, r_cap), r_cap + 1))
    else:
        radius = int(rng.random() < spec.mild_shift * s)
    erode = rng.random() < spec.erode_prob
    noisy = fg.copy()
    if radius:
        op = ndimage.binary_erosion if erode else ndimage.binary_dilation
        noisy = op(fg, structure=disk(radius), border_value=0)

    if severe:
        n_holes = int(rng.integers(0, round(s * spec.hole_count_max) + 1))
        ys, xs = np.nonzero(fg)
        if n_holes and ys.size:
            pick = rng.integers(0, ys.size, size=n_holes)
            radii = rng.uniform(1.0, 1.0 + 4.0 * s, size=n_holes)
            noisy &= ~_stamp(noisy, zip(ys[pick], xs[pick]), radii)

    n_blobs = int(rng.integers(0, round(s * spec.blob_count_max) + 1))
    ys, xs = np.nonzero(~fg)
    if n_blobs and ys.size:
        pick = rng.integers(0, ys.size, size=n_blobs)
        radii = rng.uniform(0.5, 0.5 + 2.0 * s, size=n_blobs)
        noisy |= _stamp(noisy, zip(ys[pick], xs[pick]), radii)

    if s == 0.0:
        noisy = fg
    return LabelMask(noisy.astype(np.uint8), gt.k, "pseudo"), regime


def inject_noise(gt: LabelMask, spec: NoiseSpec, seed: int) -> LabelMask:
    """Simulated pseudo label for ``gt``; severity 0 returns ``gt`` unchanged."""
    return corrupt(gt, spec, np.random.default_rng(seed))[0]


def make_dataset(n: int, h: int, w: int, seed: int, spec: NoiseSpec,
                 stream: int = 0, prefix: str = "s"):
    """Build a Dataset plus noise-report rows (id, regime, disagreement_rate)."""
    samples, report = [], []
    for i, (image, gt) in enumerate(gen_shapes(n, h, w, seed, stream)):
        sid = f"{prefix}{i:04d}"
        pseudo, regime = corrupt(gt, spec, sample_rng(seed, stream, i, 1))
        rate = float(np.mean(pseudo.data != gt.data))
        samples.append(Sample(sid, image, pseudo, gt))
        report.append({"id": sid, "regime": regime, "disagreement_rate": rate})
    return Dataset(tuple(samples)), report


def write_noise_report(rows, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "regime", "disagreement_rate"])
        for r in rows:
            writer.writerow([r["id"], r["regime"], f"{r['disagreement_rate']:.6f}"])


def write_synthetic(out, n: int, h: int, w: int, seed: int, spec: NoiseSpec,
                    stream: int = 0, prefix: str = "s"):
    dataset, report = make_dataset(n, h, w, seed, spec, stream, prefix)
    out = Path(out)
    save_dataset(dataset, out)
    write_noise_report(report, out / "noise_report.csv")
    return dataset
