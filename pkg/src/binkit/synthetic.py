"""Synthetic degraded document pages with exact ground truth.

Pages carry lines of pseudo-glyphs (thick polylines and dots) over a
background with an uneven illumination ramp, blotchy paper texture, stains,
mirrored bleed-through from the verso and sensor noise. Only the recto strokes
are foreground, so the ground truth is exact. ``degradation`` scales every
nuisance from 0 (flat paper, no noise) to 1.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import imagery
from .data import DatasetManifest, Record

INK_BAND = (0.02, 0.30)
_MAX_TRIES = 50


def _segment(canvas: np.ndarray, p0, p1, radius: float) -> None:
    """Rasterize a round-capped thick segment into a boolean canvas."""
    h, w = canvas.shape
    r = int(np.ceil(radius))
    y0 = max(int(min(p0[0], p1[0])) - r, 0)
    y1 = min(int(max(p0[0], p1[0])) + r + 2, h)
    x0 = max(int(min(p0[1], p1[1])) - r, 0)
    x1 = min(int(max(p0[1], p1[1])) + r + 2, w)
    if y0 >= y1 or x0 >= x1:
        return
    yy, xx = np.mgrid[y0:y1, x0:x1]
    d = np.subtract(p1, p0, dtype=float)
    length2 = float(d @ d)
    py, px = yy - p0[0], xx - p0[1]
    t = np.clip((py * d[0] + px * d[1]) / length2, 0.0, 1.0) if length2 > 0 else 0.0
    dist2 = (py - t * d[0]) ** 2 + (px - t * d[1]) ** 2
    canvas[y0:y1, x0:x1] |= dist2 <= radius * radius


def text_layer(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    """Lines of random glyphs built from strokes and dots."""
    h, w = shape
    canvas = np.zeros(shape, dtype=bool)
    line_h = int(rng.integers(16, 34))
    glyph_h = line_h * rng.uniform(0.45, 0.7)
    margin = int(rng.integers(4, max(5, w // 12)))
    y = float(rng.integers(2, max(3, line_h)))
    while y + glyph_h < h - 2:
        if rng.random() < 0.12:
            y += line_h
            continue
        x = float(margin + rng.integers(0, 3 * line_h))
        line_end = w - margin - rng.integers(0, 4 * line_h)
        radius = rng.uniform(0.7, 1.8)
        while x < line_end:
            word = int(rng.integers(2, 9))
            for _ in range(word):
                gw = glyph_h * rng.uniform(0.5, 0.9)
                if x + gw >= line_end:
                    break
                for _ in range(int(rng.integers(1, 4))):
                    npts = int(rng.integers(2, 4))
                    pts = np.column_stack([
                        y + rng.uniform(0, glyph_h, npts),
                        x + rng.uniform(0, gw, npts),
                    ])
                    for a, b in zip(pts[:-1], pts[1:]):
                        _segment(canvas, a, b, radius)
                if rng.random() < 0.15:
                    c = (y - rng.uniform(2, 5), x + gw / 2)
                    _segment(canvas, c, c, radius + rng.uniform(0.5, 1.5))
                x += gw + rng.uniform(1, 4)
            x += rng.uniform(0.6, 1.4) * glyph_h
        y += line_h * rng.uniform(0.95, 1.3)
    return canvas


def _smooth_field(rng: np.random.Generator, shape, sigma: float) -> np.ndarray:
    f = ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    f -= f.min()
    peak = f.max()
    return f / peak if peak > 0 else f


def synth_page(rng: np.random.Generator, shape=(512, 512), degradation: float = 1.0
               ) -> tuple[np.ndarray, np.ndarray]:
    """One page as ``(gray image in [0, 1], foreground mask)``.

    The image is quantized to 8-bit levels so writing it as PGM is lossless.
    """
    h, w = shape
    if h < 16 or w < 16:
        raise ValueError(f"page {h}x{w} is too small; need at least 16x16")
    for _ in range(_MAX_TRIES):
        gt = text_layer(rng, shape)
        if INK_BAND[0] <= gt.mean() <= INK_BAND[1]:
            break
    else:
        raise RuntimeError("could not draw a page inside the ink-coverage band")

    deg = float(degradation)
    yy, xx = np.mgrid[0:h, 0:w] / float(max(h, w))
    theta = rng.uniform(0, 2 * np.pi)
    ramp = np.cos(theta) * xx + np.sin(theta) * yy
    ramp = (ramp - ramp.min()) / max(np.ptp(ramp), 1e-9)
    paper = rng.uniform(0.78, 0.92)
    bg = paper - deg * rng.uniform(0.25, 0.42) * ramp
    bg -= deg * 0.08 * _smooth_field(rng, shape, max(h, w) / 12)

    stains = np.zeros(shape)
    for _ in range(int(round(deg * rng.integers(2, 7)))):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        ry, rx = rng.uniform(min(10, h / 8), h / 5), rng.uniform(min(10, w / 8), w / 5)
        blob = ((yy * max(h, w) - cy) / ry) ** 2 + ((xx * max(h, w) - cx) / rx) ** 2 <= 1.0
        stains = np.maximum(stains, rng.uniform(0.10, 0.22) * ndimage.gaussian_filter(blob.astype(float), 4))
    bg -= deg * stains

    if deg > 0:
        verso = text_layer(rng, shape)[:, ::-1]
        bleed = ndimage.gaussian_filter(verso.astype(float), 1.2)
        bg -= deg * rng.uniform(0.12, 0.22) * bleed

    bg = np.maximum(bg, 0.42)
    ink_level = rng.uniform(0.05, 0.22)
    ink = ink_level + deg * 0.06 * _smooth_field(rng, shape, 6)
    img = np.where(gt, np.minimum(ink, bg - 0.1), bg)
    if deg > 0:
        img = ndimage.gaussian_filter(img, 0.6 * deg)
        img = img + deg * 0.035 * rng.standard_normal(shape)
    img = np.rint(np.clip(img, 0.0, 1.0) * 255.0) / 255.0
    return img.astype(np.float32), gt


def generate_synthetic_corpus(out_dir: str | os.PathLike, seed: int = 0, n_train: int = 20,
                              n_val: int = 4, n_test: int = 6, page_size: int = 512,
                              degradation: float = 1.0) -> DatasetManifest:
    """Write a corpus of PGM pages plus ``train/val/test.tsv`` manifests.

    Every page draws from its own child seed, so the corpus is a pure function
    of the arguments.
    """
    if n_train + n_val + n_test < 1:
        raise ValueError("need at least one page")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "gt").mkdir(parents=True, exist_ok=True)
    splits = {"train": n_train, "validation": n_val, "test": n_test}
    children = iter(np.random.SeedSequence(seed).spawn(sum(splits.values())))
    records: dict[str, list[Record]] = {}
    for split, count in splits.items():
        records[split] = []
        for i in range(count):
            rng = np.random.default_rng(next(children))
            img, gt = synth_page(rng, (page_size, page_size), degradation)
            name = f"{split}_{i:03d}.pgm"
            imagery.save_gray(img, out / "images" / name)
            imagery.save_mask(gt, out / "gt" / name)
            records[split].append(Record(out / "images" / name, out / "gt" / name))
    manifest = DatasetManifest(records["train"], records["validation"], records["test"])
    manifest.save(out)
    return manifest
