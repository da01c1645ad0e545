"""Hand-crafted baselines: Otsu's global threshold and the Niblack, Sauvola and
Wolf local thresholds.

All thresholds live in the 8-bit intensity domain (0..255), which is where the
customary parameter values (Sauvola ``R = 128`` and friends) make sense. Gray
images in ``[0, 1]`` are quantized with :func:`to_levels` first.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

NIBLACK_K = -0.2
SAUVOLA_K = 0.5
SAUVOLA_R = 128.0
WOLF_K = 0.5
WINDOW_SIDE = 25


def to_levels(img: np.ndarray) -> np.ndarray:
    """Quantize a unit-interval gray image to 8-bit levels."""
    return np.rint(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def otsu_threshold(img: np.ndarray) -> int:
    """Return the level ``t`` maximizing the between-class variance of
    ``{<= t}`` and ``{> t}``; ties go to the smallest ``t``.

    ``img`` is either a gray image in ``[0, 1]`` or an array of 8-bit levels.
    The comparison is done in exact integer arithmetic so near-ties resolve
    deterministically. A single-level image returns that level.
    """
    levels = _as_levels(img)
    if levels.size == 0:
        raise ValueError("empty image")
    hist = np.bincount(levels.ravel(), minlength=256).tolist()
    total_n = levels.size
    total_s = sum(i * h for i, h in enumerate(hist))
    if max(hist) == total_n:
        return int(levels.flat[0])

    # sigma_b^2 * N^2 = (s0 * N - S * n0)^2 / (n0 * n1)
    best_t, best_num, best_den = 0, 0, 1
    n0 = s0 = 0
    for t in range(256):
        n0 += hist[t]
        s0 += t * hist[t]
        n1 = total_n - n0
        if n0 == 0 or n1 == 0:
            continue
        num = (s0 * total_n - total_s * n0) ** 2
        den = n0 * n1
        if num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    return best_t


def otsu_binarize(img: np.ndarray) -> np.ndarray:
    """Foreground is every pixel at or below the Otsu level.

    A single-level image has no contrast to split and comes back all
    background.
    """
    levels = _as_levels(img)
    t = otsu_threshold(levels)
    if levels.min() == levels.max():
        return np.zeros(levels.shape, dtype=bool)
    return levels <= t


def _as_levels(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.dtype == np.uint8:
        return img
    if np.issubdtype(img.dtype, np.integer):
        return np.clip(img, 0, 255).astype(np.uint8)
    return to_levels(img)


@dataclass
class LocalStats:
    """Windowed mean and standard deviation around every pixel."""

    mean: np.ndarray
    std: np.ndarray
    window_side: int


def _integral(a: np.ndarray) -> np.ndarray:
    """Summed-area table with a leading zero row and column."""
    out = np.zeros((a.shape[0] + 1, a.shape[1] + 1), dtype=a.dtype)
    np.cumsum(a, axis=0, out=out[1:, 1:])
    np.cumsum(out[1:, 1:], axis=1, out=out[1:, 1:])
    return out


def _box_sums(table: np.ndarray, side: int, h: int, w: int) -> np.ndarray:
    return (
        table[side:side + h, side:side + w]
        - table[:h, side:side + w]
        - table[side:side + h, :w]
        + table[:h, :w]
    )


def local_stats(img: np.ndarray, window_side: int = WINDOW_SIDE) -> LocalStats:
    """Mean and standard deviation over the ``window_side`` square centred at
    each pixel, borders reflect-padded, in O(1) per pixel via integral images.

    Integer inputs (8-bit levels) are accumulated in ``int64`` so the variance
    numerator ``n * sum(x^2) - sum(x)^2`` is exact; float inputs use
    ``float64``.
    """
    if window_side < 3 or window_side % 2 == 0:
        raise ValueError(f"window side must be odd and >= 3, got {window_side}")
    img = np.asarray(img)
    if img.ndim != 2 or img.size == 0:
        raise ValueError(f"expected a non-empty 2-D image, got shape {img.shape}")
    exact = np.issubdtype(img.dtype, np.integer)
    acc = img.astype(np.int64 if exact else np.float64)
    r = window_side // 2
    padded = np.pad(acc, r, mode="reflect")
    h, w = img.shape
    n = window_side * window_side
    s1 = _box_sums(_integral(padded), window_side, h, w)
    s2 = _box_sums(_integral(padded * padded), window_side, h, w)
    mean = s1 / n
    var = (n * s2 - s1 * s1) / float(n * n)
    std = np.sqrt(np.maximum(var, 0.0))
    return LocalStats(mean, std, window_side)


def threshold_niblack(stats: LocalStats, k: float = NIBLACK_K) -> np.ndarray:
    return stats.mean + k * stats.std


def threshold_sauvola(stats: LocalStats, k: float = SAUVOLA_K, r: float = SAUVOLA_R) -> np.ndarray:
    if r <= 0:
        raise ValueError(f"Sauvola dynamic range R must be positive, got {r}")
    return stats.mean * (1.0 + k * (stats.std / r - 1.0))


def threshold_wolf(stats: LocalStats, img: np.ndarray, k: float = WOLF_K) -> np.ndarray:
    """``T = (1-k) m + k M + k (s / S) (m - M)`` with ``M`` the image minimum
    and ``S`` the largest local deviation. A constant image (``S == 0``) falls
    back to ``T = m``.
    """
    s_max = float(stats.std.max())
    if s_max == 0.0:
        log.warning("Wolf threshold on a contrast-free image; falling back to T = m")
        return stats.mean.copy()
    m_min = float(np.min(img))
    m = stats.mean
    return (1.0 - k) * m + k * m_min + k * (stats.std / s_max) * (m - m_min)


def apply_threshold_map(img: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """Foreground where intensity is strictly below the local threshold."""
    img = np.asarray(img)
    if img.shape != np.shape(thresholds):
        raise ValueError(f"image {img.shape} and threshold map {np.shape(thresholds)} differ")
    return img < thresholds


def binarize(img: np.ndarray, method: str = "otsu", window_side: int = WINDOW_SIDE,
             k: float | None = None, r: float = SAUVOLA_R) -> np.ndarray:
    """Binarize a gray image with one of the classical methods."""
    levels = to_levels(img)
    if method == "otsu":
        return otsu_binarize(levels)
    stats = local_stats(levels, window_side)
    if method == "niblack":
        t = threshold_niblack(stats, NIBLACK_K if k is None else k)
    elif method == "sauvola":
        t = threshold_sauvola(stats, SAUVOLA_K if k is None else k, r)
    elif method == "wolf":
        t = threshold_wolf(stats, levels, WOLF_K if k is None else k)
    else:
        raise ValueError(f"unknown method {method!r}")
    return apply_threshold_map(levels, t)


METHODS = ("otsu", "niblack", "sauvola", "wolf")
