"""Raster I/O and page tiling.

Gray images are 2-D ``float32`` arrays with values in ``[0, 1]`` (intensity
divided by 255). Binary masks are 2-D ``bool`` arrays where ``True`` marks
foreground (ink).
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

LUMA = (0.299, 0.587, 0.114)


class RasterError(ValueError):
    """Raised for unreadable, unsupported or malformed raster files."""


def _pnm_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < count:
        if pos >= len(data):
            raise RasterError("truncated PNM header")
        ch = data[pos:pos + 1]
        if ch == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
        elif ch.isspace():
            pos += 1
        else:
            start = pos
            while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
                pos += 1
            tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def read_pgm(data: bytes) -> np.ndarray:
    """Decode a binary PGM (P5) or PPM (P6) payload into 8-bit levels."""
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise RasterError(f"not a binary PGM/PPM file (magic {magic!r})")
    tokens, offset = _pnm_tokens(data[2:], 3)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise RasterError("malformed PNM header") from exc
    if width <= 0 or height <= 0:
        raise RasterError(f"zero-dimension image {width}x{height}")
    if not 0 < maxval < 65536:
        raise RasterError(f"invalid maxval {maxval}")
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    n = width * height * channels
    raw = data[2 + offset:]
    if len(raw) < n * dtype.itemsize:
        raise RasterError("truncated PNM raster")
    levels = np.frombuffer(raw, dtype=dtype, count=n).astype(np.float64)
    if maxval != 255:
        levels = levels * (255.0 / maxval)
    shape = (height, width, 3) if channels == 3 else (height, width)
    return levels.reshape(shape)


def to_gray(levels: np.ndarray) -> np.ndarray:
    """Convert 8-bit levels (``HxW`` or ``HxWx3``) to a unit-interval gray image."""
    levels = np.asarray(levels, dtype=np.float64)
    if levels.ndim == 3:
        if levels.shape[2] == 4:
            levels = levels[..., :3]
        if levels.shape[2] != 3:
            raise RasterError(f"unsupported channel count {levels.shape[2]}")
        levels = levels @ np.array(LUMA)
    elif levels.ndim != 2:
        raise RasterError(f"unsupported raster rank {levels.ndim}")
    if levels.size == 0:
        raise RasterError("zero-dimension image")
    return np.clip(levels / 255.0, 0.0, 1.0).astype(np.float32)


def load_gray(path: str | os.PathLike) -> np.ndarray:
    """Load a raster file as a gray image in ``[0, 1]``.

    Binary PGM/PPM are decoded natively; PNG (and anything else Pillow can
    open) is read through Pillow when it is installed. Color inputs are
    reduced with ``0.299 R + 0.587 G + 0.114 B``.
    """
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise RasterError(f"cannot read {os.fspath(path)}: {exc.strerror}") from exc
    if data[:2] in (b"P5", b"P6"):
        return to_gray(read_pgm(data))
    try:
        from PIL import Image
    except ImportError:  # pragma: no cover - Pillow is an optional extra
        raise RasterError(f"unsupported raster format: {os.fspath(path)}") from None
    import io

    try:
        with Image.open(io.BytesIO(data)) as im:
            if im.mode in ("I;16", "I;16B", "I"):
                arr = np.asarray(im, dtype=np.float64) * (255.0 / 65535.0)
            elif im.mode in ("L", "RGB"):
                arr = np.asarray(im, dtype=np.float64)
            else:
                arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except (OSError, SyntaxError) as exc:
        raise RasterError(f"unsupported raster format: {os.fspath(path)}") from exc
    return to_gray(arr)


def load_mask(path: str | os.PathLike) -> np.ndarray:
    """Load a ground-truth raster; dark pixels (< 128) are foreground."""
    return load_gray(path) < 128 / 255.0


def write_pgm(levels: np.ndarray, path: str | os.PathLike) -> None:
    """Write a 2-D array of 8-bit levels as binary PGM (P5, maxval 255)."""
    levels = np.asarray(levels)
    if levels.ndim != 2 or levels.size == 0:
        raise RasterError(f"cannot write raster of shape {levels.shape}")
    payload = np.clip(np.rint(levels), 0, 255).astype(np.uint8)
    header = b"P5\n%d %d\n255\n" % (levels.shape[1], levels.shape[0])
    with open(path, "wb") as fh:
        fh.write(header + payload.tobytes())


def save_gray(img: np.ndarray, path: str | os.PathLike) -> None:
    write_pgm(np.asarray(img, dtype=np.float64) * 255.0, path)


def save_mask(mask: np.ndarray, path: str | os.PathLike) -> None:
    """Write a mask as P5: foreground black (0), background white (255)."""
    mask = np.asarray(mask, dtype=bool)
    write_pgm(np.where(mask, 0, 255), path)


@dataclass(frozen=True)
class PatchGrid:
    """Disjoint square tiling of a reflect-padded page."""

    window_side: int
    height: int
    width: int

    @property
    def rows(self) -> int:
        return -(-self.height // self.window_side)

    @property
    def cols(self) -> int:
        return -(-self.width // self.window_side)

    @property
    def padded_height(self) -> int:
        return self.rows * self.window_side

    @property
    def padded_width(self) -> int:
        return self.cols * self.window_side

    @property
    def pad_mode(self) -> str:
        return "reflect"

    @property
    def origins(self) -> list[tuple[int, int]]:
        s = self.window_side
        return [(r * s, c * s) for r in range(self.rows) for c in range(self.cols)]

    def __len__(self) -> int:
        return self.rows * self.cols


def pad_reflect(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Mirror-pad ``img`` at the bottom/right edges up to ``height x width``."""
    dh, dw = height - img.shape[0], width - img.shape[1]
    if dh == 0 and dw == 0:
        return img
    # numpy degrades to edge-repeat on singleton axes and folds repeatedly for
    # pads longer than the axis
    return np.pad(img, ((0, dh), (0, dw)), mode="reflect")


def split_into_windows(img: np.ndarray, side: int) -> tuple[PatchGrid, np.ndarray]:
    """Tile ``img`` into disjoint ``side x side`` windows in row-major order.

    Returns the grid and an array of shape ``(n_windows, side, side)``.
    """
    if side < 1:
        raise ValueError(f"window side must be >= 1, got {side}")
    img = np.asarray(img)
    if img.ndim != 2 or img.size == 0:
        raise ValueError(f"expected a non-empty 2-D image, got shape {img.shape}")
    grid = PatchGrid(side, img.shape[0], img.shape[1])
    padded = pad_reflect(img, grid.padded_height, grid.padded_width)
    windows = (
        padded.reshape(grid.rows, side, grid.cols, side)
        .swapaxes(1, 2)
        .reshape(len(grid), side, side)
    )
    return grid, np.ascontiguousarray(windows)


def stitch_windows(grid: PatchGrid, windows, out_h: int | None = None, out_w: int | None = None) -> np.ndarray:
    """Reassemble windows produced by :func:`split_into_windows`.

    Padded margins are dropped; the result is ``out_h x out_w`` (the original
    page size by default).
    """
    windows = np.asarray(windows)
    s = grid.window_side
    if windows.shape != (len(grid), s, s):
        raise ValueError(
            f"expected {len(grid)} windows of {s}x{s}, got array of shape {windows.shape}"
        )
    out_h = grid.height if out_h is None else out_h
    out_w = grid.width if out_w is None else out_w
    if out_h > grid.padded_height or out_w > grid.padded_width:
        raise ValueError("output extent exceeds the padded grid")
    page = windows.reshape(grid.rows, grid.cols, s, s).swapaxes(1, 2)
    page = page.reshape(grid.padded_height, grid.padded_width)
    return page[:out_h, :out_w].copy()
