"""Corpus manifests, training patches and augmentation."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import imagery

SPLIT_FILES = {"train": "train.tsv", "validation": "val.tsv", "test": "test.tsv"}
SCALE_RANGE = (0.8, 1.25)
AUGMENT_FACTOR = 3


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class Record:
    image: Path
    gt: Path


@dataclass
class DatasetManifest:
    train: list[Record] = field(default_factory=list)
    validation: list[Record] = field(default_factory=list)
    test: list[Record] = field(default_factory=list)

    def split(self, name: str) -> list[Record]:
        if name not in SPLIT_FILES:
            raise ManifestError(f"unknown split {name!r}; expected one of {tuple(SPLIT_FILES)}")
        return getattr(self, name)

    @classmethod
    def load(cls, root: str | os.PathLike) -> "DatasetManifest":
        """Read ``train.tsv``, ``val.tsv`` and ``test.tsv`` under ``root``.

        Missing files are empty splits. Relative paths resolve against
        ``root``.
        """
        root = Path(root)
        if not root.is_dir():
            raise ManifestError(f"corpus directory not found: {root}")
        splits = {}
        for split, fname in SPLIT_FILES.items():
            path = root / fname
            splits[split] = read_records(path, root) if path.exists() else []
        if not any(splits.values()):
            raise ManifestError(f"no manifest files (train.tsv/val.tsv/test.tsv) in {root}")
        return cls(**splits)

    def save(self, root: str | os.PathLike) -> None:
        root = Path(root)
        for split, fname in SPLIT_FILES.items():
            lines = []
            for r in self.split(split):
                lines.append(f"{_relative(r.image, root)}\t{_relative(r.gt, root)}\n")
            (root / fname).write_text("".join(lines), encoding="utf-8")

    def with_validation(self, seed: int = 0, fraction: float = 0.1) -> "DatasetManifest":
        """Return a copy whose validation split is non-empty, holding out
        ``fraction`` of the training pages (at least one) when needed."""
        if self.validation or not self.train:
            return self
        n_val = max(1, int(round(fraction * len(self.train))))
        if n_val >= len(self.train):
            raise ManifestError("not enough training pages to hold out a validation split")
        order = np.random.default_rng(seed).permutation(len(self.train))
        held = set(order[:n_val].tolist())
        train = [r for i, r in enumerate(self.train) if i not in held]
        val = [r for i, r in enumerate(self.train) if i in held]
        return DatasetManifest(train, val, list(self.test))


def _relative(path: Path, root: Path) -> str:
    try:
        return Path(path).resolve().relative_to(root.resolve()).as_posix()
    except ValueError:
        return str(Path(path).resolve())


def read_records(path: Path, root: Path) -> list[Record]:
    records = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ManifestError(f"{path}:{lineno}: expected 'image<TAB>gt'")
        image, gt = (Path(p) if Path(p).is_absolute() else root / p for p in parts)
        records.append(Record(image, gt))
    return records


def load_pair(record: Record) -> tuple[np.ndarray, np.ndarray]:
    img = imagery.load_gray(record.image)
    gt = imagery.load_mask(record.gt)
    if img.shape != gt.shape:
        raise ManifestError(
            f"{record.gt}: ground truth is {gt.shape[1]}x{gt.shape[0]} but image is "
            f"{img.shape[1]}x{img.shape[0]}"
        )
    return img, gt


def extract_patches(records, window_side: int) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint grid windows of every page, paired with their ground truth.

    Returns ``(windows, gt_windows)`` of shapes ``(n, w, w)``, ``float32`` and
    ``bool``.
    """
    xs, ys = [], []
    for record in records:
        img, gt = load_pair(record)
        xs.append(imagery.split_into_windows(img, window_side)[1])
        ys.append(imagery.split_into_windows(gt, window_side)[1])
    if not xs:
        return (np.zeros((0, window_side, window_side), np.float32),
                np.zeros((0, window_side, window_side), bool))
    return np.concatenate(xs).astype(np.float32), np.concatenate(ys)


def _fit(a: np.ndarray, side: int) -> np.ndarray:
    """Center-crop or reflect-pad a square array to ``side``."""
    n = a.shape[0]
    if n > side:
        off = (n - side) // 2
        return a[off:off + side, off:off + side]
    if n < side:
        before = (side - n) // 2
        after = side - n - before
        return np.pad(a, ((before, after), (before, after)), mode="reflect")
    return a


def transform_pair(img: np.ndarray, gt: np.ndarray, flip_h: bool = False,
                   flip_v: bool = False, scale: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Apply the same flips and isotropic rescale to a window and its ground
    truth, keeping the window size. The rescaled ground truth is re-binarized
    at 0.5."""
    side = img.shape[0]
    if flip_h:
        img, gt = img[:, ::-1], gt[:, ::-1]
    if flip_v:
        img, gt = img[::-1], gt[::-1]
    if scale != 1.0:
        img = ndimage.zoom(img.astype(np.float64), scale, order=1, mode="reflect", grid_mode=True)
        img = np.clip(img, 0.0, 1.0)
        gt = ndimage.zoom(gt.astype(np.float64), scale, order=1, mode="reflect", grid_mode=True) >= 0.5
        img, gt = _fit(img, side), _fit(gt, side)
    return np.ascontiguousarray(img, dtype=np.float32), np.ascontiguousarray(gt, dtype=bool)


def augment(img: np.ndarray, gt: np.ndarray, rng: np.random.Generator,
            factor: int = AUGMENT_FACTOR) -> list[tuple[np.ndarray, np.ndarray]]:
    """``factor`` new pairs, each with independent random flips and a scale
    drawn log-uniformly from ``SCALE_RANGE``."""
    lo, hi = np.log(SCALE_RANGE[0]), np.log(SCALE_RANGE[1])
    out = []
    for _ in range(factor):
        flip_h, flip_v = rng.random() < 0.5, rng.random() < 0.5
        scale = float(np.exp(rng.uniform(lo, hi)))
        out.append(transform_pair(img, gt, flip_h, flip_v, scale))
    return out
