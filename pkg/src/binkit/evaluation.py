"""F-measure, threshold sweeps, window error heat maps and cross-domain
matrices."""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import imagery, sae
from .data import load_pair

DEFAULT_TAUS = tuple(round(0.1 * i, 1) for i in range(1, 10))


@dataclass(frozen=True)
class Confusion:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other: "Confusion") -> "Confusion":
        return Confusion(self.tp + other.tp, self.fp + other.fp,
                         self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion(pred: np.ndarray, gt: np.ndarray) -> Confusion:
    pred, gt = np.asarray(pred, dtype=bool), np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    return Confusion(tp, fp, fn, pred.size - tp - fp - fn)


def f_measure(c: Confusion) -> float:
    """``2 TP / (2 TP + FP + FN)``; a page with no foreground anywhere and
    none predicted scores 1."""
    denom = 2 * c.tp + c.fp + c.fn
    return 1.0 if denom == 0 else 2 * c.tp / denom


@dataclass
class EvalReport:
    """Micro-averaged (pooled counts) and per-page F-measure."""

    total: Confusion
    per_image: list[tuple[str, Confusion]] = field(default_factory=list)

    @property
    def micro_fm(self) -> float:
        return f_measure(self.total)

    @property
    def macro_fm(self) -> float:
        if not self.per_image:
            return float("nan")
        return float(np.mean([f_measure(c) for _, c in self.per_image]))


def evaluate(binarizer, records, jobs: int = 1) -> EvalReport:
    """Run ``binarizer(gray_image) -> mask`` over a split."""
    def one(record):
        img, gt = load_pair(record)
        return str(record.image), confusion(binarizer(img), gt)

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            rows = list(pool.map(one, records))
    else:
        rows = [one(r) for r in records]
    total = Confusion()
    for _, c in rows:
        total += c
    return EvalReport(total, rows)


@dataclass
class SweepRow:
    tau: float
    total: Confusion

    @property
    def fm(self) -> float:
        return f_measure(self.total)


@dataclass
class SweepTable:
    rows: list[SweepRow]

    @property
    def spread(self) -> float:
        fms = [r.fm for r in self.rows]
        return max(fms) - min(fms)

    def write_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tau", "fm", "tp", "fp", "fn"])
            for r in self.rows:
                w.writerow([f"{r.tau:g}", f"{r.fm:.6f}", r.total.tp, r.total.fp, r.total.fn])


def threshold_sweep(model, records, taus=DEFAULT_TAUS) -> SweepTable:
    """Corpus F-m at each threshold; activations are computed once per page
    and re-thresholded."""
    taus = [float(t) for t in taus]
    if not records:
        raise ValueError("empty test split")
    if not taus or any(not 0.0 <= t <= 1.0 for t in taus):
        raise ValueError("thresholds must be a non-empty subset of [0, 1]")
    totals = [Confusion() for _ in taus]
    for record in records:
        img, gt = load_pair(record)
        act = sae.predict_document(model, img)
        for i, tau in enumerate(taus):
            totals[i] += confusion(sae.binarize_activations(act, tau), gt)
    return SweepTable([SweepRow(t, c) for t, c in zip(taus, totals)])


@dataclass
class ErrorHeatMap:
    """Per-cell error counts in window coordinates over all evaluated windows.

    ``fp``/``fn`` count misclassified pixels at each window position, ``ink``
    counts ground-truth foreground. Padded margins of edge windows are not
    counted.
    """

    fp: np.ndarray
    fn: np.ndarray
    ink: np.ndarray
    windows: int = 0

    @property
    def errors(self) -> np.ndarray:
        return self.fp + self.fn

    def percent(self, channel: str = "errors") -> np.ndarray:
        """Share of windows (in %) with an event at each cell."""
        counts = getattr(self, channel)
        if self.windows == 0:
            return np.zeros(counts.shape)
        return 100.0 * counts / self.windows

    def write_pgm(self, path: str | os.PathLike, channel: str = "errors") -> None:
        counts = getattr(self, channel).astype(np.float64)
        peak = counts.max()
        imagery.write_pgm(counts * (255.0 / peak) if peak > 0 else counts, path)

    def write_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["row", "col", "fp", "fn", "errors", "ink", "errors_pct"])
            pct = self.percent()
            for (r, c), e in np.ndenumerate(self.errors):
                w.writerow([r, c, int(self.fp[r, c]), int(self.fn[r, c]), int(e),
                            int(self.ink[r, c]), f"{pct[r, c]:.4f}"])


def accumulate_heatmap(heat: ErrorHeatMap, pred: np.ndarray, gt: np.ndarray) -> None:
    """Add one page's errors to ``heat`` at their window-relative positions."""
    side = heat.fp.shape[0]
    grid, pw = imagery.split_into_windows(pred, side)
    _, gw = imagery.split_into_windows(gt, side)
    valid = np.zeros((grid.padded_height, grid.padded_width), dtype=bool)
    valid[:grid.height, :grid.width] = True
    _, vw = imagery.split_into_windows(valid, side)
    heat.fp += np.sum(pw & ~gw & vw, axis=0)
    heat.fn += np.sum(~pw & gw & vw, axis=0)
    heat.ink += np.sum(gw & vw, axis=0)
    heat.windows += len(grid)


def error_heatmap(model, records, tau: float = 0.5) -> ErrorHeatMap:
    side = model.spec.window_side
    heat = ErrorHeatMap(*(np.zeros((side, side), dtype=np.int64) for _ in range(3)))
    for record in records:
        img, gt = load_pair(record)
        accumulate_heatmap(heat, sae.binarize_document(model, img, tau), gt)
    return heat


@dataclass
class DomainMatrix:
    """F-m of each training corpus (rows) on each test corpus (columns)."""

    train_names: list[str]
    test_names: list[str]
    values: np.ndarray

    @property
    def row_averages(self) -> np.ndarray:
        return self.values.mean(axis=1)

    def __getitem__(self, key: tuple[str, str]) -> float:
        r, c = key
        return float(self.values[self.train_names.index(r), self.test_names.index(c)])

    def write_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["train_corpus", "test_corpus", "fm"])
            for i, r in enumerate(self.train_names):
                for j, c in enumerate(self.test_names):
                    w.writerow([r, c, f"{self.values[i, j]:.6f}"])
                w.writerow([r, "avg", f"{self.row_averages[i]:.6f}"])


def domain_matrix(models: dict, test_sets: dict, tau: float = 0.5) -> DomainMatrix:
    """Micro F-m of every model on every test split."""
    if not models or not test_sets:
        raise ValueError("need at least one model and one test split")
    values = np.zeros((len(models), len(test_sets)))
    for i, model in enumerate(models.values()):
        for j, records in enumerate(test_sets.values()):
            report = evaluate(lambda img, m=model: sae.binarize_document(m, img, tau), records)
            values[i, j] = report.micro_fm
    return DomainMatrix(list(models), list(test_sets), values)
