"""Mini-batch Adam training of selectional auto-encoders on the soft
F-measure loss, with early stopping on validation F-measure."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import data, sae
from . import tensor as T
from .evaluation import Confusion, confusion, f_measure

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 200
    patience: int = 10
    batch_size: int = 10
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    augment_factor: int = data.AUGMENT_FACTOR
    seed: int = 0
    tau: float = sae.DEFAULT_TAU

    def __post_init__(self):
        for name in ("max_epochs", "patience", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.augment_factor < 0:
            raise ValueError(f"augment_factor must be >= 0, got {self.augment_factor}")
        if self.patience > self.max_epochs:
            raise ValueError(f"patience ({self.patience}) exceeds max_epochs ({self.max_epochs})")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_fm: list[float] = field(default_factory=list)
    best_epoch: int = -1
    stop_reason: str = ""

    @property
    def epochs(self) -> int:
        return len(self.train_loss)


class Adam:
    """Adam with bias-corrected moment estimates."""

    def __init__(self, params: dict[str, np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, p in params.items():
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype, copy=False)


def build_training_set(records, window_side: int, augment_factor: int,
                       rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Grid patches of the training pages plus ``augment_factor`` augmented
    copies of each."""
    xs, ys = data.extract_patches(records, window_side)
    if augment_factor:
        extra = [pair for x, y in zip(xs, ys) for pair in data.augment(x, y, rng, augment_factor)]
        if extra:
            xs = np.concatenate([xs, np.stack([p[0] for p in extra])])
            ys = np.concatenate([ys, np.stack([p[1] for p in extra])])
    return xs, ys


def validation_fmeasure(model: sae.Model, pages, tau: float) -> float:
    total = Confusion()
    for img, gt in pages:
        total += confusion(sae.binarize_document(model, img, tau), gt)
    return f_measure(total)


def train_step(model: sae.Model, opt: Adam, xb: np.ndarray, yb: np.ndarray) -> float:
    out, leaves = model.graph(xb[:, None], requires_grad=True)
    loss = T.soft_fmeasure_loss(out, yb[:, None].astype(np.float32))
    value = float(loss.values)
    if not np.isfinite(value):
        return value
    loss.backward()
    opt.step(model.params, {k: t.grad for k, t in leaves.items()})
    return value


def train(model: sae.Model, manifest: data.DatasetManifest, config: TrainConfig = TrainConfig()
          ) -> tuple[sae.Model, TrainHistory]:
    """Train ``model`` in place and return a copy holding the parameters of
    the best validation epoch, with the per-epoch history.

    Stops after ``max_epochs`` or once validation F-m has not improved for
    ``patience`` consecutive epochs. When the manifest has no validation split,
    10% of the training pages are held out.
    """
    manifest = manifest.with_validation(config.seed)
    if not manifest.train:
        raise TrainingError("training split is empty")
    if not manifest.validation:
        raise TrainingError("validation split is empty")

    rng = np.random.default_rng(config.seed)
    side = model.spec.window_side
    xs, ys = build_training_set(manifest.train, side, config.augment_factor, rng)
    val_pages = [data.load_pair(r) for r in manifest.validation]
    log.info("training on %d windows (%d pages), validating on %d pages",
             len(xs), len(manifest.train), len(val_pages))

    opt = Adam(model.params, config.learning_rate, config.beta1, config.beta2, config.epsilon)
    history = TrainHistory()
    best = model.copy()
    best_fm = -1.0
    stale = 0
    for epoch in range(config.max_epochs):
        start = time.perf_counter()
        order = rng.permutation(len(xs))
        losses = []
        for batch, i in enumerate(range(0, len(order), config.batch_size)):
            idx = order[i:i + config.batch_size]
            value = train_step(model, opt, xs[idx], ys[idx])
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch + 1}, batch {batch + 1}")
            losses.append(value)
        fm = validation_fmeasure(model, val_pages, config.tau)
        history.train_loss.append(float(np.mean(losses)))
        history.val_fm.append(fm)
        log.info("epoch %d: loss %.4f, val F-m %.4f (%.1fs)",
                 epoch + 1, history.train_loss[-1], fm, time.perf_counter() - start)
        if fm > best_fm:
            best_fm, history.best_epoch, stale = fm, epoch, 0
            best = model.copy()
        else:
            stale += 1
            if stale >= config.patience:
                history.stop_reason = "early_stop"
                break
    else:
        history.stop_reason = "max_epochs"
    return best, history
