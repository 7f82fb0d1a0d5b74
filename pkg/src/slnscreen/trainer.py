"""Seeded mini-batch training with validation early stopping, and split evaluation."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .corpus import Corpus, load_patch_pixels
from .errors import CheckpointMismatchError, TrainingError
from .nn import Model, ModelConfig, apply_update, build_model, make_optimizer, predict_probs
from .tensor import cross_entropy

log = logging.getLogger(__name__)

EVAL_CHUNK = 64


@dataclass
class TrainConfig:
    batch_size: int = 32
    max_epochs: int = 50
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    patience: int = 5
    hflip: bool = True
    vflip: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise TrainingError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.patience < 1:
            raise TrainingError(f"patience must be >= 1, got {self.patience}")
        if self.max_epochs < 1:
            raise TrainingError(f"max_epochs must be >= 1, got {self.max_epochs}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    stop_reason: str = ""
    best_epoch: int = 0
    wall_seconds: float = 0.0
    seed: int = 0
    model_seed: int = 0

    @property
    def best(self) -> EpochRecord:
        return self.epochs[self.best_epoch - 1]


def load_split_pixels(corpus: Corpus, split: str) -> tuple[list[str], np.ndarray, np.ndarray]:
    """Patch ids, uint8 pixels ``[N, 100, 100, 3]`` and labels for one split, in patch_id order."""
    records = corpus.split_patches(split)
    if not records:
        raise TrainingError(f"split {split!r} is empty")
    pixels = np.stack([load_patch_pixels(corpus.patch_path(p)) for p in records])
    labels = np.array([int(p.observed_dx) for p in records], dtype=np.int64)
    return [p.patch_id for p in records], pixels, labels


def _to_float(pixels: np.ndarray) -> np.ndarray:
    return pixels.astype(np.float32) / np.float32(255.0)


def _augment(batch: np.ndarray, cfg: TrainConfig, rng: np.random.Generator) -> np.ndarray:
    if cfg.hflip:
        flip = rng.random(len(batch)) < 0.5
        batch[flip] = batch[flip][:, :, ::-1]
    if cfg.vflip:
        flip = rng.random(len(batch)) < 0.5
        batch[flip] = batch[flip][:, ::-1]
    return batch


def infer_probs(model: Model, pixels: np.ndarray) -> np.ndarray:
    out = [model.forward(_to_float(pixels[i : i + EVAL_CHUNK]), "infer") for i in range(0, len(pixels), EVAL_CHUNK)]
    return np.concatenate(out)


def train(
    corpus: Corpus,
    model_config: ModelConfig | None = None,
    train_config: TrainConfig | None = None,
) -> tuple[Model, TrainReport]:
    """Train from scratch; returns the best-validation-loss model and the report.

    The shuffle, augmentation and dropout streams are spawned from
    ``train_config.seed``; weight init comes from ``model_config.seed``.
    """
    model_config = model_config or ModelConfig()
    cfg = train_config or TrainConfig()
    started = time.perf_counter()

    _, train_px, train_y = load_split_pixels(corpus, "train")
    _, val_px, val_y = load_split_pixels(corpus, "val")

    model = build_model(model_config)
    optimizer = make_optimizer(cfg.optimizer, cfg.learning_rate)
    shuffle_rng, aug_rng, drop_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(3))

    report = TrainReport(seed=cfg.seed, model_seed=model_config.seed)
    best_loss = math.inf
    best_weights = [p.copy() for p in model.parameters()]

    for epoch in range(1, cfg.max_epochs + 1):
        order = shuffle_rng.permutation(len(train_y))
        losses = []
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            batch = _augment(_to_float(train_px[idx]), cfg, aug_rng)
            grads, loss = model.backward(batch, train_y[idx], "train", drop_rng)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite training loss at epoch {epoch}, batch {b}")
            apply_update(model, grads, optimizer)
            losses.append(loss * len(idx))
        train_loss = float(np.sum(losses) / len(order))

        probs = infer_probs(model, val_px)
        val_loss = float(np.mean(cross_entropy(probs, val_y)))
        if not math.isfinite(val_loss):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        val_acc = float(np.mean(probs.argmax(axis=1) == val_y))
        report.epochs.append(EpochRecord(epoch, train_loss, val_loss, val_acc))
        log.info("epoch %d train_loss %.4f val_loss %.4f val_acc %.4f", epoch, train_loss, val_loss, val_acc)

        if val_loss < best_loss:
            best_loss = val_loss
            report.best_epoch = epoch
            best_weights = [p.copy() for p in model.parameters()]
        elif epoch - report.best_epoch >= cfg.patience:
            report.stop_reason = "early_stop"
            break
    else:
        report.stop_reason = "max_epochs"

    for dst, src in zip(model.parameters(), best_weights):
        dst[...] = src
    report.wall_seconds = time.perf_counter() - started
    model.metadata = {
        "epochs_run": len(report.epochs),
        "best_epoch": report.best_epoch,
        "final_val_loss": best_loss,
        "seed": cfg.seed,
        "model_seed": model_config.seed,
    }
    return model, report


@dataclass(frozen=True)
class PredictionRow:
    patch_id: str
    slide_id: str
    case_id: str
    observed_dx: int
    predicted_dx: int
    probs: tuple[float, float, float, float]


def evaluate_split(model: Model, corpus: Corpus, split: str = "test") -> list[PredictionRow]:
    """One prediction row per patch of ``split``, ordered by patch_id."""
    if model.config.input_shape != (100, 100, 3) or model.config.num_classes != 4:
        raise CheckpointMismatchError(
            f"model expects input {model.config.input_shape} with {model.config.num_classes} classes; "
            "corpus patches are 100x100x3 with 4 categories"
        )
    ids, pixels, labels = load_split_pixels(corpus, split)
    probs = infer_probs(model, pixels)
    rows = []
    for pid, y, p in zip(ids, labels, probs):
        patch = corpus.patches[pid]
        rows.append(PredictionRow(pid, patch.slide_id, corpus.case_of(patch).case_id, int(y),
                                  predict_probs(p), tuple(float(v) for v in p)))
    return sorted(rows, key=lambda r: r.patch_id)
