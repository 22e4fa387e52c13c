"""Training loop: file-level validation split, Adam on MSE, early stopping."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import autograd as ag
from .errors import ConfigError, NonFiniteLoss, TooFewFiles
from .features import (FeatureSet, MelSpectrogram, fit_normalizer,
                       patches_from_spectrogram)
from .models import CONV_ARCH, DENSE_ARCH, ModelCheckpoint, build_model

log = logging.getLogger(__name__)

DEFAULT_BATCH = {"dense": 512, "conv": 64}


@dataclass
class TrainConfig:
    model_family: str = "dense"
    lr: float = 0.001
    batch_size: int | None = None
    max_epochs: int = 100
    patience: int = 10
    val_fraction: float = 0.1
    seed: int = 0
    arch: dict | None = None

    def __post_init__(self):
        if self.model_family not in DEFAULT_BATCH:
            raise ConfigError(f"model_family must be dense or conv, got {self.model_family!r}")
        if self.batch_size is None:
            self.batch_size = DEFAULT_BATCH[self.model_family]
        if not 0 < self.val_fraction < 1:
            raise ConfigError(f"val_fraction must lie in (0, 1), got {self.val_fraction}")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2 for batch norm")
        if self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("max_epochs and patience must be positive")

    def resolved_arch(self) -> dict:
        if self.arch is not None:
            return dict(self.arch, family=self.model_family)
        return dict(DENSE_ARCH if self.model_family == "dense" else CONV_ARCH)


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss"])
            for i, (tl, vl) in enumerate(zip(self.train_loss, self.val_loss), start=1):
                w.writerow([i, repr(tl), repr(vl)])


class EarlyStopping:
    """Stop after ``patience`` consecutive epochs without a strict improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.epoch = 0
        self.bad_epochs = 0

    def update(self, val_loss: float) -> bool:
        """Record one epoch; True means the loss improved."""
        self.epoch += 1
        if val_loss < self.best:
            self.best = val_loss
            self.best_epoch = self.epoch
            self.bad_epochs = 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


def split_train_val(files, val_fraction=0.1, seed=0):
    """Seeded file-level split; at least one file lands on each side."""
    files = list(files)
    if len(files) < 2:
        raise TooFewFiles(f"need at least 2 files to split, got {len(files)}")
    n_val = min(max(1, int(round(len(files) * val_fraction))), len(files) - 1)
    order = np.random.default_rng(seed).permutation(len(files))
    val = [files[i] for i in sorted(order[:n_val])]
    train = [files[i] for i in sorted(order[n_val:])]
    return train, val


def _mel32(value):
    values = value.values if isinstance(value, MelSpectrogram) else value
    return np.asarray(values, dtype=np.float32)


def _as_rows(value, family, normalizer, file_no):
    if isinstance(value, FeatureSet):
        if value.kind.value != family:
            raise ConfigError(f"{value.kind.value} features given to a {family} run")
        return value.data
    if family != "conv":
        raise ConfigError("dense training expects FeatureSet inputs")
    values = value.values if isinstance(value, MelSpectrogram) else value
    return patches_from_spectrogram(np.asarray(values, dtype=np.float32), normalizer, file_no).data


def train(features: Mapping, config: TrainConfig, machine_type: str = "",
          on_batch: Callable | None = None):
    """Fit one autoencoder on the normal clips of a machine type.

    ``features`` maps file id -> a :class:`FeatureSet` of the model's family,
    or, for the conv family, -> a raw log-mel spectrogram (``MelSpectrogram``
    or ``(frames, 128)`` array). Spectrogram inputs get a normalizer fitted on
    the training files only; it is stored in the returned checkpoint.

    ``on_batch`` is called with the file ids of every gradient batch.

    Returns ``(checkpoint, history)``; the checkpoint holds the parameters of
    the epoch with the lowest validation loss.
    """
    family = config.model_family
    files = sorted(features)
    if len(files) < 2:
        raise TooFewFiles(f"{machine_type or 'training set'}: need at least 2 files, got {len(files)}")
    train_ids, val_ids = split_train_val(files, config.val_fraction, config.seed)

    normalizer = None
    if family == "conv" and not isinstance(features[files[0]], FeatureSet):
        normalizer = fit_normalizer(_mel32(features[f]) for f in train_ids)
        normalizer.mean = normalizer.mean.astype(np.float32)
        normalizer.std = normalizer.std.astype(np.float32)

    def stack(ids):
        rows = [_as_rows(features[f], family, normalizer, i) for i, f in enumerate(ids)]
        owner = np.concatenate([np.full(len(r), i) for i, r in enumerate(rows)])
        return np.concatenate(rows).astype(np.float32), owner

    x_train, owner = stack(train_ids)
    x_val, _ = stack(val_ids)
    val_set = set(val_ids)

    model = build_model(config.resolved_arch(), seed=config.seed)
    params = model.parameters()
    opt = ag.Adam(params, lr=config.lr)
    rng = np.random.default_rng([config.seed, 1])
    stopper = EarlyStopping(config.patience)
    history = TrainHistory()
    best_state = None

    if len(x_train) < 2:
        raise TooFewFiles(f"{machine_type or 'training set'}: need at least 2 training rows")
    starts = list(range(0, len(x_train), config.batch_size))
    if len(x_train) - starts[-1] == 1:
        starts.pop()  # batch norm cannot train on one row; fold it into the previous batch
    bounds = list(zip(starts, starts[1:] + [len(x_train)]))

    for epoch in range(1, config.max_epochs + 1):
        perm = rng.permutation(len(x_train))
        total, seen = 0.0, 0
        for start, stop in bounds:
            idx = perm[start:stop]
            batch_files = [train_ids[o] for o in owner[idx]]
            assert val_set.isdisjoint(batch_files), "validation row reached a gradient step"
            if on_batch is not None:
                on_batch(batch_files)
            xb = x_train[idx]
            opt.zero_grad()
            loss = ag.mse_loss(model.forward(xb, training=True), xb)
            value = float(loss.data)
            if not math.isfinite(value):
                raise NonFiniteLoss(f"{machine_type} {family}: training loss {value} at epoch {epoch}")
            loss.backward()
            opt.step()
            total += value * len(idx)
            seen += len(idx)

        val_loss = float(np.mean(model.reconstruction_error(x_val), dtype=np.float64))
        if not math.isfinite(val_loss):
            raise NonFiniteLoss(f"{machine_type} {family}: validation loss {val_loss} at epoch {epoch}")
        history.train_loss.append(total / max(seen, 1))
        history.val_loss.append(val_loss)
        if stopper.update(val_loss):
            best_state = {k: v.copy() for k, v in model.state_dict().items()}
        log.info("%s %s epoch %d train %.6f val %.6f", machine_type, family, epoch,
                 history.train_loss[-1], val_loss)
        if stopper.should_stop:
            break

    history.best_epoch = stopper.best_epoch
    history.stopped_epoch = len(history.val_loss)
    model.load_state_dict(best_state)
    ckpt = ModelCheckpoint.from_model(
        model, normalizer, machine_type=machine_type, epoch=history.best_epoch,
        best_val_loss=stopper.best, seed=config.seed)
    return ckpt, history


def validation_rows(features: Mapping, checkpoint: ModelCheckpoint, config: TrainConfig) -> np.ndarray:
    """Rebuild the validation matrix a run used, for re-scoring a checkpoint."""
    _, val_ids = split_train_val(sorted(features), config.val_fraction, config.seed)
    rows = [_as_rows(features[f], config.model_family, checkpoint.normalizer, i)
            for i, f in enumerate(val_ids)]
    return np.concatenate(rows).astype(np.float32)
