"""Minibatch training driver shared by every neural model in the pipeline:
seeded shuffling, SGD with momentum, per-epoch validation, early stopping,
and restoration of the best-validation parameters."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .nn.autodiff import Tensor
from .nn.optim import SgdMomentum


@dataclass(frozen=True)
class TrainParams:
    epochs: int = 10
    batch_size: int = 256
    lr: float = 0.1
    momentum: float = 0.9
    patience: int = 3
    val_fraction: float = 0.1

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "momentum": self.momentum,
            "patience": self.patience,
            "val_fraction": self.val_fraction,
        }


@dataclass
class TrainingHistory:
    train_loss: list[float]
    val_metric: list[float]  # index 0 is the untrained model
    best_epoch: int  # -1 when the untrained model validated best

    @property
    def best_val(self) -> float:
        return self.val_metric[self.best_epoch + 1]


def fit(
    params: list[Tensor],
    n_samples: int,
    batch_loss_fn: Callable[[np.ndarray], Tensor],
    val_fn: Callable[[], float],
    train_params: TrainParams,
    seed: int,
) -> TrainingHistory:
    """Run the training loop; on return `params` hold the best-validation
    values seen (higher `val_fn` is better)."""
    optimizer = SgdMomentum(params, lr=train_params.lr, momentum=train_params.momentum)
    rng = np.random.default_rng(seed)

    best_val = val_fn()
    best_snapshot = [p.data.copy() for p in params]
    history = TrainingHistory(train_loss=[], val_metric=[best_val], best_epoch=-1)
    stale = 0

    for epoch in range(train_params.epochs):
        order = rng.permutation(n_samples)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n_samples, train_params.batch_size):
            idx = order[start : start + train_params.batch_size]
            optimizer.zero_grad()
            loss = batch_loss_fn(idx)
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss.data)
            n_batches += 1
        history.train_loss.append(epoch_loss / max(n_batches, 1))

        val = val_fn()
        history.val_metric.append(val)
        if val > best_val + 1e-12:
            best_val = val
            best_snapshot = [p.data.copy() for p in params]
            history.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= train_params.patience:
                break

    for p, snap in zip(params, best_snapshot):
        p.data = snap
    return history
