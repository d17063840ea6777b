"""Generic training loop with patience-based early stopping.

The loop is agnostic to batching: ``epoch_fn`` runs one full epoch of
optimizer updates and returns the mean training loss, ``val_fn`` returns the
current validation loss.  Parameters from the best-validation epoch are
restored before returning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .layers import Parameter


class TrainingError(RuntimeError):
    """Raised when training produces a non-finite loss."""


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 0.001
    max_epochs: int = 20000
    patience: int = 300
    seed: int = 0

    def __post_init__(self):
        if self.patience > self.max_epochs:
            raise ValueError("patience cannot exceed max_epochs")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")


@dataclass
class TrainResult:
    train_losses: list[float]
    val_losses: list[float]
    best_epoch: int  # 1-based
    stopped_early: bool

    @property
    def epochs_run(self) -> int:
        return len(self.train_losses)

    @property
    def best_val_loss(self) -> float:
        return self.val_losses[self.best_epoch - 1]


def train_loop(epoch_fn, val_fn, params: list[Parameter], config: TrainConfig) -> TrainResult:
    """Run epochs until validation stalls for ``patience`` epochs in a row.

    Improvement is strict, so a constant validation loss stops after exactly
    patience + 1 epochs.  The returned parameters are those of the epoch with
    the lowest validation loss seen.
    """
    best_val = math.inf
    best_epoch = 0
    best_values = [p.value.copy() for p in params]
    stall = 0
    train_losses: list[float] = []
    val_losses: list[float] = []
    stopped_early = False

    for epoch in range(1, config.max_epochs + 1):
        train_loss = float(epoch_fn())
        if not math.isfinite(train_loss):
            raise TrainingError(f"non-finite training loss at epoch {epoch}: {train_loss}")
        val_loss = float(val_fn())
        if not math.isfinite(val_loss):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}: {val_loss}")
        train_losses.append(train_loss)
        val_losses.append(val_loss)

        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_values = [p.value.copy() for p in params]
            stall = 0
        else:
            stall += 1
            if stall >= config.patience:
                stopped_early = True
                break

    for p, v in zip(params, best_values):
        p.value = v.copy()
    return TrainResult(
        train_losses=train_losses,
        val_losses=val_losses,
        best_epoch=best_epoch,
        stopped_early=stopped_early,
    )
