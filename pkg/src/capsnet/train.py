"""Training loop with learning-curve export and best-by-train-accuracy checkpointing."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import save_checkpoint
from .data import Sample, batch_images, batch_labels
from .errors import ContractError, TrainingError
from .optim import Adam

CURVE_HEADER = "epoch,train_acc,test_acc,train_loss"


@dataclass
class TrainRun:
    epochs: int = 30
    batch_size: int = 64
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    checkpoint_path: str | None = None
    curve_path: str | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ContractError(f"epochs and batch_size must be >= 1: {self}")


@dataclass
class CurveRow:
    epoch: int
    train_accuracy: float
    test_accuracy: float
    mean_train_loss: float


@dataclass
class TrainResult:
    curve: list[CurveRow] = field(default_factory=list)
    best_train_accuracy: float = -1.0
    best_epoch: int = 0

    def curve_csv(self) -> str:
        lines = [CURVE_HEADER]
        for r in self.curve:
            lines.append(f"{r.epoch},{r.train_accuracy!r},{r.test_accuracy!r},{r.mean_train_loss!r}")
        return "\n".join(lines) + "\n"


def evaluate_accuracy(model, samples: list[Sample], batch_size: int = 64) -> float:
    """Fraction of samples whose argmax class matches the label."""
    if not samples:
        raise ContractError("evaluate_accuracy needs a non-empty sample list")
    correct = 0
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        probs = model.predict_proba(batch_images(chunk, model.input_side))
        correct += int((probs.argmax(axis=-1) == batch_labels(chunk)).sum())
    return correct / len(samples)


def train_model(
    model,
    train_samples: list[Sample],
    test_samples: list[Sample],
    run: TrainRun,
    stop_at_test_accuracy: float | None = None,
) -> TrainResult:
    """Train with Adam for ``run.epochs`` epochs, deterministically per seed.

    Train accuracy and mean loss accumulate over the epoch's training batches.
    After each epoch a curve row is appended and, when train accuracy sets a
    new maximum, the checkpoint is overwritten. ``stop_at_test_accuracy``
    optionally ends training early once reached.
    """
    if not train_samples:
        raise ContractError("train_model needs a non-empty training set")
    params = [t for _, t in model.parameters()]
    optimizer = Adam(params, lr=run.lr, beta1=run.beta1, beta2=run.beta2, eps=run.eps)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence(run.seed).spawn(1)[0])
    result = TrainResult()

    for epoch in range(1, run.epochs + 1):
        order = shuffle_rng.permutation(len(train_samples))
        seen = 0
        correct = 0
        loss_sum = 0.0
        for start in range(0, len(order), run.batch_size):
            batch = [train_samples[i] for i in order[start : start + run.batch_size]]
            images = batch_images(batch, model.input_side)
            labels = batch_labels(batch)
            loss, predictions = model.training_step(images, labels)
            loss_value = loss.item()
            if not math.isfinite(loss_value):
                raise TrainingError(
                    f"non-finite loss {loss_value} at epoch {epoch}, batch {start // run.batch_size}"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            seen += len(batch)
            correct += int((predictions == labels).sum())
            loss_sum += loss_value * len(batch)

        train_acc = correct / seen
        test_acc = evaluate_accuracy(model, test_samples, run.batch_size) if test_samples else 0.0
        result.curve.append(
            CurveRow(
                epoch=epoch,
                train_accuracy=train_acc,
                test_accuracy=test_acc,
                mean_train_loss=loss_sum / seen,
            )
        )
        if train_acc > result.best_train_accuracy:
            result.best_train_accuracy = train_acc
            result.best_epoch = epoch
            if run.checkpoint_path:
                save_checkpoint(run.checkpoint_path, model, epoch, train_acc)
        if stop_at_test_accuracy is not None and test_acc >= stop_at_test_accuracy:
            break

    if run.curve_path:
        with open(run.curve_path, "w", encoding="utf-8") as f:
            f.write(result.curve_csv())
    return result
