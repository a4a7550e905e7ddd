"""Combine classifiers by averaging their per-class probability distributions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError
from .tensor import DTYPE


def to_distribution(model_output: np.ndarray, model_kind: str) -> np.ndarray:
    """Normalize one model's raw per-class output into a probability vector.

    Logit-producing models get a softmax; capsule norms are L1-normalized,
    which preserves their ranking. All-zero norms fall back to uniform.
    """
    scores = np.asarray(model_output, dtype=DTYPE).reshape(-1)
    if model_kind == "logits":
        shifted = scores - scores.max()
        e = np.exp(shifted)
        return (e / e.sum(dtype=DTYPE)).astype(DTYPE)
    if model_kind == "capsule_norms":
        total = scores.sum(dtype=DTYPE)
        if total <= 0.0:
            return np.full(scores.shape, 1.0 / scores.size, dtype=DTYPE)
        return (scores / total).astype(DTYPE)
    raise ContractError(f"unknown model kind {model_kind!r}")


def average(dists: list[np.ndarray], weights=None) -> np.ndarray:
    """Weighted arithmetic mean of probability vectors; uniform by default."""
    if not dists:
        raise ContractError("average needs at least one distribution")
    n = len(dists[0])
    for d in dists:
        if len(d) != n:
            raise ShapeError(f"distribution lengths differ: {len(d)} vs {n}")
    if weights is None:
        weights = np.full(len(dists), 1.0 / len(dists), dtype=DTYPE)
    else:
        weights = np.asarray(weights, dtype=DTYPE)
        if weights.shape != (len(dists),):
            raise ShapeError(f"need one weight per distribution, got {weights.shape}")
        weights = weights / weights.sum(dtype=DTYPE)
    out = np.zeros(n, dtype=DTYPE)
    for w, d in zip(weights, dists):
        out += w * np.asarray(d, dtype=DTYPE)
    return out


@dataclass
class EvalReport:
    accuracy: float
    confusion: np.ndarray  # [n_class, n_class], rows = true label, cols = prediction
    per_model_accuracy: list[float]

    @property
    def per_class_accuracy(self) -> np.ndarray:
        totals = self.confusion.sum(axis=1)
        safe = np.where(totals > 0, totals, 1)
        return np.where(totals > 0, np.diag(self.confusion) / safe, 0.0)


def evaluate(models: list, samples: list, weights=None, batch_size: int = 64) -> EvalReport:
    """Score the probability-averaged combination of ``models`` on ``samples``.

    Each model sees the source images resized to its own native input side.
    Argmax ties break toward the lowest class index.
    """
    from .data import batch_images, batch_labels

    if not models:
        raise ContractError("evaluate needs at least one model")
    if not samples:
        raise ContractError("evaluate needs a non-empty dataset")
    n_class = models[0].n_class
    for m in models:
        if m.n_class != n_class:
            raise ContractError(f"models disagree on class count: {m.n_class} vs {n_class}")

    confusion = np.zeros((n_class, n_class), dtype=np.int64)
    model_correct = np.zeros(len(models), dtype=np.int64)
    combined_correct = 0
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        labels = batch_labels(chunk)
        per_model = []
        for m in models:
            probs = m.predict_proba(batch_images(chunk, m.input_side))
            per_model.append(probs)
        for i, m in enumerate(models):
            model_correct[i] += int((per_model[i].argmax(axis=-1) == labels).sum())
        for row in range(len(chunk)):
            combined = average([p[row] for p in per_model], weights)
            pred = int(combined.argmax())
            confusion[labels[row], pred] += 1
            combined_correct += pred == labels[row]

    total = len(samples)
    return EvalReport(
        accuracy=combined_correct / total,
        confusion=confusion,
        per_model_accuracy=[int(c) / total for c in model_correct],
    )
