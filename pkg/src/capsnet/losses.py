"""Margin loss, reconstruction regularizer, and their weighted total."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError
from .tensor import Tensor

RECONSTRUCTION_SCALE = 5e-4


@dataclass(frozen=True)
class MarginLossParams:
    m_plus: float = 0.9
    m_minus: float = 0.1
    lambda_: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.m_minus < self.m_plus < 1.0:
            raise ContractError(f"need 0 < m_minus < m_plus < 1, got {self}")
        if self.lambda_ <= 0.0:
            raise ContractError(f"lambda must be positive, got {self.lambda_}")


def margin_loss(class_scores: Tensor, target, params: MarginLossParams = MarginLossParams()) -> Tensor:
    """Two-sided squared hinge on class scores.

    Present class k pays max(0, m_plus - score_k)^2; every absent class pays
    lambda * max(0, score_k - m_minus)^2. Scores are [C] with an integer
    target, or [B, C] with one target per row; batch losses are averaged.
    """
    single = class_scores.ndim == 1
    scores = T.reshape(class_scores, (1,) + class_scores.shape) if single else class_scores
    if scores.ndim != 2:
        raise ShapeError(f"class scores must be rank 1 or 2, got {list(class_scores.shape)}")
    bsz, n_class = scores.shape
    targets = np.atleast_1d(np.asarray(target, dtype=np.int64))
    if targets.shape != (bsz,):
        raise ContractError(f"need one target per sample, got {targets.shape} for batch {bsz}")
    if targets.min() < 0 or targets.max() >= n_class:
        raise ContractError(f"target out of range [0, {n_class})")

    present = np.zeros((bsz, n_class), dtype=T.DTYPE)
    present[np.arange(bsz), targets] = 1.0
    present_t = Tensor(present)
    absent_t = Tensor((1.0 - present) * T.DTYPE(params.lambda_))

    positive = T.square(T.max_with(T.add(T.scale(scores, -1.0), params.m_plus), 0.0))
    negative = T.square(T.max_with(T.add(scores, -params.m_minus), 0.0))
    per_sample = T.tsum(T.add(T.mul(present_t, positive), T.mul(absent_t, negative)), axis=1)
    return T.tmean(per_sample)


def reconstruction_loss(reconstruction: Tensor, image: Tensor) -> Tensor:
    """Sum of squared pixel differences; batched inputs average per-sample sums."""
    if reconstruction.shape != image.shape:
        raise ShapeError(
            f"reconstruction shape {list(reconstruction.shape)} != image shape {list(image.shape)}"
        )
    diff = T.square(T.sub(reconstruction, image))
    if diff.ndim == 1:
        return T.tsum(diff)
    per_sample = T.tsum(T.reshape(diff, (diff.shape[0], int(np.prod(diff.shape[1:], dtype=np.int64)))), axis=1)
    return T.tmean(per_sample)


def total_loss(margin: Tensor, reconstruction: Tensor, scale: float = RECONSTRUCTION_SCALE) -> Tensor:
    """Margin loss plus the reconstruction term scaled down so it cannot dominate."""
    return T.add(margin, T.scale(reconstruction, scale))
