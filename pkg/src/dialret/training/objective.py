"""Dot-product scoring and the in-batch contrastive objective."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..numerics import (
    NumericError,
    ShapeError,
    Tensor,
    concat,
    getitem,
    log_softmax,
    matmul,
    mean,
    mul,
    reshape,
    swap_last,
    tsum,
)


def similarity(x, y) -> float:
    """Plain dot product; no normalization, no temperature."""
    xd = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    yd = y.data if isinstance(y, Tensor) else np.asarray(y, dtype=np.float64)
    if xd.shape != yd.shape or xd.ndim != 1:
        raise ShapeError(f"similarity needs two equal-length vectors, got {xd.shape} and {yd.shape}")
    return float(xd @ yd)


def _dot(x: Tensor, y: Tensor) -> Tensor:
    return reshape(tsum(mul(x, y)), (1,))


def contrastive_loss(x: Tensor, y_pos: Tensor, y_negs: Sequence[Tensor]) -> Tensor:
    """-log softmax of the positive score against the negatives' scores."""
    for y in (y_pos, *y_negs):
        if y.shape != x.shape:
            raise ShapeError(f"embedding shapes differ: {x.shape} vs {y.shape}")
    scores = concat([_dot(x, y_pos)] + [_dot(x, y) for y in y_negs], axis=0)
    if not np.all(np.isfinite(scores.data)):
        raise NumericError("non-finite similarity score")
    return mul(getitem(log_softmax(scores), 0), -1.0)


def score_matrix(queries: Tensor, candidates: Tensor) -> Tensor:
    """(B, N) dot products between query rows and candidate rows."""
    return matmul(queries, swap_last(candidates))


def in_batch_loss(queries: Tensor, candidates: Tensor) -> Tensor:
    """Mean contrastive loss where row ``i``'s positive is candidate ``i``.

    Every other row's positive serves as a negative.
    """
    if queries.shape != candidates.shape or queries.ndim != 2:
        raise ShapeError(f"expected matching (B, D) embeddings, got {queries.shape} and {candidates.shape}")
    n = queries.shape[0]
    scores = score_matrix(queries, candidates)
    if not np.all(np.isfinite(scores.data)):
        raise NumericError("non-finite similarity score")
    diag = getitem(log_softmax(scores, axis=-1), (np.arange(n), np.arange(n)))
    return mul(mean(diag), -1.0)
