"""One-way ANOVA F scores and K-best feature selection."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import SingleClass


def anova_f_scores(X: np.ndarray, y: Sequence) -> np.ndarray:
    """F value of every column of ``X`` against class labels ``y``.

    Constant columns score 0. Columns that are constant within every class
    but differ between classes score ``inf``.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    classes, codes = np.unique(np.asarray(y), return_inverse=True)
    k = len(classes)
    n = X.shape[0]
    if k < 2:
        raise SingleClass("ANOVA F needs at least two classes")

    counts = np.bincount(codes, minlength=k).astype(float)
    sums = np.zeros((k, X.shape[1]))
    np.add.at(sums, codes, X)
    means = sums / counts[:, None]
    grand = X.mean(axis=0)
    ssb = (counts[:, None] * (means - grand) ** 2).sum(axis=0)
    ssw = ((X - means[codes]) ** 2).sum(axis=0)

    constant = X.max(axis=0) == X.min(axis=0)
    within_constant = np.ones(X.shape[1], dtype=bool)
    for c in range(k):
        rows = X[codes == c]
        within_constant &= rows.max(axis=0) == rows.min(axis=0)

    with np.errstate(divide="ignore", invalid="ignore"):
        f = (ssb / (k - 1)) / (ssw / (n - k)) if n > k else np.full(X.shape[1], np.inf)
    f = np.where(within_constant, np.inf, f)
    f = np.where(constant | (ssb == 0), 0.0, f)
    return f


def anova_f(values: Sequence[float], classes: Sequence) -> float:
    return float(anova_f_scores(np.asarray(values, dtype=float)[:, None], classes)[0])


def select_k_best(X, y, k: int | None = None) -> np.ndarray:
    """Column indices of the ``k`` highest F scores, in ascending index order.

    Ties go to the lower column index. Accepts ``(X, y, k)`` or
    ``(dataset, k)`` for any object exposing ``X`` and ``y_index``.
    """
    if k is None:
        X, y, k = X.X, X.y_index, y
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = anova_f_scores(X, y)
    d = scores.shape[0]
    if k >= d:
        return np.arange(d)
    # stable sort on -score keeps lower indices first among equals
    order = np.argsort(-scores, kind="stable")
    return np.sort(order[:k])
