"""Weighted metrics, leave-one-out cross-validation and the model grid."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from ..errors import EmptyPredictions, FoldDegenerate
from .anova import select_k_best
from .ensemble import ALGORITHMS, K_GRID, ModelConfig, fit_ensemble, predict_proba


@dataclass
class Prediction:
    subject_id: str
    true_class: str
    predicted_class: str
    proba: tuple[float, ...]


@dataclass
class EvalResult:
    accuracy: float
    wauc: float
    w_precision: float
    w_recall: float
    f1: float
    class_list: tuple
    pooled_predictions: list[Prediction] = field(default_factory=list)
    config: ModelConfig | None = None

    def row(self) -> dict:
        """Report row: algorithm, features and the five scores."""
        return {
            "algorithm": self.config.algorithm if self.config else None,
            "features": self.config.k_features if self.config else None,
            "accuracy": self.accuracy,
            "wauc": self.wauc,
            "w_precision": self.w_precision,
            "w_recall": self.w_recall,
            "f1": self.f1,
        }

    def to_dict(self) -> dict:
        out = self.row()
        out["config"] = asdict(self.config) if self.config else None
        out["class_list"] = list(self.class_list)
        out["pooled_predictions"] = [asdict(p) for p in self.pooled_predictions]
        return out


def f1_score(precision: float, recall: float) -> float:
    total = precision + recall
    return 2.0 * precision * recall / total if total > 0 else 0.0


def binary_auc(scores: np.ndarray, positive: np.ndarray) -> float:
    """ROC AUC via midranks (equal to trapezoidal area with tied scores)."""
    scores = np.asarray(scores, dtype=float)
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = len(positive) - n_pos
    if n_pos == 0 or n_neg == 0:
        return 0.5
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(len(scores))
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def metrics(y_true: Sequence, y_pred: Sequence, proba, class_list: Sequence,
            subject_ids: Sequence[str] | None = None) -> EvalResult:
    """Pooled accuracy, support-weighted precision/recall/AUC and their F1.

    ``proba`` has one column per entry of ``class_list``.
    """
    n = len(y_true)
    if n == 0:
        raise EmptyPredictions("no predictions to score")
    if len(y_pred) != n:
        raise ValueError("y_true and y_pred differ in length")
    class_list = tuple(class_list)
    proba = np.asarray(proba, dtype=float).reshape(n, len(class_list))
    lookup = {c: i for i, c in enumerate(class_list)}
    t = np.array([lookup[c] for c in y_true])
    p = np.array([lookup[c] for c in y_pred])
    k = len(class_list)
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (t, p), 1)

    correct = int(np.trace(cm))
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    diag = np.diag(cm)
    precision = np.divide(diag, predicted, out=np.zeros(k), where=predicted > 0)
    recall = np.divide(diag, support, out=np.zeros(k), where=support > 0)
    weights = support / n
    w_precision = float(weights @ precision)
    w_recall = float(weights @ recall)
    aucs = np.array([binary_auc(proba[:, c], t == c) if support[c] else 0.0 for c in range(k)])
    wauc = float(weights @ aucs)

    ids = list(subject_ids) if subject_ids is not None else [str(i) for i in range(n)]
    pooled = [Prediction(ids[i], y_true[i], y_pred[i], tuple(float(v) for v in proba[i]))
              for i in range(n)]
    return EvalResult(
        accuracy=correct / n,
        wauc=wauc,
        w_precision=w_precision,
        w_recall=w_recall,
        f1=f1_score(w_precision, w_recall),
        class_list=class_list,
        pooled_predictions=pooled,
    )


def fold_config(config: ModelConfig, i: int) -> ModelConfig:
    return replace(config, seed=(config.seed ^ i) & ((1 << 64) - 1))


def fold_predict(X: np.ndarray, y: np.ndarray, class_list: Sequence, i: int,
                 config: ModelConfig) -> np.ndarray:
    """Hold out row ``i``: select and train on the rest, return its probabilities."""
    train = np.ones(len(y), dtype=bool)
    train[i] = False
    X_tr, y_tr = X[train], y[train]
    if len(np.unique(y_tr)) < 2:
        raise FoldDegenerate(f"fold {i}: training labels hold a single class")
    selected = select_k_best(X_tr, y_tr, config.effective_k(X.shape[1]))
    model = fit_ensemble(X_tr, y_tr, class_list, fold_config(config, i), selected)
    return predict_proba(model, X[i])


def loocv_arrays(X: np.ndarray, y: np.ndarray, class_list: Sequence, config: ModelConfig,
                 subject_ids: Sequence[str] | None = None, n_jobs: int = 1) -> EvalResult:
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = len(y)
    if n < 3:
        raise ValueError("leave-one-out needs at least three subjects")
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            probas = list(pool.map(lambda i: fold_predict(X, y, class_list, i, config), range(n)))
    else:
        probas = [fold_predict(X, y, class_list, i, config) for i in range(n)]
    proba = np.vstack(probas)
    y_true = [class_list[v] for v in y]
    y_pred = [class_list[v] for v in np.argmax(proba, axis=1)]
    result = metrics(y_true, y_pred, proba, class_list, subject_ids)
    result.config = config
    return result


def loocv(dataset, config: ModelConfig, n_jobs: int = 1) -> EvalResult:
    """Leave-one-subject-out evaluation with selection redone inside every fold."""
    return loocv_arrays(dataset.X, dataset.y_index, dataset.classes, config,
                        dataset.subject_ids, n_jobs)


def grid_configs(base: ModelConfig | None = None, k_grid: Sequence[int] = K_GRID,
                 algorithms: Sequence[str] = ALGORITHMS) -> list[ModelConfig]:
    """Grid in tie-break order: RF before ET, then ascending k."""
    base = base or ModelConfig()
    return [replace(base, algorithm=a, k_features=k) for a in algorithms for k in sorted(k_grid)]


@dataclass
class GridResult:
    label_name: str
    results: list[EvalResult]

    def best(self, mode: str = "f1") -> EvalResult:
        if mode not in ("f1", "wauc"):
            raise ValueError("mode must be 'f1' or 'wauc'")
        # max keeps the first maximum, and results are in tie-break order
        return max(self.results, key=lambda r: getattr(r, mode))

    def to_dict(self) -> dict:
        return {
            "label": self.label_name,
            "grid": [r.row() for r in self.results],
            "best_f1": self.best("f1").to_dict(),
            "best_wauc": self.best("wauc").to_dict(),
        }


def evaluate_grid(dataset, base: ModelConfig | None = None, k_grid: Sequence[int] = K_GRID,
                  algorithms: Sequence[str] = ALGORITHMS, n_jobs: int = 1) -> GridResult:
    """LOOCV for every grid point.

    Points whose effective k coincides (k beyond the feature count) train
    identical models, so each distinct effective configuration runs once.
    """
    d = dataset.X.shape[1]
    done: dict[tuple, EvalResult] = {}
    results = []
    for config in grid_configs(base, k_grid, algorithms):
        key = (config.algorithm, config.effective_k(d))
        if key not in done:
            done[key] = loocv(dataset, config, n_jobs)
        res = replace(done[key], config=config)
        results.append(res)
    return GridResult(dataset.label_name, results)


def grid_search(dataset, mode: str = "f1", base: ModelConfig | None = None,
                n_jobs: int = 1) -> tuple[ModelConfig, EvalResult]:
    best = evaluate_grid(dataset, base, n_jobs=n_jobs).best(mode)
    return best.config, best


def report_json(grid: GridResult) -> str:
    doc = {"schema_version": 1, **grid.to_dict()}
    return json.dumps(doc, indent=2, sort_keys=True)
