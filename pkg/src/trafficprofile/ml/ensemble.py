"""Random forest / extra trees ensembles built on the compiled tree grower."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np

from ..errors import DegenerateLabel, DimensionMismatch
from .anova import select_k_best
from .trees import bootstrap_indices, build_tree, mix_seed, predict_tree

DEFAULT_SEED = 20160101
RF = "RF"
ET = "ET"
ALGORITHMS = (RF, ET)
K_GRID = (30, 50, 80, 100, 120)


@dataclass(frozen=True)
class ModelConfig:
    algorithm: str = RF
    k_features: int = 30
    n_trees: int = 100
    max_depth: int | None = None
    min_samples_split: int = 2
    # "sqrt", "log2", "all" or an explicit count
    features_per_split: str | int = "sqrt"
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be RF or ET, got {self.algorithm!r}")
        if self.k_features < 1:
            raise ValueError("k_features must be >= 1")
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")

    def effective_k(self, d: int) -> int:
        return min(self.k_features, d)

    def max_features(self, d: int) -> int:
        rule = self.features_per_split
        if isinstance(rule, int):
            return max(1, min(rule, d))
        if rule == "sqrt":
            return max(1, math.isqrt(d))
        if rule == "log2":
            return max(1, int(math.log2(d))) if d > 1 else 1
        if rule == "all":
            return d
        raise ValueError(f"unknown features_per_split rule {rule!r}")


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    proba: np.ndarray
    n_node_samples: np.ndarray
    impurity: np.ndarray

    @property
    def node_count(self) -> int:
        return len(self.feature)

    def importances(self, n_features: int) -> np.ndarray:
        """Unnormalized weighted impurity decrease per (local) feature."""
        out = np.zeros(n_features)
        n_root = self.n_node_samples[0]
        for node in np.flatnonzero(self.feature >= 0):
            l, r = self.left[node], self.right[node]
            decrease = (self.n_node_samples[node] * self.impurity[node]
                        - self.n_node_samples[l] * self.impurity[l]
                        - self.n_node_samples[r] * self.impurity[r]) / n_root
            out[self.feature[node]] += decrease
        return out

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "proba": self.proba.tolist(),
            "n_node_samples": self.n_node_samples.tolist(),
            "impurity": self.impurity.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Tree":
        return cls(
            feature=np.asarray(data["feature"], dtype=np.int64),
            threshold=np.asarray(data["threshold"], dtype=np.float64),
            left=np.asarray(data["left"], dtype=np.int64),
            right=np.asarray(data["right"], dtype=np.int64),
            proba=np.asarray(data["proba"], dtype=np.float64),
            n_node_samples=np.asarray(data["n_node_samples"], dtype=np.int64),
            impurity=np.asarray(data["impurity"], dtype=np.float64),
        )


@dataclass
class TrainedEnsemble:
    trees: list[Tree]
    class_list: tuple
    selected_feature_indices: np.ndarray
    n_features_in: int
    config: ModelConfig
    feature_names: tuple[str, ...] | None = None

    def predict_proba(self, X) -> np.ndarray:
        return predict_proba(self, X)

    def predict(self, X) -> list:
        return predict(self, X)

    def to_json(self) -> str:
        doc = {
            "schema_version": 1,
            "config": asdict(self.config),
            "class_list": list(self.class_list),
            "selected_features": self.selected_feature_indices.tolist(),
            "selected_feature_names": ([self.feature_names[i] for i in self.selected_feature_indices]
                                       if self.feature_names else None),
            "n_features_in": self.n_features_in,
            "trees": [t.to_dict() for t in self.trees],
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainedEnsemble":
        doc = json.loads(text)
        return cls(
            trees=[Tree.from_dict(t) for t in doc["trees"]],
            class_list=tuple(doc["class_list"]),
            selected_feature_indices=np.asarray(doc["selected_features"], dtype=np.int64),
            n_features_in=doc["n_features_in"],
            config=ModelConfig(**doc["config"]),
        )


def fit_ensemble(X: np.ndarray, y: np.ndarray, class_list: Sequence, config: ModelConfig,
                 selected: np.ndarray | None = None) -> TrainedEnsemble:
    """Train on ``X[:, selected]``; ``y`` holds indices into ``class_list``."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(np.unique(y)) < 2:
        raise DegenerateLabel("training labels contain a single class")
    d_in = X.shape[1]
    selected = np.arange(d_in) if selected is None else np.asarray(selected, dtype=np.int64)
    Xs = np.ascontiguousarray(X[:, selected])
    n, d = Xs.shape
    n_classes = len(class_list)
    max_features = config.max_features(d)
    max_depth = -1 if config.max_depth is None else config.max_depth
    randomized = config.algorithm == ET
    trees = []
    for j in range(config.n_trees):
        seed = mix_seed(config.seed, j)
        rows = bootstrap_indices(n, np.uint64(mix_seed(seed, 1))) if not randomized else np.arange(n)
        feat, thr, left, right, counts, n_samp, imp = build_tree(
            Xs, y, n_classes, rows, max_features, max_depth, config.min_samples_split,
            randomized, np.uint64(seed))
        proba = counts / counts.sum(axis=1, keepdims=True)
        trees.append(Tree(feat, thr, left, right, proba, n_samp, imp))
    return TrainedEnsemble(trees, tuple(class_list), selected, d_in, config)


def train(dataset, config: ModelConfig) -> TrainedEnsemble:
    """K-best selection on the whole dataset, then ensemble training."""
    X, y = dataset.X, dataset.y_index
    selected = select_k_best(X, y, config.effective_k(X.shape[1]))
    model = fit_ensemble(X, y, dataset.classes, config, selected)
    model.feature_names = tuple(dataset.feature_names)
    return model


def predict_proba(model: TrainedEnsemble, X) -> np.ndarray:
    """Mean leaf class distribution over trees; 1-D input gives a 1-D result."""
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.shape[1] != model.n_features_in:
        raise DimensionMismatch(f"expected {model.n_features_in} features, got {X.shape[1]}")
    Xs = np.ascontiguousarray(X[:, model.selected_feature_indices])
    total = np.zeros((Xs.shape[0], len(model.class_list)))
    for t in model.trees:
        total += predict_tree(t.feature, t.threshold, t.left, t.right, t.proba, Xs)
    out = total / len(model.trees)
    return out[0] if single else out


def predict(model: TrainedEnsemble, X) -> list:
    proba = np.atleast_2d(predict_proba(model, X))
    # argmax returns the first maximum, i.e. the earlier class on ties
    return [model.class_list[i] for i in np.argmax(proba, axis=1)]


def feature_importance(model: TrainedEnsemble) -> list[tuple[int, float]]:
    """Mean normalized Gini importance per input feature, highest first.

    Trees without any impurity-reducing split are left out of the mean.
    """
    k = len(model.selected_feature_indices)
    per_tree = []
    for t in model.trees:
        imp = t.importances(k)
        total = imp.sum()
        if total > 0:
            per_tree.append(imp / total)
    local = np.mean(per_tree, axis=0) if per_tree else np.zeros(k)
    full = np.zeros(model.n_features_in)
    full[model.selected_feature_indices] = local
    order = sorted(range(model.n_features_in), key=lambda i: (-full[i], i))
    return [(i, float(full[i])) for i in order]


def with_seed(config: ModelConfig, seed: int) -> ModelConfig:
    return replace(config, seed=seed)
