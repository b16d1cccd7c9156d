import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.metrics import precision_score, recall_score, roc_auc_score

from trafficprofile.errors import EmptyPredictions, FoldDegenerate
from trafficprofile.ml.ensemble import ET, K_GRID, RF, ModelConfig
from trafficprofile.ml.evaluation import (EvalResult, GridResult, binary_auc, evaluate_grid,
                                          f1_score, fold_config, grid_configs, grid_search,
                                          loocv, metrics, report_json)


class Toy:
    """Minimal dataset: rows, class indices and names."""

    def __init__(self, X, y, classes=("A", "B"), label_name="gender"):
        self.X = np.asarray(X, dtype=float)
        self.y_index = np.asarray(y)
        self.classes = tuple(classes)
        self.subject_ids = [f"s{i:02d}" for i in range(len(y))]
        self.label_name = label_name


def brute_metrics(y_true, y_pred, proba, class_list):
    """Per-pair recomputation without a confusion matrix."""
    n = len(y_true)
    acc = sum(t == p for t, p in zip(y_true, y_pred)) / n
    wp = wr = wauc = 0.0
    for ci, c in enumerate(class_list):
        support = sum(t == c for t in y_true)
        if not support:
            continue
        tp = sum(t == c and p == c for t, p in zip(y_true, y_pred))
        npred = sum(p == c for p in y_pred)
        prec = tp / npred if npred else 0.0
        rec = tp / support
        pos = [proba[i][ci] for i in range(n) if y_true[i] == c]
        neg = [proba[i][ci] for i in range(n) if y_true[i] != c]
        if pos and neg:
            auc = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a in pos for b in neg)
            auc /= len(pos) * len(neg)
        else:
            auc = 0.5
        w = support / n
        wp, wr, wauc = wp + w * prec, wr + w * rec, wauc + w * auc
    f1 = 2 * wp * wr / (wp + wr) if wp + wr else 0.0
    return acc, wp, wr, f1, wauc


def test_hand_confusion_example():
    res = metrics(list("MMF"), list("MFF"), [[.9, .1], [.4, .6], [.2, .8]], ("M", "F"))
    assert round(res.accuracy, 3) == 0.667
    assert round(res.w_precision, 3) == 0.833
    assert round(res.w_recall, 3) == 0.667
    assert round(res.f1, 3) == 0.741


def test_f1_formula():
    assert round(f1_score(0.851, 0.793), 3) == 0.821
    assert f1_score(0, 0) == 0


def test_perfect_ranking_auc():
    res = metrics(list("AABB"), list("AABB"), [[.9, .1], [.8, .2], [.3, .7], [.1, .9]], "AB")
    assert res.wauc == 1.0


def test_auc_ties_midpoint():
    assert binary_auc([0.5, 0.5], [True, False]) == 0.5
    assert binary_auc([0.1, 0.5, 0.5, 0.9], [False, True, False, True]) == 0.875


def test_never_predicted_class_has_zero_precision():
    res = metrics(list("AB"), list("AA"), [[1, 0], [1, 0]], "AB")
    assert res.w_precision == 0.25


def test_empty_predictions():
    with pytest.raises(EmptyPredictions):
        metrics([], [], np.zeros((0, 2)), "AB")


def test_matches_sklearn_binary():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(4, 30))
        t = rng.integers(0, 2, n)
        t[:2] = [0, 1]
        p1 = np.round(rng.uniform(size=n), 1)
        proba = np.column_stack([1 - p1, p1])
        pred = (p1 > 0.5).astype(int)
        res = metrics(list(t), list(pred), proba, (0, 1))
        assert res.w_precision == pytest.approx(
            precision_score(t, pred, average="weighted", zero_division=0), abs=1e-12)
        assert res.w_recall == pytest.approx(recall_score(t, pred, average="weighted"), abs=1e-12)
        assert res.wauc == pytest.approx(roc_auc_score(t, p1), abs=1e-12)


def test_matches_brute_force_on_random_instances():
    rnd = random.Random(1)
    for _ in range(1000):
        k = rnd.randint(2, 4)
        classes = tuple("ABCD"[:k])
        n = rnd.randint(1, 25)
        y_true = [rnd.choice(classes) for _ in range(n)]
        raw = [[rnd.choice([0.0, 0.25, 0.5, 1.0]) + 1e-3 for _ in classes] for _ in range(n)]
        proba = [[v / sum(r) for v in r] for r in raw]
        y_pred = [rnd.choice(classes) for _ in range(n)]
        res = metrics(y_true, y_pred, proba, classes)
        acc, wp, wr, f1, wauc = brute_metrics(y_true, y_pred, proba, classes)
        assert res.accuracy == acc
        assert res.w_precision == pytest.approx(wp, abs=1e-12)
        assert res.w_recall == pytest.approx(wr, abs=1e-12)
        assert res.f1 == pytest.approx(f1, abs=1e-12)
        assert res.wauc == pytest.approx(wauc, abs=1e-9)
        if res.w_precision + res.w_recall:
            assert res.f1 == 2 * res.w_precision * res.w_recall / (res.w_precision + res.w_recall)


def test_four_subjects_indicator_feature():
    ds = Toy([[0.0], [0.0], [1.0], [1.0]], [0, 0, 1, 1])
    for algorithm in (RF, ET):
        res = loocv(ds, ModelConfig(algorithm, k_features=1, n_trees=10, max_depth=1))
        assert res.accuracy == 1.0
        assert len(res.pooled_predictions) == 4
        assert [p.subject_id for p in res.pooled_predictions] == ds.subject_ids


def test_fold_degenerate():
    ds = Toy([[0.0], [0.0], [1.0]], [0, 0, 1])
    with pytest.raises(FoldDegenerate):
        loocv(ds, ModelConfig(n_trees=2))


def test_too_few_subjects():
    with pytest.raises(ValueError):
        loocv(Toy([[0.0], [1.0]], [0, 1]), ModelConfig(n_trees=2))


def test_fold_seed():
    assert fold_config(ModelConfig(seed=12), 5).seed == 12 ^ 5


def test_thread_count_does_not_change_results():
    rng = np.random.default_rng(3)
    y = np.arange(24) % 3
    X = rng.normal(size=(24, 8)) + y[:, None] * 0.7
    ds = Toy(X, y, ("A", "B", "C"))
    cfg = ModelConfig(ET, k_features=5, n_trees=10)
    a, b = loocv(ds, cfg, n_jobs=1), loocv(ds, cfg, n_jobs=3)
    assert a.to_dict() == b.to_dict()


def _result(f1, wauc, config):
    return EvalResult(0.5, wauc, 0.5, 0.5, f1, ("A", "B"), [], config)


def test_grid_order():
    configs = grid_configs()
    assert [(c.algorithm, c.k_features) for c in configs] == \
        [(a, k) for a in (RF, ET) for k in sorted(K_GRID)]


def test_grid_argmax_and_ties():
    configs = grid_configs()
    grid = GridResult("gender", [_result(0.7, 0.5, c) for c in configs])
    best = grid.best("f1").config
    assert (best.algorithm, best.k_features) == (RF, 30)
    grid.results[6] = _result(0.8, 0.5, configs[6])
    assert grid.best("f1").config == configs[6]
    grid.results[8] = _result(0.8, 0.5, configs[8])
    assert grid.best("f1").config == configs[6]
    with pytest.raises(ValueError):
        grid.best("accuracy")


def test_f1_and_wauc_can_pick_different_models():
    y = list("AAAAABBBBB")
    # A: 8/10 correct but the two errors are confidently wrong
    pb_a = [.1, .2, .1, .2, .9, .8, .9, .7, .6, .1]
    # B: 7/10 correct, yet every B scores above every A
    pb_b = [.1, .2, .55, .56, .57, .8, .9, .7, .6, .65]
    results = []
    for pb, cfg in ((pb_a, ModelConfig(RF)), (pb_b, ModelConfig(ET))):
        proba = np.column_stack([1 - np.array(pb), pb])
        pred = ["B" if p > .5 else "A" for p in pb]
        res = metrics(y, pred, proba, "AB")
        res.config = cfg
        results.append(res)
    grid = GridResult("gender", results)
    assert results[0].f1 > results[1].f1 and results[1].wauc > results[0].wauc
    assert grid.best("f1").config.algorithm == RF
    assert grid.best("wauc").config.algorithm == ET


def test_evaluate_grid_dedups_large_k():
    rng = np.random.default_rng(4)
    y = np.arange(12) % 2
    ds = Toy(rng.normal(size=(12, 20)) + y[:, None], y)
    grid = evaluate_grid(ds, ModelConfig(n_trees=5), k_grid=(30, 50))
    rf30, rf50, et30, et50 = grid.results
    assert rf30.pooled_predictions == rf50.pooled_predictions
    assert [r.config.k_features for r in grid.results] == [30, 50, 30, 50]
    cfg, res = grid_search(ds, "wauc", ModelConfig(n_trees=5))
    assert res.config == cfg
    assert '"label": "gender"' in report_json(grid)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.sampled_from("ABC"), st.sampled_from("ABC"),
                          st.floats(0, 1), st.floats(0, 1), st.floats(0, 1)),
                min_size=1, max_size=30))
def test_metric_ranges_and_f1_identity(rows):
    y_true = [r[0] for r in rows]
    y_pred = [r[1] for r in rows]
    proba = np.array([[a + 1e-6, b + 1e-6, c + 1e-6] for *_, a, b, c in rows])
    proba /= proba.sum(axis=1, keepdims=True)
    res = metrics(y_true, y_pred, proba, "ABC")
    for v in (res.accuracy, res.w_precision, res.w_recall, res.f1, res.wauc):
        assert 0 <= v <= 1
    # support-weighted recall is the pooled accuracy
    assert res.w_recall == pytest.approx(res.accuracy, abs=1e-12)
    assert res.f1 == f1_score(res.w_precision, res.w_recall)
