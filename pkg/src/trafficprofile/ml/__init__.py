"""Feature selection, tree ensembles and their evaluation."""

from .anova import anova_f, anova_f_scores, select_k_best
from .ensemble import (ALGORITHMS, DEFAULT_SEED, ET, K_GRID, RF, ModelConfig, TrainedEnsemble,
                       feature_importance, fit_ensemble, predict, predict_proba, train)
from .evaluation import (EvalResult, GridResult, evaluate_grid, f1_score, fold_predict,
                         grid_search, loocv, metrics)

__all__ = [
    "ALGORITHMS", "DEFAULT_SEED", "ET", "K_GRID", "RF", "EvalResult", "GridResult",
    "ModelConfig", "TrainedEnsemble", "anova_f", "anova_f_scores", "evaluate_grid", "f1_score",
    "feature_importance", "fit_ensemble", "fold_predict", "grid_search", "loocv", "metrics",
    "predict", "predict_proba", "select_k_best", "train",
]
