"""Hybrid tree-ensemble and attention regressors for concrete strength data."""

from .attention import AttentionConfig, TransformerModel, encode, encoder_forward, fit_transformer, scaled_dot_attention
from .boosting import GBTModel, GBTParams, HistogramParams, fit_gbt, leaf_weight, predict_gbt, split_gain
from .dataset import Dataset, SplitIndices, StatsTable, load_csv, pearson_matrix, reference_dataset, split, summarize, synthesize
from .evaluation import MetricsReport, UncertaintyReport, compare_uncertainty, evaluate, uncertainty
from .explain import ShapMatrix, brute_shap, dependence, explain, global_importance, tree_shap
from .hybrid import HybridModel, HybridSpec, default_spec, evaluate_hybrid, fit_hybrid, predict_hybrid, preset_spec
from .trees import ForestModel, Tree, TreeParams, fit_forest, fit_tree, predict_forest, predict_tree
from .tuning import SearchSpace, cross_validate, kfold, random_search

__version__ = "0.1.0"

__all__ = [
    "AttentionConfig",
    "TransformerModel",
    "encode",
    "encoder_forward",
    "fit_transformer",
    "scaled_dot_attention",
    "GBTModel",
    "GBTParams",
    "HistogramParams",
    "fit_gbt",
    "leaf_weight",
    "predict_gbt",
    "split_gain",
    "Dataset",
    "SplitIndices",
    "StatsTable",
    "load_csv",
    "pearson_matrix",
    "reference_dataset",
    "split",
    "summarize",
    "synthesize",
    "MetricsReport",
    "UncertaintyReport",
    "compare_uncertainty",
    "evaluate",
    "uncertainty",
    "ShapMatrix",
    "brute_shap",
    "dependence",
    "explain",
    "global_importance",
    "tree_shap",
    "HybridModel",
    "HybridSpec",
    "default_spec",
    "evaluate_hybrid",
    "fit_hybrid",
    "predict_hybrid",
    "preset_spec",
    "ForestModel",
    "Tree",
    "TreeParams",
    "fit_forest",
    "fit_tree",
    "predict_forest",
    "predict_tree",
    "SearchSpace",
    "cross_validate",
    "kfold",
    "random_search",
]
