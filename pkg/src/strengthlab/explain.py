"""Shapley attributions for tree models and the plot data built from them.

Two value functions are supported.  ``path`` (the default) conditions on the
features in a coalition by following ``x`` at their splits and averaging the
other branches by training cover; its base value is the cover-weighted mean
prediction.  ``interventional`` replaces absent features by rows of an
explicit background set; its base value is the mean background prediction.
Both are exact and satisfy ``base + sum(phi) == f(x)`` up to rounding.

Hybrids with an encoder stage are explained on the booster's encoded inputs
(features ``z0 .. z{d-1}``), not on the raw columns.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .boosting import GBTModel
from .dataset import Dataset
from .errors import ShapeError, TooManyFeaturesError, UnknownFeatureError, UnsupportedModelError
from .hybrid import HybridModel
from .trees import ForestModel, Tree

MODES = ("path", "interventional")
BRUTE_MAX_FEATURES = 12


@dataclass(frozen=True)
class _Ensemble:
    """Trees with per-tree scales and a constant offset: ``f(x) = offset + sum scale_t * tree_t(x)``."""

    trees: tuple
    scales: np.ndarray
    offset: float
    transform: object = None
    space: str = "raw"

    def packed(self):
        sizes = [t.node_count for t in self.trees]
        starts = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)

        def cat(name, dtype):
            if not self.trees:
                return np.zeros(0, dtype)
            return np.ascontiguousarray(np.concatenate([getattr(t, name) for t in self.trees]), dtype=dtype)

        depths = np.array([t.max_depth for t in self.trees], dtype=np.int64)
        return (cat("feature", np.int64), cat("threshold", np.float64), cat("left", np.int64),
                cat("right", np.int64), cat("value", np.float64), cat("cover", np.float64),
                starts, depths, np.ascontiguousarray(self.scales, dtype=np.float64))

    def expected_value(self) -> float:
        total = self.offset
        for t, s in zip(self.trees, self.scales):
            leaves = t.feature < 0
            total += s * float(np.dot(t.value[leaves], t.cover[leaves]) / t.cover[0])
        return total

    def predict(self, X) -> np.ndarray:
        out = np.full(X.shape[0], self.offset)
        for t, s in zip(self.trees, self.scales):
            out += s * t.predict(X)
        return out


def _ensemble(model) -> _Ensemble:
    if isinstance(model, Tree):
        return _Ensemble((model,), np.ones(1), 0.0)
    if isinstance(model, ForestModel):
        m = len(model.trees)
        return _Ensemble(model.trees, np.full(m, 1.0 / m), 0.0)
    if isinstance(model, GBTModel):
        return _Ensemble(model.trees, np.full(len(model.trees), model.learning_rate), model.base_score)
    if isinstance(model, HybridModel):
        booster = _ensemble(model.stage2)
        if model.feature_space == "encoded":
            return _Ensemble(booster.trees, booster.scales, booster.offset, model.transform, "encoded")
        forest = _ensemble(model.stage1)
        return _Ensemble(forest.trees + booster.trees, np.concatenate([forest.scales, booster.scales]),
                         booster.offset)
    raise UnsupportedModelError(f"no exact tree explainer for {type(model).__name__}")


def _as_matrix(X):
    X = np.ascontiguousarray(X, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2:
        raise ShapeError(f"expected a vector or matrix, got shape {X.shape}")
    return X, single


def _check_width(ens: _Ensemble, X):
    used = [int(t.feature.max()) for t in ens.trees if (t.feature >= 0).any()]
    if used and X.shape[1] <= max(used):
        raise ShapeError(f"input has {X.shape[1]} features, model uses feature {max(used)}")


def tree_shap(model, x, mode: str = "path", background=None):
    """Exact Shapley values of a tree model; returns ``(phi, base_value)``.

    ``x`` may be a vector (``phi`` is then a vector) or a matrix.  The
    interventional mode needs ``background`` (a matrix or :class:`Dataset`).
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    ens = _ensemble(model)
    X, single = _as_matrix(x)
    if ens.transform is not None:
        X = np.ascontiguousarray(ens.transform(X))
    _check_width(ens, X)
    feature, threshold, left, right, value, cover, starts, depths, scales = ens.packed()
    phi = np.zeros_like(X)
    if mode == "path":
        base = ens.expected_value()
        K.tree_shap_batch(feature, threshold, left, right, value, cover, starts, depths, scales, X, phi)
    else:
        if background is None:
            raise ValueError("interventional mode needs a background set")
        B = background.X if isinstance(background, Dataset) else background
        B, _ = _as_matrix(B)
        if B.shape[0] == 0:
            raise ValueError("background set is empty")
        if ens.transform is not None:
            B = np.ascontiguousarray(ens.transform(B))
        if B.shape[1] != X.shape[1]:
            raise ShapeError("background and samples differ in width")
        base = float(ens.predict(B).mean())
        K.tree_shap_interventional_batch(feature, threshold, left, right, value, starts, scales, X, B, phi)
    return (phi[0], base) if single else (phi, base)


def _predictor(model):
    if callable(model) and not hasattr(model, "predict"):
        return model
    if hasattr(model, "predict"):
        return model.predict
    raise UnsupportedModelError(f"{type(model).__name__} has no predict method")


def brute_shap(model, x, background):
    """Interventional Shapley values by enumerating all ``2**d`` coalitions.

    ``v(S)`` averages the model over background rows with the features in
    ``S`` taken from ``x``.  Returns ``(phi, base_value)`` with ``base = v({})``.
    """
    f = _predictor(model)
    x = np.asarray(x, dtype=np.float64).ravel()
    B = background.X if isinstance(background, Dataset) else np.asarray(background, dtype=np.float64)
    B = np.atleast_2d(B)
    d = x.shape[0]
    if d > BRUTE_MAX_FEATURES:
        raise TooManyFeaturesError(f"{d} features exceeds the enumeration limit of {BRUTE_MAX_FEATURES}")
    if B.shape[0] == 0:
        raise ValueError("background set is empty")
    if B.shape[1] != d:
        raise ShapeError("background and sample differ in width")
    masks = np.arange(2 ** d)
    member = ((masks[:, None] >> np.arange(d)) & 1).astype(bool)
    rows = np.where(member[:, None, :], x[None, None, :], B[None, :, :]).reshape(-1, d)
    v = np.asarray(f(rows), dtype=np.float64).reshape(2 ** d, B.shape[0]).mean(axis=1)
    sizes = member.sum(axis=1)
    weight = np.array([math.factorial(s) * math.factorial(d - s - 1) / math.factorial(d) if s < d else 0.0
                       for s in sizes])
    phi = np.zeros(d)
    for j in range(d):
        without = masks[~member[:, j]]
        phi[j] = float(np.sum(weight[without] * (v[without | (1 << j)] - v[without])))
    return phi, float(v[0])


# ---------------------------------------------------------------------------
# attribution tables


@dataclass(frozen=True)
class ShapMatrix:
    """Attributions (target units) for ``n`` samples over ``d`` features.

    ``data`` holds the explained feature values, in the space the model was
    explained in.
    """

    values: np.ndarray
    base_value: float
    feature_names: tuple
    sample_ids: tuple
    data: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != len(self.feature_names) or v.shape[0] != len(self.sample_ids):
            raise ShapeError("values must be n x d matching sample_ids and feature_names")
        data = np.array(self.data, dtype=np.float64)
        if data.shape != v.shape:
            raise ShapeError("data must have the same shape as values")
        for a in (v, data):
            a.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "sample_ids", tuple(int(i) for i in self.sample_ids))

    @property
    def predictions(self) -> np.ndarray:
        return self.base_value + self.values.sum(axis=1)

    def feature_index(self, name: str) -> int:
        try:
            return self.feature_names.index(name)
        except ValueError:
            raise UnknownFeatureError(name) from None

    def write_long_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "feature", "value", "shap"])
        for i, sid in enumerate(self.sample_ids):
            for j, name in enumerate(self.feature_names):
                w.writerow([sid, name, repr(float(self.data[i, j])), repr(float(self.values[i, j]))])

    def to_dict(self) -> dict:
        return {"base_value": float(self.base_value), "feature_names": list(self.feature_names),
                "sample_ids": list(self.sample_ids),
                "values": [[float(v) for v in row] for row in self.values],
                "data": [[float(v) for v in row] for row in self.data]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def explain(model, X, feature_names=None, sample_ids=None, mode: str = "path",
            background=None) -> ShapMatrix:
    """:class:`ShapMatrix` of ``model`` on the rows of ``X`` (a matrix or :class:`Dataset`)."""
    if isinstance(X, Dataset):
        feature_names = feature_names or X.feature_names
        X = X.X
    X, _ = _as_matrix(X)
    phi, base = tree_shap(model, X, mode, background)
    data = X
    ens = _ensemble(model)
    if ens.transform is not None:
        data = ens.transform(X)
        feature_names = tuple(f"z{j}" for j in range(data.shape[1]))
    elif feature_names is None:
        feature_names = getattr(model, "feature_names", None) or tuple(f"x{j}" for j in range(X.shape[1]))
    if sample_ids is None:
        sample_ids = range(X.shape[0])
    return ShapMatrix(phi, base, tuple(feature_names), tuple(sample_ids), data)


@dataclass(frozen=True)
class ImportanceRanking:
    items: tuple  # ((feature, mean |shap|), ...), descending

    def features(self) -> list:
        return [f for f, _ in self.items]

    def top(self, k: int) -> list:
        return self.features()[:k]

    def write_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "feature", "mean_abs_shap"])
        for i, (f, v) in enumerate(self.items, start=1):
            w.writerow([i, f, repr(float(v))])


def global_importance(shap: ShapMatrix) -> ImportanceRanking:
    """Mean absolute attribution per feature, largest first; ties ordered by name."""
    imp = np.abs(shap.values).mean(axis=0) if shap.values.shape[0] else np.zeros(len(shap.feature_names))
    items = sorted(zip(shap.feature_names, (float(v) for v in imp)), key=lambda p: (-p[1], p[0]))
    return ImportanceRanking(tuple(items))


def dependence(shap: ShapMatrix, ds: Dataset | None, feature: str) -> list:
    """``(feature value, attribution)`` pairs sorted by value (stable on ties).

    Values come from ``ds`` at the matrix's sample ids, or from the matrix's
    own data when ``ds`` is None.
    """
    j = shap.feature_index(feature)
    if ds is None:
        vals = shap.data[:, j]
    else:
        if feature not in ds.feature_names:
            raise UnknownFeatureError(feature)
        vals = ds.column(feature)[list(shap.sample_ids)]
    col = shap.values[:, j]
    order = np.argsort(vals, kind="stable")
    return [(float(vals[i]), float(col[i])) for i in order]


def dependence_slope(pairs) -> float:
    """Least-squares slope of attribution on feature value."""
    a = np.array(pairs, dtype=np.float64).reshape(-1, 2)
    x = a[:, 0] - a[:, 0].mean()
    denom = float(np.dot(x, x))
    return float(np.dot(x, a[:, 1] - a[:, 1].mean()) / denom) if denom > 0 else 0.0


def write_dependence_csv(fh, feature: str, pairs) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow([feature, "shap"])
    for v, s in pairs:
        w.writerow([repr(v), repr(s)])


def waterfall(shap: ShapMatrix, row: int) -> dict:
    """One sample's attributions sorted by magnitude (ties by name) with base and prediction."""
    vals = shap.values[row]
    order = sorted(range(len(vals)), key=lambda j: (-abs(vals[j]), shap.feature_names[j]))
    return {"sample_id": shap.sample_ids[row], "base_value": float(shap.base_value),
            "prediction": float(shap.base_value + vals.sum()),
            "contributions": [{"feature": shap.feature_names[j], "value": float(shap.data[row, j]),
                               "shap": float(vals[j])} for j in order]}
