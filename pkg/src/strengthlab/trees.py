"""Regression trees (CART and Extra-Trees splitting) and bagged forests."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from . import _kernels as K
from .errors import ConfigError, EmptyDataError, ShapeError
from .rng import Stream, derive_seed

SPLIT_MODES = ("exact", "random_threshold")


def thread_count() -> int:
    """Worker count from ``STRENGTHLAB_THREADS`` (default 1); never affects results."""
    raw = os.environ.get("STRENGTHLAB_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


@dataclass(frozen=True)
class Tree:
    """Flat preorder tree; node 0 is the root, ``feature == -1`` marks a leaf.

    ``value`` holds the node mean (CART) or leaf weight (boosting) and is the
    prediction at leaves.  ``cover`` is the training weight reaching a node
    (row count for CART, hessian sum for boosting).
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    cover: np.ndarray

    def __post_init__(self):
        for name, dtype in (("feature", np.int64), ("threshold", np.float64), ("left", np.int64),
                            ("right", np.int64), ("value", np.float64), ("n_samples", np.int64),
                            ("cover", np.float64)):
            arr = np.array(getattr(self, name), dtype=dtype)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def leaf(cls, value: float, n: int = 1) -> "Tree":
        return cls([-1], [0.0], [-1], [-1], [value], [n], [float(n)])

    @classmethod
    def stump(cls, feature: int, threshold: float, left_value: float, right_value: float,
              n_left: int = 1, n_right: int = 1) -> "Tree":
        n = n_left + n_right
        mean = (left_value * n_left + right_value * n_right) / n
        return cls([feature, -1, -1], [threshold, 0.0, 0.0], [1, -1, -1], [2, -1, -1],
                   [mean, left_value, right_value], [n, n_left, n_right],
                   [float(n), float(n_left), float(n_right)])

    @property
    def node_count(self) -> int:
        return len(self.feature)

    @property
    def is_leaf(self) -> np.ndarray:
        return self.feature < 0

    @property
    def max_depth(self) -> int:
        return int(K.tree_depth(self.left, self.right))

    @property
    def n_features_used(self) -> set:
        return set(int(f) for f in self.feature if f >= 0)

    def predict(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        return K.predict_tree(self.feature, self.threshold, self.left, self.right, self.value, X)

    def apply(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        return K.apply_tree(self.feature, self.threshold, self.left, self.right, X)

    def scaled(self, factor: float) -> "Tree":
        return Tree(self.feature, self.threshold, self.left, self.right, self.value * factor,
                    self.n_samples, self.cover)

    def to_dict(self) -> dict:
        return {
            "nodes": self.node_count,
            "feature": self.feature.tolist(),
            "threshold": [float(v) for v in self.threshold],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": [float(v) for v in self.value],
            "n": self.n_samples.tolist(),
            "cover": [float(v) for v in self.cover],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(d["feature"], d["threshold"], d["left"], d["right"], d["value"], d["n"], d["cover"])

    def structure_equal(self, other: "Tree") -> bool:
        return (np.array_equal(self.feature, other.feature)
                and np.array_equal(self.threshold, other.threshold)
                and np.array_equal(self.left, other.left)
                and np.array_equal(self.right, other.right))


@dataclass(frozen=True)
class TreeParams:
    max_depth: int | None = None
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    split_mode: str = "exact"
    feature_subsample: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.min_samples_split < 2:
            raise ConfigError("min_samples_split must be >= 2")
        if self.min_samples_leaf < 1:
            raise ConfigError("min_samples_leaf must be >= 1")
        if self.split_mode not in SPLIT_MODES:
            raise ConfigError(f"split_mode must be one of {SPLIT_MODES}")
        if not 0.0 < self.feature_subsample <= 1.0:
            raise ConfigError("feature_subsample must lie in (0, 1]")
        if self.max_depth is not None and self.max_depth < 0:
            raise ConfigError("max_depth must be >= 0 or None")

    @classmethod
    def extra_trees(cls, **kw) -> "TreeParams":
        return cls(split_mode="random_threshold", feature_subsample=1.0, **kw)


def _check_xy(X, y):
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ShapeError(f"X {X.shape} and y {y.shape} are not aligned")
    if X.shape[0] == 0:
        raise EmptyDataError("cannot fit on zero rows")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("training data contains NaN or infinity")
    return X, y


def _check_x(X, d):
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != d:
        raise ShapeError(f"expected {d} features, got shape {X.shape}")
    return X


def fit_tree(X, y, params: TreeParams = TreeParams(), rng: Stream | None = None,
             rows=None) -> Tree:
    """Grow one regression tree; ``rows`` restricts (or resamples) training rows."""
    X, y = _check_xy(X, y)
    rng = rng if rng is not None else Stream(params.seed)
    rows = np.arange(len(y), dtype=np.int64) if rows is None else np.asarray(rows, dtype=np.int64)
    if rows.size == 0:
        raise EmptyDataError("cannot fit on zero rows")
    d = X.shape[1]
    n_sub = max(1, math.floor(params.feature_subsample * d + 1e-9))
    state = np.array([rng.state], dtype=np.uint64)
    max_depth = -1 if params.max_depth is None else int(params.max_depth)
    arrays = K.cart_grow(X, y, rows, max_depth, int(params.min_samples_split),
                         int(params.min_samples_leaf), params.split_mode == "random_threshold",
                         n_sub, state)
    rng.state = int(state[0])
    return Tree(*arrays)


def predict_tree(tree: Tree, x) -> float | np.ndarray:
    """Leaf value reached by ``x`` (a vector) or by each row of a matrix."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    d = int(tree.feature.max()) + 1 if (tree.feature >= 0).any() else None
    if single:
        if d is not None and x.shape[0] < d:
            raise ShapeError(f"x has {x.shape[0]} features, tree uses feature {d - 1}")
        return float(tree.predict(x[None, :])[0])
    if d is not None and x.shape[1] < d:
        raise ShapeError(f"X has {x.shape[1]} features, tree uses feature {d - 1}")
    return tree.predict(x)


@dataclass(frozen=True)
class ForestModel:
    trees: tuple
    bootstrap: bool
    params: TreeParams
    n_features: int

    def __post_init__(self):
        object.__setattr__(self, "trees", tuple(self.trees))
        if len(self.trees) < 1:
            raise ConfigError("a forest needs at least one tree")

    def predict(self, X) -> np.ndarray:
        X = _check_x(X, self.n_features)
        total = np.zeros(X.shape[0])
        for t in self.trees:
            total += t.predict(X)
        return total / len(self.trees)

    def to_dict(self) -> dict:
        return {"type": "forest", "bootstrap": self.bootstrap, "n_features": self.n_features,
                "params": asdict(self.params), "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d: dict) -> "ForestModel":
        return cls(tuple(Tree.from_dict(t) for t in d["trees"]), bool(d["bootstrap"]),
                   TreeParams(**d["params"]), int(d["n_features"]))


def _fit_member(X, y, params, bootstrap, seed, index):
    rng = Stream(derive_seed(seed, index))
    rows = rng.randbelow(len(y), len(y)) if bootstrap else None
    return fit_tree(X, y, params, rng, rows=rows)


def fit_forest(X, y, params: TreeParams = TreeParams(), n_estimators: int = 100,
               bootstrap: bool = True, rng: Stream | int | None = None) -> ForestModel:
    """Bag ``n_estimators`` trees, each on its own substream ``derive(seed, index)``.

    Extra-Trees: ``TreeParams.extra_trees()`` with ``bootstrap=False``.
    """
    X, y = _check_xy(X, y)
    if n_estimators < 1:
        raise ConfigError("n_estimators must be >= 1")
    if rng is None:
        seed = params.seed
    elif isinstance(rng, Stream):
        seed = rng.state
    else:
        seed = int(rng)
    workers = min(thread_count(), n_estimators)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            trees = list(pool.map(lambda i: _fit_member(X, y, params, bootstrap, seed, i),
                                  range(n_estimators)))
    else:
        trees = [_fit_member(X, y, params, bootstrap, seed, i) for i in range(n_estimators)]
    return ForestModel(tuple(trees), bootstrap, params, X.shape[1])


def predict_forest(model: ForestModel, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return float(model.predict(x)[0])
    return model.predict(x)
