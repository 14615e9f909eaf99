"""Second-order regularised gradient boosting with exact and histogram growers.

Squared loss only: with margins ``F`` the per-row gradient is ``F - y`` and
the hessian is 1, so at ``reg_lambda = reg_alpha = 0`` a leaf weight is the
mean residual of the rows it holds.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels as K
from .errors import ConfigError, DegenerateLeafError, ShapeError
from .rng import Stream, derive_seed
from .trees import Tree, _check_x, _check_xy

MODES = ("exact", "histogram")


# ---------------------------------------------------------------------------
# closed forms


def _soft(g: float, alpha: float) -> float:
    return math.copysign(max(abs(g) - alpha, 0.0), g)


def leaf_weight(G: float, H: float, alpha: float = 0.0, lam: float = 0.0) -> float:
    """Minimiser of ``G w + (H + lam) w^2 / 2 + alpha |w|``."""
    if H + lam <= 0:
        raise DegenerateLeafError(f"H + lambda = {H + lam} must be positive")
    return -_soft(G, alpha) / (H + lam)


def _score(G, H, alpha, lam):
    t = _soft(G, alpha)
    return t * t / (H + lam)


def split_gain(GL: float, HL: float, GR: float, HR: float,
               alpha: float = 0.0, lam: float = 0.0, gamma: float = 0.0) -> float:
    if HL + lam <= 0 or HR + lam <= 0 or HL + HR + lam <= 0:
        raise DegenerateLeafError("child or parent hessian sum plus lambda is not positive")
    return 0.5 * (_score(GL, HL, alpha, lam) + _score(GR, HR, alpha, lam)
                  - _score(GL + GR, HL + HR, alpha, lam)) - gamma


# ---------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class HistogramParams:
    n_bins: int = 255
    goss_a: float = 0.2
    goss_b: float = 0.1
    efb_conflict: float = 0.0

    def __post_init__(self):
        if self.n_bins < 2:
            raise ConfigError("n_bins must be >= 2")
        if not 0.0 < self.goss_a <= 1.0 or self.goss_b < 0.0 or self.goss_a + self.goss_b > 1.0 + 1e-12:
            raise ConfigError("GOSS needs 0 < a <= 1, b >= 0 and a + b <= 1")
        if not 0.0 <= self.efb_conflict <= 1.0:
            raise ConfigError("efb_conflict must lie in [0, 1]")

    @property
    def goss_active(self) -> bool:
        return self.goss_a < 1.0


@dataclass(frozen=True)
class GBTParams:
    n_estimators: int = 100
    learning_rate: float = 0.1
    max_depth: int = 6
    min_child_weight: float = 1.0
    reg_alpha: float = 0.0
    reg_lambda: float = 1.0
    gamma: float = 0.0
    subsample: float = 1.0
    colsample_bytree: float = 1.0
    loss: str = "squared_error"
    seed: int = 0
    mode: str = "exact"
    histogram: HistogramParams = field(default_factory=HistogramParams)

    def __post_init__(self):
        if isinstance(self.histogram, dict):
            object.__setattr__(self, "histogram", HistogramParams(**self.histogram))
        if self.n_estimators < 0:
            raise ConfigError("n_estimators must be >= 0")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.max_depth is not None and self.max_depth < 0:
            raise ConfigError("max_depth must be >= 0")
        if self.min_child_weight < 0 or self.reg_alpha < 0 or self.reg_lambda < 0 or self.gamma < 0:
            raise ConfigError("min_child_weight, reg_alpha, reg_lambda and gamma must be >= 0")
        if not 0.0 < self.subsample <= 1.0 or not 0.0 < self.colsample_bytree <= 1.0:
            raise ConfigError("subsample and colsample_bytree must lie in (0, 1]")
        if self.loss != "squared_error":
            raise ConfigError(f"unsupported loss {self.loss!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GBTParams":
        return cls(**d)


# ---------------------------------------------------------------------------
# GOSS


def goss_select(gradients, a: float, b: float, rng: Stream):
    """Gradient-based one-side sampling.

    Keeps the ``ceil(a n)`` rows of largest ``|g|`` (ties to the lower index)
    with weight 1, plus ``ceil(b n)`` rows drawn uniformly without replacement
    from the rest with weight ``(1 - a) / b``.  Returns ascending indices.
    """
    g = np.asarray(gradients, dtype=np.float64)
    n = g.shape[0]
    if not (a > 0 and b >= 0 and a + b <= 1.0 + 1e-12):
        raise ConfigError("GOSS needs 0 < a, 0 <= b, a + b <= 1")
    if a * n < 1 - 1e-9:
        raise ConfigError(f"a * n = {a * n} selects no rows")
    n_top = min(n, math.ceil(a * n - 1e-9))
    n_rand = min(n - n_top, math.ceil(b * n - 1e-9)) if b > 0 else 0
    order = np.argsort(-np.abs(g), kind="stable")
    top = order[:n_top]
    rest = order[n_top:]
    weights = {int(i): 1.0 for i in top}
    if n_rand > 0:
        picked = rest[rng.choice(len(rest), n_rand)]
        w = (1.0 - a) / b
        for i in picked:
            weights[int(i)] = w
    idx = np.array(sorted(weights), dtype=np.int64)
    return idx, np.array([weights[int(i)] for i in idx])


# ---------------------------------------------------------------------------
# binning, histograms and bundling


@dataclass(frozen=True)
class BinMapper:
    """Per-feature bin upper bounds; ``bin(x) = #{ub < x}`` so ``x <= ub[k]`` lands in bin <= k.

    Features with at most ``n_bins`` distinct values get one bin per value
    (bounds at midpoints); others are cut at evenly spaced sample quantiles.
    """

    upper_bounds: tuple
    bin_min: np.ndarray  # (d, max_bins); +inf where a bin is empty
    bin_max: np.ndarray

    @classmethod
    def fit(cls, X, n_bins: int = 255) -> "BinMapper":
        X = np.asarray(X, dtype=np.float64)
        ubs = []
        for j in range(X.shape[1]):
            col = X[:, j]
            u = np.unique(col)
            if len(u) <= n_bins:
                mid = 0.5 * (u[:-1] + u[1:])
                ub = np.where(mid >= u[1:], u[:-1], mid)
            else:
                qs = np.quantile(col, np.arange(1, n_bins) / n_bins, method="linear")
                ub = np.unique(qs)
                ub = ub[ub < u[-1]]
            ubs.append(np.asarray(ub, dtype=np.float64))
        max_bins = max(len(ub) + 1 for ub in ubs)
        bmin = np.full((X.shape[1], max_bins), np.inf)
        bmax = np.full((X.shape[1], max_bins), -np.inf)
        for j, ub in enumerate(ubs):
            b = np.searchsorted(ub, X[:, j], side="left")
            np.minimum.at(bmin[j], b, X[:, j])
            np.maximum.at(bmax[j], b, X[:, j])
        return cls(tuple(ubs), bmin, bmax)

    @property
    def n_bins(self) -> np.ndarray:
        return np.array([len(ub) + 1 for ub in self.upper_bounds], dtype=np.int64)

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        out = np.empty(X.shape, dtype=np.int32)
        for j, ub in enumerate(self.upper_bounds):
            out[:, j] = np.searchsorted(ub, X[:, j], side="left")
        return out

    def zero_bins(self) -> np.ndarray:
        return np.array([np.searchsorted(ub, 0.0, side="left") for ub in self.upper_bounds],
                        dtype=np.int64)


def build_histograms(binned, g, h, n_bins: int, rows=None) -> np.ndarray:
    """Per-feature (sum G, sum H, count) for each bin: shape ``(d, n_bins, 3)``."""
    binned = np.asarray(binned)
    if n_bins < 2:
        raise ConfigError("n_bins must be >= 2")
    g = np.asarray(g, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if rows is not None:
        binned, g, h = binned[rows], g[rows], h[rows]
    d = binned.shape[1]
    out = np.zeros((d, n_bins, 3))
    for j in range(d):
        b = binned[:, j]
        out[j, :, 0] = np.bincount(b, weights=g, minlength=n_bins)[:n_bins]
        out[j, :, 1] = np.bincount(b, weights=h, minlength=n_bins)[:n_bins]
        out[j, :, 2] = np.bincount(b, minlength=n_bins)[:n_bins]
    return out


@dataclass(frozen=True)
class FeatureBundles:
    """Groups of (nearly) mutually exclusive features sharing one histogram column.

    In a multi-member bundle, code 0 means "every member is zero" and member
    ``f`` owns codes ``offset[f] .. offset[f] + n_bins[f] - 1``.  A row where
    several members are nonzero is encoded by the first of them.
    """

    groups: tuple
    offsets: np.ndarray
    n_bins: np.ndarray
    zero_bins: np.ndarray

    @property
    def n_bundles(self) -> int:
        return len(self.groups)

    def bundle_of(self) -> np.ndarray:
        out = np.empty(len(self.offsets), dtype=np.int64)
        for b, grp in enumerate(self.groups):
            out[list(grp)] = b
        return out

    def multi(self) -> np.ndarray:
        out = np.zeros(len(self.offsets), dtype=np.bool_)
        for grp in self.groups:
            if len(grp) > 1:
                out[list(grp)] = True
        return out

    def bundle_sizes(self) -> np.ndarray:
        sizes = []
        for grp in self.groups:
            if len(grp) == 1:
                sizes.append(int(self.n_bins[grp[0]]))
            else:
                sizes.append(1 + int(sum(self.n_bins[f] for f in grp)))
        return np.array(sizes, dtype=np.int64)

    def encode(self, binned, X) -> np.ndarray:
        binned = np.asarray(binned)
        X = np.asarray(X)
        codes = np.zeros((binned.shape[0], self.n_bundles), dtype=np.int64)
        for b, grp in enumerate(self.groups):
            if len(grp) == 1:
                codes[:, b] = binned[:, grp[0]]
                continue
            unset = np.ones(binned.shape[0], dtype=bool)
            for f in grp:
                hit = unset & (X[:, f] != 0)
                codes[hit, b] = self.offsets[f] + binned[hit, f]
                unset &= ~hit
        return codes

    def decode(self, codes) -> np.ndarray:
        codes = np.asarray(codes)
        d = len(self.offsets)
        out = np.empty((codes.shape[0], d), dtype=np.int64)
        for b, grp in enumerate(self.groups):
            c = codes[:, b]
            if len(grp) == 1:
                out[:, grp[0]] = c
                continue
            for f in grp:
                lo = self.offsets[f]
                mine = (c >= lo) & (c < lo + self.n_bins[f])
                out[:, f] = np.where(mine, c - lo, self.zero_bins[f])
        return out


def efb_bundle(X, conflict: float = 0.0, mapper: BinMapper | None = None,
               n_bins: int = 255) -> FeatureBundles:
    """Greedy exclusive feature bundling.

    Features are visited by descending nonzero count (ties by index) and
    placed in the first bundle whose accumulated nonzero-row overlap stays
    within ``conflict * n`` rows.
    """
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    mapper = mapper or BinMapper.fit(X, n_bins)
    nz = X != 0
    limit = conflict * n + 1e-9
    order = sorted(range(d), key=lambda f: (-int(nz[:, f].sum()), f))
    members, masks, conflicts = [], [], []
    for f in order:
        for b in range(len(members)):
            overlap = int((masks[b] & nz[:, f]).sum())
            if conflicts[b] + overlap <= limit:
                members[b].append(f)
                masks[b] |= nz[:, f]
                conflicts[b] += overlap
                break
        else:
            members.append([f])
            masks.append(nz[:, f].copy())
            conflicts.append(0)
    groups = tuple(sorted(tuple(sorted(m)) for m in members))
    nb = mapper.n_bins
    offsets = np.zeros(d, dtype=np.int64)
    for grp in groups:
        if len(grp) > 1:
            off = 1
            for f in grp:
                offsets[f] = off
                off += nb[f]
    return FeatureBundles(groups, offsets, nb, mapper.zero_bins())


# ---------------------------------------------------------------------------
# model


@dataclass(frozen=True)
class GBTModel:
    base_score: float
    trees: tuple
    params: GBTParams
    n_features: int

    def __post_init__(self):
        object.__setattr__(self, "trees", tuple(self.trees))

    @property
    def learning_rate(self) -> float:
        return self.params.learning_rate

    def raw_tree_sum(self, X) -> np.ndarray:
        X = _check_x(X, self.n_features)
        total = np.zeros(X.shape[0])
        for t in self.trees:
            total += t.predict(X)
        return total

    def predict(self, X) -> np.ndarray:
        return self.base_score + self.learning_rate * self.raw_tree_sum(X)

    def staged_predict(self, X):
        X = _check_x(X, self.n_features)
        total = np.zeros(X.shape[0])
        yield self.base_score + self.learning_rate * total
        for t in self.trees:
            total = total + t.predict(X)
            yield self.base_score + self.learning_rate * total

    def to_dict(self) -> dict:
        return {"type": "gbt", "base_score": float(self.base_score),
                "learning_rate": float(self.learning_rate), "n_features": self.n_features,
                "params": self.params.to_dict(), "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d: dict) -> "GBTModel":
        return cls(float(d["base_score"]), tuple(Tree.from_dict(t) for t in d["trees"]),
                   GBTParams.from_dict(d["params"]), int(d["n_features"]))


def predict_gbt(model: GBTModel, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return float(model.predict(x)[0])
    return model.predict(x)


class _HistogramContext:
    """Binning and bundling computed once per fit."""

    def __init__(self, X, hp: HistogramParams):
        self.mapper = BinMapper.fit(X, hp.n_bins)
        self.bins = np.ascontiguousarray(self.mapper.transform(X), dtype=np.int64)
        self.bundles = efb_bundle(X, hp.efb_conflict, self.mapper)
        self.codes = np.ascontiguousarray(self.bundles.encode(self.bins, X), dtype=np.int64)
        sizes = self.bundles.bundle_sizes()
        self.bundle_start = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        self.feat_bundle = self.bundles.bundle_of()
        self.feat_multi = self.bundles.multi()
        self.feat_offset = self.bundles.offsets
        self.feat_nbins = self.bundles.n_bins
        self.feat_zero = self.bundles.zero_bins
        self.bin_min = np.ascontiguousarray(self.mapper.bin_min)
        self.bin_max = np.ascontiguousarray(self.mapper.bin_max)


def _select_rows(n, g, params: GBTParams, rng: Stream):
    rows = np.arange(n, dtype=np.int64)
    weights = np.ones(n)
    if params.subsample < 1.0:
        k = max(1, math.floor(params.subsample * n + 1e-9))
        rows = np.sort(rng.choice(n, k))
        weights = np.ones(k)
    if params.mode == "histogram" and params.histogram.goss_active:
        hp = params.histogram
        idx, w = goss_select(g[rows], hp.goss_a, hp.goss_b, rng)
        rows, weights = rows[idx], w
    return rows, weights


def _grow(X, g, h, rows, feats, params: GBTParams, ctx):
    max_depth = -1 if params.max_depth is None else int(params.max_depth)
    common = (max_depth, float(params.min_child_weight), float(params.reg_alpha),
              float(params.reg_lambda), float(params.gamma))
    if ctx is None:
        out = K.gbt_grow_exact(X, g, h, rows, feats, *common)
    else:
        out = K.gbt_grow_hist(X, ctx.bins, ctx.codes, ctx.bundle_start, ctx.feat_bundle,
                              ctx.feat_offset, ctx.feat_nbins, ctx.feat_zero, ctx.feat_multi,
                              ctx.bin_min, ctx.bin_max, g, h, rows, feats, *common)
    *arrays, err = out
    if err == K.ERR_DEGENERATE:
        raise DegenerateLeafError("hessian sum plus lambda is not positive in a node")
    return Tree(*arrays)


def fit_gbt(X, y, init_margin=None, params: GBTParams = GBTParams(), rng: Stream | int | None = None,
            callback=None) -> GBTModel:
    """Boost ``params.n_estimators`` trees on squared loss.

    Without ``init_margin`` the base score is ``mean(y)``.  With it the base
    score is 0 and boosting starts from the supplied margins, so the fitted
    trees model ``y - init_margin`` (residual stacking).  Round ``k`` draws
    its column subset, then its row subset (subsample, then GOSS in
    histogram mode) from the substream ``derive(seed, k)``.
    """
    X, y = _check_xy(X, y)
    n, d = X.shape
    if init_margin is None:
        base = float(np.mean(y))
        margin = np.full(n, base)
    else:
        init_margin = np.asarray(init_margin, dtype=np.float64)
        if init_margin.shape != (n,):
            raise ShapeError(f"init_margin must have shape ({n},)")
        base = 0.0
        margin = init_margin.copy()
    if rng is None:
        seed = params.seed
    elif isinstance(rng, Stream):
        seed = rng.state
    else:
        seed = int(rng)
    ctx = _HistogramContext(X, params.histogram) if params.mode == "histogram" else None
    n_cols = max(1, math.floor(params.colsample_bytree * d + 1e-9))
    trees = []
    for k in range(params.n_estimators):
        rs = Stream(derive_seed(seed, k))
        feats = np.arange(d, dtype=np.int64) if n_cols == d else np.sort(rs.choice(d, n_cols))
        grad = margin - y
        rows, w = _select_rows(n, grad, params, rs)
        g = np.ascontiguousarray(grad[rows] * w)
        h = np.ascontiguousarray(w.astype(np.float64))
        tree = _grow(X, g, h, rows, feats, params, ctx)
        trees.append(tree)
        margin = margin + params.learning_rate * tree.predict(X)
        if callback is not None:
            callback(k, margin)
    return GBTModel(base, tuple(trees), params, d)
