"""k-fold cross-validation and seeded random search over hybrid specs."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .errors import ConfigError, FoldError, SearchFailedError, StrengthLabError
from .evaluation import evaluate
from .hybrid import HybridSpec, default_spec, fit_hybrid
from .rng import Stream, derive_seed


def kfold(n: int, k: int, seed: int = 0) -> list:
    """Shuffle ``range(n)`` with ``seed`` and cut it into ``k`` contiguous folds.

    The first ``n % k`` folds hold one extra index.  Each fold is sorted.
    """
    if k < 2:
        raise ConfigError("k must be >= 2")
    if k > n:
        raise ConfigError(f"cannot make {k} folds from {n} rows")
    perm = Stream(seed).permutation(n)
    base, extra = divmod(n, k)
    folds, start = [], 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        folds.append(np.sort(perm[start:start + size]))
        start += size
    return folds


@dataclass(frozen=True)
class CVResult:
    params: dict
    folds: tuple  # MetricsReport per fold
    objectives: tuple  # fold RMSE
    mean: float
    std: float


def _aggregate(objs) -> tuple:
    mean = math.fsum(objs) / len(objs)
    std = math.sqrt(math.fsum((o - mean) ** 2 for o in objs) / len(objs))
    return mean, std


def cross_validate(ds: Dataset, spec: HybridSpec, k: int = 5, seed: int = 0) -> CVResult:
    """Fit on each fold's complement, score RMSE on the fold; objective is the mean RMSE."""
    folds = kfold(ds.n, k, seed)
    reports = []
    for i, test in enumerate(folds):
        train = np.setdiff1d(np.arange(ds.n), test)
        try:
            model = fit_hybrid(ds.subset(train), spec)
            reports.append(evaluate(ds.y[test], model.predict(ds.X[test]), strict=False))
        except (StrengthLabError, ValueError, ArithmeticError) as exc:
            raise FoldError(i, exc) from exc
    objs = tuple(r.rmse for r in reports)
    mean, std = _aggregate(objs)
    return CVResult(spec.to_dict(), tuple(reports), objs, mean, std)


# ---------------------------------------------------------------------------
# search spaces


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ConfigError(f"uniform needs lo < hi, got {self.lo}, {self.hi}")

    def sample(self, rs: Stream):
        return self.lo + rs.uniform() * (self.hi - self.lo)


@dataclass(frozen=True)
class LogUniform:
    lo: float
    hi: float

    def __post_init__(self):
        if not 0 < self.lo < self.hi:
            raise ConfigError(f"log_uniform needs 0 < lo < hi, got {self.lo}, {self.hi}")

    def sample(self, rs: Stream):
        a, b = math.log(self.lo), math.log(self.hi)
        return min(self.hi, max(self.lo, math.exp(a + rs.uniform() * (b - a))))


@dataclass(frozen=True)
class IntUniform:
    lo: int
    hi: int  # inclusive

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ConfigError(f"int_uniform needs lo < hi, got {self.lo}, {self.hi}")

    def sample(self, rs: Stream):
        return int(self.lo + rs.randbelow(self.hi - self.lo + 1))


@dataclass(frozen=True)
class Choice:
    options: tuple

    def __post_init__(self):
        object.__setattr__(self, "options", tuple(self.options))
        if not self.options:
            raise ConfigError("choice needs at least one option")

    def sample(self, rs: Stream):
        return self.options[rs.randbelow(len(self.options))]


@dataclass(frozen=True)
class SearchSpace:
    """Distributions keyed by ``stage1.<field>`` / ``stage2.<field>``."""

    dists: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in self.dists:
            stage, _, key = name.partition(".")
            if stage not in ("stage1", "stage2") or not key:
                raise ConfigError(f"search key {name!r} must look like 'stage1.x' or 'stage2.x'")

    def sample(self, rs: Stream) -> dict:
        return {name: self.dists[name].sample(rs) for name in sorted(self.dists)}


def apply_params(spec: HybridSpec, params: dict) -> HybridSpec:
    d = spec.to_dict()
    for name, value in params.items():
        stage, _, key = name.partition(".")
        d[stage][key] = value
    return HybridSpec.from_dict(d)


def default_space(kind: str) -> SearchSpace:
    """Ranges around the shipped preset: x/10 .. x*10 for reals, +-2 for integers, clipped to validity."""
    if kind == "et_xgb":
        return SearchSpace({
            "stage1.n_estimators": IntUniform(498, 502),
            "stage1.min_samples_split": IntUniform(2, 4),
            "stage1.min_samples_leaf": IntUniform(1, 3),
            "stage2.learning_rate": LogUniform(0.0005, 0.05),
            "stage2.max_depth": IntUniform(3, 7),
            "stage2.min_child_weight": LogUniform(1.0, 100.0),
            "stage2.reg_alpha": LogUniform(0.5, 50.0),
            "stage2.reg_lambda": LogUniform(1.0, 100.0),
            "stage2.gamma": LogUniform(0.1, 10.0),
            "stage2.subsample": LogUniform(0.04, 1.0),
            "stage2.colsample_bytree": LogUniform(0.04, 1.0),
        })
    if kind == "rf_lgbm":
        return SearchSpace({
            "stage1.n_estimators": IntUniform(48, 52),
            "stage2.n_estimators": IntUniform(48, 52),
            "stage2.learning_rate": LogUniform(0.0005, 0.05),
            "stage2.max_depth": IntUniform(1, 5),
            "stage2.min_child_weight": LogUniform(1.0, 100.0),
            "stage2.reg_alpha": LogUniform(0.5, 50.0),
            "stage2.reg_lambda": LogUniform(0.5, 50.0),
        })
    if kind == "transformer_xgb":
        return SearchSpace({
            "stage1.n_layers": IntUniform(1, 4),
            "stage1.dropout": LogUniform(0.01, 0.5),
            "stage1.learning_rate": LogUniform(0.0001, 0.01),
            "stage2.learning_rate": LogUniform(0.001, 0.1),
            "stage2.max_depth": IntUniform(8, 12),
            "stage2.reg_alpha": LogUniform(0.1, 10.0),
            "stage2.reg_lambda": LogUniform(0.1, 10.0),
            "stage2.subsample": LogUniform(0.08, 1.0),
            "stage2.colsample_bytree": LogUniform(0.08, 1.0),
        })
    raise ConfigError(f"unknown hybrid kind {kind!r}")


@dataclass(frozen=True)
class Trial:
    draw_index: int
    params: dict
    cv: CVResult | None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.cv is not None

    def to_record(self) -> dict:
        rec = {"draw_index": self.draw_index, "params": self.params}
        if self.cv is not None:
            rec.update(fold_objectives=list(self.cv.objectives), mean=self.cv.mean, std=self.cv.std)
        else:
            rec.update(fold_objectives=None, mean=None, std=None, error=self.error)
        return rec


@dataclass(frozen=True)
class SearchResult:
    best_spec: HybridSpec
    best_index: int
    trials: tuple

    @property
    def best(self) -> Trial:
        return self.trials[self.best_index]


def sample_trials(space: SearchSpace, budget: int, seed: int) -> list:
    """Parameter draws; draw ``i`` depends only on ``(space, seed, i)``."""
    return [space.sample(Stream(derive_seed(seed, i))) for i in range(budget)]


def random_search(ds: Dataset, kind: str, space: SearchSpace | None = None, budget: int = 10,
                  k: int = 5, seed: int = 0, base_spec: HybridSpec | None = None,
                  on_trial=None) -> SearchResult:
    """Evaluate ``budget`` random draws by k-fold CV; lowest mean RMSE wins, earlier draw on ties.

    Trials that raise, or whose objective is not finite, are logged as failed.
    """
    if budget < 1:
        raise ConfigError("budget must be >= 1")
    space = space if space is not None else default_space(kind)
    base = base_spec if base_spec is not None else default_spec(kind, seed)
    if base.kind != kind:
        raise ConfigError(f"base spec is {base.kind}, search is over {kind}")
    trials = []
    best = None
    for i, params in enumerate(sample_trials(space, budget, seed)):
        try:
            spec = apply_params(base, params)
            cv = cross_validate(ds, spec, k, seed)
            if not math.isfinite(cv.mean):
                trial = Trial(i, params, None, f"non-finite objective {cv.mean}")
            else:
                trial = Trial(i, params, cv)
                if best is None or cv.mean < trials[best].cv.mean:
                    best = i
        except (StrengthLabError, ValueError, ArithmeticError) as exc:
            trial = Trial(i, params, None, f"{type(exc).__name__}: {exc}")
        trials.append(trial)
        if on_trial is not None:
            on_trial(trial)
    if best is None:
        raise SearchFailedError(f"all {budget} trials failed", [t.to_record() for t in trials])
    return SearchResult(apply_params(base, trials[best].params), best, tuple(trials))


def write_trial_log(fh, trials) -> None:
    for t in trials:
        fh.write(json.dumps(t.to_record(), sort_keys=True) + "\n")
