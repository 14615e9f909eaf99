"""Two-stage hybrid regressors.

``et_xgb`` and ``rf_lgbm`` stack residually: a forest is fit on ``(X, y)`` and
a booster is fit on the raw features starting from the forest's in-sample
predictions, so ``yhat = forest(x) + booster(x)``.  In-sample residuals are
optimistic on the training rows (the forest nearly interpolates them), which
leaves the booster little to correct; this is the accepted cost of the simple
rule.  ``transformer_xgb`` stacks representations: the booster is fit on the
encoder's pooled vectors and ``yhat = booster(encode(x))``.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, replace

import numpy as np

from .attention import AttentionConfig, TransformerModel, encode, fit_transformer
from .boosting import GBTModel, GBTParams, fit_gbt
from .dataset import Dataset, SplitIndices
from .errors import ConfigError, InsufficientDataError
from .evaluation import MetricsReport, evaluate, within_band
from .presets import DEFAULT_PRESET, PRESETS
from .rng import derive_seed
from .trees import ForestModel, TreeParams, _check_x, fit_forest

KINDS = ("et_xgb", "rf_lgbm", "transformer_xgb")
RESIDUAL_KINDS = ("et_xgb", "rf_lgbm")
STAGE2_MODE = {"et_xgb": "exact", "rf_lgbm": "histogram", "transformer_xgb": "exact"}
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ForestSpec:
    params: TreeParams = TreeParams()
    n_estimators: int = 100
    bootstrap: bool = True

    def to_dict(self) -> dict:
        return {"n_estimators": self.n_estimators, "bootstrap": self.bootstrap, **asdict(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "ForestSpec":
        d = dict(d)
        n = int(d.pop("n_estimators", 100))
        boot = bool(d.pop("bootstrap", True))
        return cls(TreeParams(**d), n, boot)


@dataclass(frozen=True)
class HybridSpec:
    """Kind plus both stage configurations.

    Stage seeds are always derived from ``seed`` (stage 1 from ``(seed, 1)``,
    stage 2 from ``(seed, 2)``) so a single number controls the whole fit.
    """

    kind: str
    stage1: ForestSpec | AttentionConfig
    stage2: GBTParams
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown hybrid kind {self.kind!r}; expected one of {KINDS}")
        want = AttentionConfig if self.kind == "transformer_xgb" else ForestSpec
        if not isinstance(self.stage1, want):
            raise ConfigError(f"{self.kind} needs a {want.__name__} for stage 1")
        if self.stage2.mode != STAGE2_MODE[self.kind]:
            raise ConfigError(f"{self.kind} stage 2 must run in {STAGE2_MODE[self.kind]} mode, "
                              f"got {self.stage2.mode}")
        s1 = derive_seed(self.seed, 1)
        if isinstance(self.stage1, ForestSpec):
            stage1 = replace(self.stage1, params=replace(self.stage1.params, seed=s1))
        else:
            stage1 = replace(self.stage1, seed=s1)
        object.__setattr__(self, "stage1", stage1)
        object.__setattr__(self, "stage2", replace(self.stage2, seed=derive_seed(self.seed, 2)))

    def with_seed(self, seed: int) -> "HybridSpec":
        return replace(self, seed=int(seed))

    def to_dict(self) -> dict:
        s1 = self.stage1.to_dict() if isinstance(self.stage1, ForestSpec) else asdict(self.stage1)
        return {"kind": self.kind, "seed": self.seed, "stage1": s1, "stage2": self.stage2.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "HybridSpec":
        kind = d["kind"]
        if kind not in KINDS:
            raise ConfigError(f"unknown hybrid kind {kind!r}; expected one of {KINDS}")
        try:
            if kind == "transformer_xgb":
                s1 = AttentionConfig(**d["stage1"])
            else:
                s1 = ForestSpec.from_dict(d["stage1"])
            s2 = GBTParams.from_dict(d["stage2"])
        except TypeError as exc:
            raise ConfigError(f"bad stage parameters: {exc}") from None
        return cls(kind, s1, s2, int(d.get("seed", 0)))


def preset_spec(name: str, seed: int | None = None) -> HybridSpec:
    """Spec for a named preset (``table4``, ``table6`` or ``table8``)."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
    spec = HybridSpec.from_dict(copy.deepcopy(PRESETS[name]))
    return spec if seed is None else spec.with_seed(seed)


def default_spec(kind: str, seed: int | None = None) -> HybridSpec:
    if kind not in DEFAULT_PRESET:
        raise ConfigError(f"unknown hybrid kind {kind!r}; expected one of {KINDS}")
    return preset_spec(DEFAULT_PRESET[kind], seed)


@dataclass(frozen=True)
class HybridModel:
    kind: str
    stage1: ForestModel | TransformerModel
    stage2: GBTModel
    feature_space: str
    feature_names: tuple
    target_name: str
    spec: HybridSpec

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def stage1_predict(self, X) -> np.ndarray:
        return self.stage1.predict(X)

    def transform(self, X) -> np.ndarray:
        """Stage-2 inputs for raw rows ``X``."""
        X = _check_x(X, self.n_features)
        return encode(self.stage1, X) if self.feature_space == "encoded" else X

    def predict(self, X) -> np.ndarray:
        X = _check_x(X, self.n_features)
        if self.feature_space == "encoded":
            return self.stage2.predict(encode(self.stage1, X))
        return self.stage1.predict(X) + self.stage2.predict(X)

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "kind": self.kind, "feature_space": self.feature_space,
                "feature_names": list(self.feature_names), "target": self.target_name,
                "spec": self.spec.to_dict(), "stage1": self.stage1.to_dict(),
                "stage2": self.stage2.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "HybridModel":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ConfigError(f"unsupported model schema version {d.get('schema_version')!r}")
        kind = d["kind"]
        s1 = TransformerModel.from_dict(d["stage1"]) if kind == "transformer_xgb" \
            else ForestModel.from_dict(d["stage1"])
        return cls(kind, s1, GBTModel.from_dict(d["stage2"]), d["feature_space"],
                   tuple(d["feature_names"]), d["target"], HybridSpec.from_dict(d["spec"]))


def fit_hybrid(train: Dataset, spec: HybridSpec) -> HybridModel:
    if train.n == 0:
        raise InsufficientDataError("cannot fit a hybrid on zero rows")
    X, y = train.X, train.y
    if spec.kind == "transformer_xgb":
        enc = fit_transformer(X, y, spec.stage1)
        booster = fit_gbt(encode(enc, X), y, params=spec.stage2)
        return HybridModel(spec.kind, enc, booster, "encoded", tuple(train.feature_names),
                           train.target_name, spec)
    f = spec.stage1
    forest = fit_forest(X, y, f.params, f.n_estimators, f.bootstrap)
    booster = fit_gbt(X, y, init_margin=forest.predict(X), params=spec.stage2)
    return HybridModel(spec.kind, forest, booster, "raw", tuple(train.feature_names),
                       train.target_name, spec)


def predict_hybrid(model: HybridModel, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return float(model.predict(x[None, :])[0])
    return model.predict(x)


@dataclass(frozen=True)
class PredictionPoint:
    split: str
    index: int
    actual: float
    predicted: float
    within_band: bool


@dataclass(frozen=True)
class HybridEvaluation:
    train: MetricsReport
    test: MetricsReport
    points: tuple

    def __iter__(self):
        yield self.train
        yield self.test


def evaluate_hybrid(model: HybridModel, ds: Dataset, split: SplitIndices,
                    band: float = 0.10) -> HybridEvaluation:
    """Metrics on both partitions plus per-point (actual, predicted, in-band) records."""
    reports = {}
    points = []
    for name, rows in (("train", split.train), ("test", split.test)):
        rows = np.asarray(rows, dtype=np.int64)
        if rows.size == 0:
            raise InsufficientDataError(f"{name} partition is empty")
        if rows.max() >= ds.n:
            raise InsufficientDataError(f"{name} partition refers to row {rows.max()} of {ds.n}")
        y = ds.y[rows]
        yhat = model.predict(ds.X[rows])
        reports[name] = evaluate(y, yhat, strict=False)
        flags = within_band(y, yhat, band)
        points += [PredictionPoint(name, int(i), float(a), float(p), bool(b))
                   for i, a, p, b in zip(rows, y, yhat, flags)]
    return HybridEvaluation(reports["train"], reports["test"], tuple(points))
