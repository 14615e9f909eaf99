import json
from dataclasses import replace

import numpy as np
import pytest

from strengthlab.attention import AttentionConfig, encode
from strengthlab.boosting import GBTModel, GBTParams, HistogramParams
from strengthlab.dataset import Dataset, SplitIndices, reference_dataset, split
from strengthlab.errors import ConfigError, EmptyDataError, InsufficientDataError, ShapeError
from strengthlab.evaluation import CSV_COLUMNS
from strengthlab.hybrid import (
    ForestSpec,
    HybridModel,
    HybridSpec,
    default_spec,
    evaluate_hybrid,
    fit_hybrid,
    predict_hybrid,
    preset_spec,
)
from strengthlab.rng import derive_seed
from strengthlab.trees import ForestModel, Tree, TreeParams

SMALL_ATTN = AttentionConfig(n_layers=1, n_heads=2, d_model=8, dropout=0.0, max_epochs=15)


def small_spec(kind, seed=0, **stage2):
    if kind == "transformer_xgb":
        s2 = GBTParams(n_estimators=20, max_depth=3, mode="exact", **stage2)
        return HybridSpec(kind, SMALL_ATTN, s2, seed)
    if kind == "et_xgb":
        s1 = ForestSpec(TreeParams.extra_trees(), 20, bootstrap=False)
        return HybridSpec(kind, s1, GBTParams(n_estimators=20, max_depth=3, **stage2), seed)
    s1 = ForestSpec(TreeParams(max_depth=6), 15, bootstrap=True)
    return HybridSpec(kind, s1, GBTParams(n_estimators=20, max_depth=3, mode="histogram", **stage2), seed)


@pytest.fixture(scope="module")
def small():
    return reference_dataset(150, seed=3)


@pytest.mark.parametrize("kind", ["et_xgb", "rf_lgbm", "transformer_xgb"])
def test_constant_target(kind, small):
    ds = Dataset(small.feature_names, small.X, np.full(small.n, 37.5), small.target_name)
    m = fit_hybrid(ds, small_spec(kind))
    assert np.allclose(m.predict(small.X), 37.5, rtol=0, atol=1e-9)


def test_zero_rounds_reduce_to_stage1(small):
    m = fit_hybrid(small, replace(small_spec("et_xgb"), stage2=GBTParams(n_estimators=0)))
    assert np.array_equal(m.predict(small.X), m.stage1_predict(small.X))
    t = fit_hybrid(small, replace(small_spec("transformer_xgb"), stage2=GBTParams(n_estimators=0)))
    assert np.all(t.predict(small.X) == t.stage2.base_score)


def test_additive_rule_example():
    forest = ForestModel((Tree.leaf(50.0),), False, TreeParams(), 1)
    booster = GBTModel(0.0, (Tree.leaf(5.0),), GBTParams(n_estimators=1, learning_rate=0.5), 1)
    m = HybridModel("et_xgb", forest, booster, "raw", ("a",), "y", small_spec("et_xgb"))
    assert predict_hybrid(m, np.array([1.0])) == 52.5
    with pytest.raises(ShapeError):
        predict_hybrid(m, np.array([1.0, 2.0]))


@pytest.mark.parametrize("kind", ["et_xgb", "rf_lgbm"])
def test_residual_identity(kind, small):
    m = fit_hybrid(small, small_spec(kind))
    X = small.X
    # (a + b) - a recovers b up to one rounding of the sum
    tol = 4 * np.finfo(float).eps * np.abs(m.predict(X)).max()
    assert np.abs(m.predict(X) - m.stage1_predict(X) - m.stage2.predict(X)).max() <= tol
    assert m.stage2.base_score == 0.0


def test_encoded_rule(small):
    m = fit_hybrid(small, small_spec("transformer_xgb"))
    assert m.feature_space == "encoded"
    assert np.array_equal(m.predict(small.X), m.stage2.predict(encode(m.stage1, small.X)))


@pytest.mark.parametrize("kind", ["et_xgb", "rf_lgbm"])
def test_training_loss_dominance(kind, small):
    off = dict(reg_alpha=0.0, reg_lambda=0.0, gamma=0.0, subsample=1.0, colsample_bytree=1.0,
               min_child_weight=1.0)
    spec = small_spec(kind, **off)
    # shallow forests leave residuals for stage 2 to reduce
    shallow = replace(spec.stage1.params, max_depth=3)
    spec = replace(spec, stage1=replace(spec.stage1, params=shallow))
    if kind == "rf_lgbm":
        spec = replace(spec, stage2=replace(spec.stage2, histogram=HistogramParams(goss_a=1.0, goss_b=0.0)))
    m = fit_hybrid(small, spec)
    hybrid = np.mean((m.predict(small.X) - small.y) ** 2)
    stage1 = np.mean((m.stage1_predict(small.X) - small.y) ** 2)
    assert hybrid <= stage1
    assert hybrid < 0.5 * stage1


@pytest.mark.parametrize("kind", ["et_xgb", "rf_lgbm", "transformer_xgb"])
def test_deterministic_and_round_trip(kind, small):
    spec = small_spec(kind, seed=9)
    a = fit_hybrid(small, spec)
    text = json.dumps(a.to_dict())
    assert text == json.dumps(fit_hybrid(small, spec).to_dict())
    back = HybridModel.from_dict(json.loads(text))
    assert np.array_equal(back.predict(small.X), a.predict(small.X))
    assert json.dumps(back.to_dict()) == text


def test_seed_controls_stages():
    spec = small_spec("et_xgb", seed=5)
    assert spec.stage1.params.seed == derive_seed(5, 1)
    assert spec.stage2.seed == derive_seed(5, 2)
    assert spec.with_seed(6).stage2.seed == derive_seed(6, 2)


def test_presets_match_tables():
    et = preset_spec("table4")
    assert et.kind == "et_xgb" and et.stage1.n_estimators == 500
    assert et.stage1.params.split_mode == "random_threshold" and not et.stage1.bootstrap
    s2 = et.stage2
    assert (s2.n_estimators, s2.learning_rate, s2.max_depth, s2.min_child_weight, s2.gamma) == (500, 0.005, 5, 10, 1)
    assert (s2.subsample, s2.colsample_bytree, s2.reg_alpha, s2.reg_lambda) == (0.4, 0.4, 5, 10)
    rf = preset_spec("table6")
    assert rf.stage1.n_estimators == 50 and rf.stage1.bootstrap
    assert (rf.stage2.n_estimators, rf.stage2.learning_rate, rf.stage2.max_depth) == (50, 0.005, 3)
    assert (rf.stage2.reg_alpha, rf.stage2.reg_lambda, rf.stage2.mode) == (5, 5, "histogram")
    tx = preset_spec("table8")
    assert (tx.stage1.n_layers, tx.stage1.n_heads, tx.stage1.d_model, tx.stage1.dropout) == (2, 4, 128, 0.1)
    assert (tx.stage1.batch_size, tx.stage1.max_epochs, tx.stage1.early_stop_patience) == (32, 100, 10)
    t2 = tx.stage2
    assert (t2.n_estimators, t2.learning_rate, t2.max_depth, t2.subsample, t2.colsample_bytree) == (500, 0.01, 10, 0.8, 0.8)
    assert (t2.reg_alpha, t2.reg_lambda) == (1, 1)
    for kind, name in (("et_xgb", "table4"), ("rf_lgbm", "table6"), ("transformer_xgb", "table8")):
        assert default_spec(kind) == preset_spec(name)
    with pytest.raises(ConfigError):
        preset_spec("table5")


def test_spec_validation_and_round_trip():
    with pytest.raises(ConfigError):
        HybridSpec("et_xgb", ForestSpec(), GBTParams(mode="histogram"))
    with pytest.raises(ConfigError):
        HybridSpec("rf_lgbm", ForestSpec(), GBTParams(mode="exact"))
    with pytest.raises(ConfigError):
        HybridSpec("transformer_xgb", ForestSpec(), GBTParams())
    with pytest.raises(ConfigError):
        HybridSpec("svm", ForestSpec(), GBTParams())
    for name in ("table4", "table6", "table8"):
        spec = preset_spec(name, seed=3)
        assert HybridSpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec


def _perfect_model(ds):
    # a single fully grown tree memorises distinct rows exactly
    forest = ForestModel.from_dict(
        fit_hybrid(ds, replace(small_spec("et_xgb"), stage1=ForestSpec(TreeParams(), 1, False),
                               stage2=GBTParams(n_estimators=0))).stage1.to_dict())
    return HybridModel("et_xgb", forest, GBTModel(0.0, (), GBTParams(n_estimators=0), ds.d),
                       "raw", ds.feature_names, ds.target_name, small_spec("et_xgb"))


def test_evaluate_perfect_model(small):
    sp = split(small.n, 0.8, 1)
    train, test = evaluate_hybrid(_perfect_model(small), small, sp)
    for rep in (train, test):
        assert rep.r2 == 1.0 and rep.rmse == 0.0
        assert set(CSV_COLUMNS) <= set(rep.to_dict())
    res = evaluate_hybrid(_perfect_model(small), small, sp)
    assert len(res.points) == small.n
    assert all(p.within_band for p in res.points)
    assert [p.split for p in res.points].count("test") == len(sp.test)


def test_constant_mean_model_has_zero_r2(small):
    sp = split(small.n, 0.8, 1)
    mean = float(np.mean(small.y[list(sp.train)]))
    forest = ForestModel((Tree.leaf(mean),), False, TreeParams(), small.d)
    m = HybridModel("et_xgb", forest, GBTModel(0.0, (), GBTParams(n_estimators=0), small.d), "raw",
                    small.feature_names, small.target_name, small_spec("et_xgb"))
    train, _ = evaluate_hybrid(m, small, sp)
    assert train.r2 == pytest.approx(0.0, abs=1e-12)


def test_evaluate_empty_partition(small):
    m = _perfect_model(small)
    with pytest.raises(InsufficientDataError):
        evaluate_hybrid(m, small, SplitIndices(tuple(range(small.n)), (), 0, 1.0))


def test_empty_training_data_rejected(small):
    with pytest.raises(EmptyDataError):
        Dataset(small.feature_names, np.zeros((0, small.d)), np.zeros(0), small.target_name)


def test_end_to_end_small_accuracy():
    ds = reference_dataset(400, seed=2)
    sp = split(ds.n, 0.8, 0)
    spec = replace(small_spec("et_xgb"), stage1=ForestSpec(TreeParams.extra_trees(), 100, False))
    m = fit_hybrid(ds.subset(list(sp.train)), spec)
    _, test = evaluate_hybrid(m, ds, sp)
    assert test.r2 >= 0.8
