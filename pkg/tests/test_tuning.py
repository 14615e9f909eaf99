import io
import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from strengthlab.boosting import GBTParams
from strengthlab.dataset import Dataset, reference_dataset
from strengthlab.errors import ConfigError, FoldError, SearchFailedError
from strengthlab.hybrid import ForestSpec, HybridSpec, default_spec
from strengthlab.rng import Stream
from strengthlab.trees import TreeParams
from strengthlab.tuning import (
    Choice,
    IntUniform,
    LogUniform,
    SearchSpace,
    Uniform,
    apply_params,
    cross_validate,
    default_space,
    kfold,
    random_search,
    sample_trials,
    write_trial_log,
)


def tiny_spec(kind="et_xgb", seed=0):
    if kind == "rf_lgbm":
        return HybridSpec(kind, ForestSpec(TreeParams(max_depth=3), 5, True),
                          GBTParams(n_estimators=10, max_depth=2, mode="histogram"), seed)
    return HybridSpec(kind, ForestSpec(TreeParams.extra_trees(max_depth=4), 5, False),
                      GBTParams(n_estimators=10, max_depth=2), seed)


@pytest.fixture(scope="module")
def data():
    return reference_dataset(80, seed=6)


# -- folds -----------------------------------------------------------------------


def test_kfold_examples():
    folds = kfold(10, 5, 0)
    assert [len(f) for f in folds] == [2] * 5
    assert sorted(len(f) for f in kfold(7, 3, 1)) == [2, 2, 3]
    assert all(np.array_equal(a, b) for a, b in zip(kfold(10, 5, 3), kfold(10, 5, 3)))
    with pytest.raises(ConfigError):
        kfold(3, 4, 0)
    with pytest.raises(ConfigError):
        kfold(3, 1, 0)


@given(st.integers(2, 300), st.integers(2, 20), st.integers(0, 2**64 - 1))
@settings(max_examples=100, deadline=None)
def test_kfold_partition(n, k, seed):
    if k > n:
        return
    folds = kfold(n, k, seed)
    sizes = [len(f) for f in folds]
    assert len(folds) == k and max(sizes) - min(sizes) <= 1
    assert sorted(np.concatenate(folds).tolist()) == list(range(n))


# -- cross-validation ------------------------------------------------------------


def test_constant_target_zero_rmse(data):
    ds = Dataset(data.feature_names, data.X, np.full(data.n, 9.0), data.target_name)
    cv = cross_validate(ds, tiny_spec(), k=4, seed=1)
    assert all(o == pytest.approx(0.0, abs=1e-12) for o in cv.objectives)


def test_leave_one_out_on_five_rows(data):
    ds = data.subset(np.arange(5))
    cv = cross_validate(ds, tiny_spec(), k=5, seed=0)
    assert len(cv.folds) == 5
    assert all(r.n == 1 and math.isnan(r.r2) and math.isfinite(r.rmse) for r in cv.folds)


def test_mean_identity_and_determinism(data):
    a = cross_validate(data, tiny_spec(), k=4, seed=2)
    assert len(a.folds) == 4
    assert a.mean == math.fsum(a.objectives) / 4
    assert abs(a.mean - float(np.mean(a.objectives))) <= 1e-12
    b = cross_validate(data, tiny_spec(), k=4, seed=2)
    assert a.objectives == b.objectives


def test_fold_error_carries_index(data, monkeypatch):
    def boom(*args, **kwargs):
        raise ConfigError("synthetic failure")

    monkeypatch.setattr("strengthlab.tuning.fit_hybrid", boom)
    with pytest.raises(FoldError) as err:
        cross_validate(data, tiny_spec(), k=3)
    assert err.value.fold == 0


# -- search spaces ---------------------------------------------------------------


def test_distributions():
    rs = Stream(1)
    assert all(2 <= IntUniform(2, 4).sample(rs) <= 4 for _ in range(50))
    assert {IntUniform(0, 1).sample(rs) for _ in range(50)} == {0, 1}
    assert all(0.1 <= LogUniform(0.1, 10).sample(rs) <= 10 for _ in range(50))
    assert all(-1 <= Uniform(-1, 1).sample(rs) < 1 for _ in range(50))
    assert Choice(["a"]).sample(rs) == "a"
    for bad in (lambda: Uniform(1, 1), lambda: LogUniform(0, 1), lambda: IntUniform(3, 2), lambda: Choice(())):
        with pytest.raises(ConfigError):
            bad()
    with pytest.raises(ConfigError):
        SearchSpace({"lr": Uniform(0, 1)})


@pytest.mark.parametrize("kind", ["et_xgb", "rf_lgbm", "transformer_xgb"])
def test_default_spaces_produce_valid_specs(kind):
    base = default_spec(kind)
    for params in sample_trials(default_space(kind), 20, seed=3):
        apply_params(base, params)


def test_sampling_is_prefix_stable():
    space = default_space("et_xgb")
    assert sample_trials(space, 3, 7) == sample_trials(space, 6, 7)[:3]
    assert sample_trials(space, 3, 7) != sample_trials(space, 3, 8)


# -- random search ---------------------------------------------------------------


SPACE = SearchSpace({"stage2.learning_rate": LogUniform(0.01, 0.5), "stage2.max_depth": IntUniform(1, 3)})


def test_budget_one(data):
    res = random_search(data, "et_xgb", SPACE, budget=1, k=3, seed=4, base_spec=tiny_spec())
    assert res.best_index == 0 and len(res.trials) == 1
    assert res.best_spec == apply_params(tiny_spec(), res.trials[0].params)


def test_deterministic_and_monotone_budget(data):
    kw = dict(k=3, seed=5, base_spec=tiny_spec())
    short = random_search(data, "et_xgb", SPACE, budget=2, **kw)
    long = random_search(data, "et_xgb", SPACE, budget=5, **kw)
    again = random_search(data, "et_xgb", SPACE, budget=5, **kw)
    assert [t.to_record() for t in long.trials] == [t.to_record() for t in again.trials]
    assert [t.to_record() for t in long.trials[:2]] == [t.to_record() for t in short.trials]
    assert long.best.cv.mean <= short.best.cv.mean
    assert long.best.cv.mean == min(t.cv.mean for t in long.trials)


def test_known_good_beats_pathological_rate(data):
    space = SearchSpace({"stage2.learning_rate": Choice((0.05, 10.0))})
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = random_search(data, "rf_lgbm", space, budget=6, k=3, seed=0, base_spec=tiny_spec("rf_lgbm"))
    drawn = {t.params["stage2.learning_rate"] for t in res.trials}
    assert drawn == {0.05, 10.0}
    assert res.best_spec.stage2.learning_rate == 0.05


def test_all_trials_failing(data):
    space = SearchSpace({"stage2.subsample": Choice((0.0,))})
    with pytest.raises(SearchFailedError) as err:
        random_search(data, "et_xgb", space, budget=2, k=3, base_spec=tiny_spec())
    assert len(err.value.diagnostics) == 2
    with pytest.raises(ConfigError):
        random_search(data, "et_xgb", SPACE, budget=0, base_spec=tiny_spec())
    with pytest.raises(ConfigError):
        random_search(data, "rf_lgbm", SPACE, budget=1, base_spec=tiny_spec())


def test_trial_log(data):
    res = random_search(data, "et_xgb", SPACE, budget=2, k=3, seed=1, base_spec=tiny_spec())
    buf = io.StringIO()
    write_trial_log(buf, res.trials)
    lines = buf.getvalue().splitlines()
    assert len(lines) == 2
    rec = json.loads(lines[1])
    assert set(rec) == {"draw_index", "params", "fold_objectives", "mean", "std"}
    assert rec["draw_index"] == 1 and len(rec["fold_objectives"]) == 3
