"""Acceptance criteria 1-10; each test prints one PASS/FAIL line."""

import json
import math
import time

import numpy as np
import pytest
from conftest import ADDITIVITY_TOL
from test_attention import SMALL, grad_check

from strengthlab.attention import attention_weights, scaled_dot_attention
from strengthlab.boosting import GBTParams, HistogramParams, fit_gbt, leaf_weight, split_gain
from strengthlab.cli import run
from strengthlab.dataset import reference_dataset, split
from strengthlab.evaluation import evaluate, pearson, uncertainty
from strengthlab.explain import brute_shap, dependence, dependence_slope, explain, global_importance, tree_shap
from strengthlab.hybrid import default_spec, evaluate_hybrid, fit_hybrid
from strengthlab.rng import Stream
from strengthlab.trees import TreeParams, fit_forest, fit_tree
from strengthlab.tuning import kfold

# Published (R2, RSE, RRMSE, R, PI) per model, target and split.
PUBLISHED = {
    "ET-XGB": {
        ("CS", "train"): (0.995, 0.005, 0.049, 0.998, 0.024),
        ("FS", "train"): (0.994, 0.006, 0.109, 0.998, 0.055),
        ("TS", "train"): (0.999, 0.002, 0.023, 0.999, 0.011),
        ("CS", "test"): (0.994, 0.005, 0.083, 0.998, 0.042),
        ("FS", "test"): (0.944, 0.056, 0.435, 0.990, 0.219),
        ("TS", "test"): (0.978, 0.021, 0.218, 0.996, 0.109),
    },
    "RF-LGBM": {
        ("CS", "train"): (0.992, 0.008, 0.073, 0.996, 0.037),
        ("FS", "train"): (0.980, 0.019, 0.224, 0.997, 0.112),
        ("TS", "train"): (0.996, 0.003, 0.106, 0.999, 0.053),
        ("CS", "test"): (0.976, 0.024, 0.129, 0.988, 0.065),
        ("FS", "test"): (0.977, 0.022, 0.209, 0.991, 0.105),
        ("TS", "test"): (0.912, 0.088, 0.145, 0.955, 0.074),
    },
    "Transformer-XGB": {
        ("CS", "train"): (0.993, 0.006, 0.066, 0.998, 0.033),
        ("FS", "train"): (0.994, 0.006, 0.121, 0.998, 0.060),
        ("TS", "train"): (0.995, 0.004, 1.118, 0.999, 0.059),
        ("CS", "test"): (0.981, 0.019, 0.115, 0.991, 0.058),
        ("FS", "test"): (0.967, 0.033, 0.255, 0.990, 0.128),
        ("TS", "test"): (0.978, 0.021, 0.216, 0.994, 0.109),
    },
}
# printed values carry three decimals; the comparison allows for binary rounding at the boundary
PRINT_TOL = 0.001 + 1e-9


@pytest.fixture(scope="module")
def fitted(reference):
    ds, sp = reference
    train = ds.subset(list(sp.train))
    out = {}
    for kind in ("et_xgb", "rf_lgbm", "transformer_xgb"):
        t0 = time.perf_counter()
        model = fit_hybrid(train, default_spec(kind))
        out[kind] = (model, evaluate_hybrid(model, ds, sp), time.perf_counter() - t0)
    return out


@pytest.mark.xfail(strict=True, reason="one published row prints RRMSE 1.118, which cannot give its PI of 0.059")
def test_criterion_1_published_table_consistency(criterion):
    bad = []
    for model, rows in PUBLISHED.items():
        for (target, part), (r2, rse, rrmse, r, pi) in rows.items():
            if abs(rse - (1 - r2)) > PRINT_TOL:
                bad.append(f"{model}/{target}/{part} RSE {rse} vs 1-R2 {1 - r2:.4f}")
            if abs(rrmse / (1 + r) - pi) > PRINT_TOL:
                bad.append(f"{model}/{target}/{part} PI {pi} vs RRMSE/(1+R) {rrmse / (1 + r):.4f}")
    n = sum(len(v) for v in PUBLISHED.values())
    detail = f"{n} rows checked; " + ("all consistent" if not bad else "inconsistent: " + "; ".join(bad))
    assert criterion(1, not bad, detail)


def test_criterion_2_metric_oracle(criterion):
    r = evaluate([2.0, 4, 6], [3.0, 3, 6])
    want = dict(rmse=0.81650, mae=0.66667, r2=0.75, rse=0.25, rrmse=0.20412, pearson_r=0.86603, pi=0.10939)
    worst_example = max(abs(getattr(r, k) - v) for k, v in want.items())
    s = Stream(2024)
    worst_rse = worst_affine = 0.0
    mae_ok = True
    for _ in range(1000):
        n = 3 + s.randbelow(60)
        y = 30 + 10 * s.normal(n)
        yhat = y + s.normal(n) * (0.1 + 5 * s.uniform())
        rep = evaluate(y, yhat)
        worst_rse = max(worst_rse, abs(rep.rse - (1 - rep.r2)))
        mae_ok &= rep.mae <= rep.rmse
        a, b = 0.01 + 100 * s.uniform(), 200 * (s.uniform() - 0.5)
        worst_affine = max(worst_affine, abs(pearson(y, a * yhat + b) - rep.pearson_r))
    ok = worst_example <= 1e-5 and worst_rse <= 1e-10 and worst_affine <= 1e-10 and mae_ok
    assert criterion(2, ok, f"example err {worst_example:.2e}; 1000 pairs: |RSE-(1-R2)| {worst_rse:.1e}, "
                            f"affine Pearson {worst_affine:.1e}, MAE<=RMSE {mae_ok}")


def test_criterion_3_uncertainty_oracle(criterion):
    u = uncertainty([2.0, 4, 6], [3.0, 3, 6])
    ex = max(abs(u.u_abs - 2.26322), abs(u.u_norm - 28.8675))
    s = Stream(7)
    worst = 0.0
    for _ in range(200):
        half = s.normal(1 + s.randbelow(40)) * 5
        e = np.concatenate([half, -half])
        y = 50 + s.normal(e.size)
        rep = uncertainty(y, y + e)
        worst = max(worst, abs(rep.u_abs - 1.96 * rep.rmse * math.sqrt(2)))
    assert criterion(3, ex <= 1e-4 and worst <= 1e-10,
                     f"example err {ex:.1e}; zero-mean identity err {worst:.1e} over 200 inputs")


def _random_case(seed):
    s = Stream(seed)
    d = 1 + s.randbelow(4)
    depth = 1 + s.randbelow(3)
    X = np.round(s.uniform(40 * d).reshape(40, d) * 5) / 5
    y = s.normal(40) + X[:, 0]
    kind = s.randbelow(3)
    if kind == 0:
        model = fit_tree(X, y, TreeParams(max_depth=depth))
    elif kind == 1:
        model = fit_forest(X, y, TreeParams.extra_trees(max_depth=depth, seed=seed), 4, bootstrap=True)
    else:
        model = fit_gbt(X, y, params=GBTParams(n_estimators=5, max_depth=depth, learning_rate=0.3, seed=seed))
    x = X[s.randbelow(40)] + 0.2 * (s.uniform(d) - 0.5)
    return model, x, X[s.permutation(40)[:8]]


def test_criterion_4_shap_oracle(criterion):
    t0 = time.perf_counter()
    worst = gap = 0.0
    cases = 250
    for seed in range(cases):
        model, x, B = _random_case(seed)
        phi, base = tree_shap(model, x, mode="interventional", background=B)
        bphi, bbase = brute_shap(model, x, B)
        worst = max(worst, np.abs(phi - bphi).max(), abs(base - bbase))
        gap = max(gap, abs(base + phi.sum() - model.predict(x)[0]))
        pphi, pbase = tree_shap(model, x)
        gap = max(gap, abs(pbase + pphi.sum() - model.predict(x)[0]))
    secs = time.perf_counter() - t0
    ok = worst <= 1e-9 and gap <= ADDITIVITY_TOL and secs < 60
    assert criterion(4, ok, f"{cases} cases: max |tree-brute| {worst:.1e}, additivity gap {gap:.1e}, {secs:.1f}s")


def test_criterion_5_boosting(criterion):
    examples = (leaf_weight(6, 3, 0, 1) == -1.5 and leaf_weight(6, 3, 10, 1) == 0.0
                and split_gain(-2, 2, 2, 2, 0, 0, 0) == 2.0 and split_gain(-2, 2, 2, 2, 0, 0, 2) == 0.0)
    rises = 0
    for seed in range(3):
        s = Stream(100 + seed)
        X = s.uniform(200 * 4).reshape(200, 4)
        y = np.sin(3 * X[:, 0]) + X[:, 1] * X[:, 2] + 0.2 * s.normal(200)
        p = GBTParams(n_estimators=200, learning_rate=0.3, max_depth=3, gamma=0.0, reg_alpha=0.0, reg_lambda=0.0)
        m = fit_gbt(X, y, params=p)
        mse = [float(np.mean((f - y) ** 2)) for f in m.staged_predict(X)]
        rises += sum(b > a for a, b in zip(mse, mse[1:]))
    same = True
    for seed in range(3):
        s = Stream(200 + seed)
        X = np.floor(s.uniform(300 * 3).reshape(300, 3) * np.array([4, 10, 40]))
        y = X[:, 0] - 0.3 * X[:, 1] + 0.05 * X[:, 2] + s.normal(300)
        common = dict(n_estimators=10, max_depth=4, learning_rate=0.3, seed=seed)
        ex = fit_gbt(X, y, params=GBTParams(mode="exact", **common))
        hi = fit_gbt(X, y, params=GBTParams(mode="histogram", histogram=HistogramParams(goss_a=1.0, goss_b=0.0),
                                            **common))
        same &= all(a.structure_equal(b) and np.allclose(a.value, b.value, rtol=1e-12, atol=1e-12)
                    for a, b in zip(ex.trees, hi.trees))
    ok = examples and rises == 0 and same
    assert criterion(5, ok, f"closed forms exact {examples}; MSE increases over 3x200 rounds: {rises}; "
                            f"exact == histogram trees {same}")


def test_criterion_6_transformer_numerics(criterion):
    t0 = time.perf_counter()
    out = scaled_dot_attention([[1.0], [0.0]], [[1.0], [0.0]], [[10.0], [20.0]])
    sig = 1 / (1 + math.exp(-1))
    ex = max(abs(out[0, 0] - (10 * sig + 20 * (1 - sig))), abs(out[1, 0] - 15.0))
    rounds_to_printed = round(float(out[0, 0]), 3) == 12.689
    s = Stream(9)
    row_err = 0.0
    for _ in range(200):
        t = 1 + s.randbelow(10)
        P = attention_weights(s.normal(t * 4).reshape(t, 4) * 3, s.normal(t * 4).reshape(t, 4) * 3)
        row_err = max(row_err, np.abs(P.sum(axis=-1) - 1).max())
    worst = grad_check(SMALL)
    group, rel = max(worst.items(), key=lambda kv: kv[1])
    secs = time.perf_counter() - t0
    ok = ex <= 1e-4 and rounds_to_printed and row_err <= 1e-12 and rel <= 1e-4 and secs < 60
    assert criterion(6, ok, f"2-token example err {ex:.1e}; softmax row-sum err {row_err:.1e}; "
                            f"worst gradient group {group} rel err {rel:.1e} over {len(worst)} groups; {secs:.1f}s")


def test_criterion_7_learnability(criterion, fitted, reference):
    ds, sp = reference
    parts = []
    ok = True
    for kind, (model, ev, secs) in fitted.items():
        ok &= ev.test.r2 >= 0.90
        parts.append(f"{kind} test R2 {ev.test.r2:.3f} ({secs:.0f}s)")
    et = fitted["et_xgb"][0]
    Xtr, ytr = ds.X[list(sp.train)], ds.y[list(sp.train)]
    hybrid_rmse = float(np.sqrt(np.mean((et.predict(Xtr) - ytr) ** 2)))
    stage1_rmse = float(np.sqrt(np.mean((et.stage1_predict(Xtr) - ytr) ** 2)))
    ok &= hybrid_rmse <= stage1_rmse
    total = sum(v[2] for v in fitted.values())
    ok &= total <= 300
    parts.append(f"et_xgb train RMSE {hybrid_rmse:.3g} <= stage 1 {stage1_rmse:.3g}")
    assert criterion(7, ok, "; ".join(parts))


def test_criterion_8_shap_mirror(criterion, fitted, reference):
    ds, sp = reference
    model = fitted["et_xgb"][0]
    test = ds.subset(list(sp.test))
    sm = explain(model, test)
    gap = float(np.abs(sm.predictions - model.predict(test.X)).max())
    top3 = global_importance(sm).top(3)
    ar2 = dependence_slope(dependence(sm, None, "AR2"))
    w = dependence_slope(dependence(sm, None, "W"))
    ok = {"AR2", "Sfu"} <= set(top3) and ar2 > 0 and w < 0 and gap <= ADDITIVITY_TOL
    assert criterion(8, ok, f"top 3 {top3}; AR2 slope {ar2:.3g}; W slope {w:.3g}; additivity gap {gap:.1e}")


def test_criterion_9_determinism(criterion, tmp_path, monkeypatch):
    data = tmp_path / "data"
    assert run(["synth", "--n", "300", "--seed", "11", "--out", str(data)]) == 0
    outs = []
    for threads in ("1", "4"):
        monkeypatch.setenv("STRENGTHLAB_THREADS", threads)
        out = tmp_path / f"run{threads}"
        code = run(["train", "--kind", "et_xgb", "--preset", "table4", "--input", str(data / "synth.csv"),
                    "--target", "CS", "--split", "0.8", "--seed", "100", "--out", str(out)])
        assert code == 0
        outs.append(out)
    names = ("model.json", "metrics_train.csv", "metrics_test.csv", "predictions.csv")
    same = {n: (outs[0] / n).read_bytes() == (outs[1] / n).read_bytes() for n in names}
    json.loads((outs[0] / "model.json").read_text())
    assert criterion(9, all(same.values()), f"byte-identical across STRENGTHLAB_THREADS=1/4: {same}")


def test_criterion_10_split_arithmetic(criterion):
    sp = split(703, 0.8, 0)
    folds = kfold(10, 5, 0)
    cover = sorted(np.concatenate(folds).tolist()) == list(range(10))
    sizes = [len(f) for f in folds]
    ok = (len(sp.train), len(sp.test)) == (562, 141) and sizes == [2] * 5 and cover
    assert criterion(10, ok, f"703 @ 0.8 -> {len(sp.train)}/{len(sp.test)}; kfold(10,5) sizes {sizes}, "
                             f"disjoint cover {cover}")


def test_reference_dataset_is_the_shared_fixture(reference):
    ds, _ = reference
    again = reference_dataset(1000, seed=0)
    assert np.array_equal(ds.X, again.X) and np.array_equal(ds.y, again.y)
