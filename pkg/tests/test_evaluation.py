import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from strengthlab.errors import InsufficientDataError, ShapeError, UndefinedMetricError
from strengthlab.evaluation import (
    CSV_COLUMNS,
    RANK_COLUMNS,
    UncertaintyReport,
    compare_uncertainty,
    evaluate,
    pearson,
    uncertainty,
    within_band,
    write_metrics_csv,
    write_ranking_csv,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)
vec = arrays(np.float64, st.integers(3, 40), elements=finite)


def test_perfect_prediction():
    r = evaluate([1.0, 2, 3], [1.0, 2, 3])
    assert (r.r2, r.rmse, r.mae, r.rse, r.rrmse, r.pi) == (1.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    assert r.pearson_r == pytest.approx(1.0, abs=1e-15)


def test_three_point_example():
    r = evaluate([2.0, 4, 6], [3.0, 3, 6])
    want = dict(rmse=0.81650, mae=0.66667, r2=0.75, rse=0.25, rrmse=0.20412, pearson_r=0.86603, pi=0.10939)
    for k, v in want.items():
        assert getattr(r, k) == pytest.approx(v, abs=1e-5), k
    assert r.pi_eq12 == pytest.approx(0.75 / (1 + math.sqrt(2 / 3) / 4), abs=1e-12)
    assert r.n == 3 and r.y_mean == 4.0


def test_table_pi_convention():
    # an R of 0.998 with RRMSE 0.049 gives PI 0.0245 under the table convention
    assert 0.049 / (1 + 0.998) == pytest.approx(0.0245, abs=1e-4)
    assert 0.995 / (1 + 0.049) == pytest.approx(0.949, abs=1e-3)


def test_constant_actuals():
    with pytest.raises(UndefinedMetricError) as err:
        evaluate([5.0, 5, 5], [4.0, 5, 6])
    part = err.value.partial
    assert part.rmse == pytest.approx(math.sqrt(2 / 3)) and part.mae == pytest.approx(2 / 3)
    assert math.isnan(part.r2) and math.isnan(part.rse) and math.isnan(part.pearson_r)
    assert math.isnan(evaluate([5.0, 5, 5], [4.0, 5, 6], strict=False).r2)


def test_constant_predictions_flagged():
    r = evaluate([1.0, 2, 3], [2.0, 2, 2])
    assert r.pearson_r == 0.0 and r.pearson_degenerate
    assert r.pi == pytest.approx(r.rrmse)


def test_zero_mean_actuals():
    with pytest.raises(UndefinedMetricError):
        evaluate([-1.0, 0, 1], [-1.0, 0, 1.5])
    with pytest.raises(UndefinedMetricError):
        uncertainty([-1.0, 1], [0.0, 0])


def test_input_errors():
    with pytest.raises(ShapeError):
        evaluate([1.0, 2], [1.0])
    with pytest.raises(InsufficientDataError):
        evaluate([], [])
    with pytest.raises(UndefinedMetricError):
        evaluate([1.0], [2.0])
    assert evaluate([2.0], [3.0], strict=False).rmse == 1.0


@given(vec, st.integers(0, 2**32))
@settings(max_examples=150, deadline=None)
def test_metric_identities(y, seed):
    y = y + 2000.0  # positive mean
    yhat = y + np.random.default_rng(seed).normal(0, 10, y.size)
    if np.ptp(y) == 0:
        return
    r = evaluate(y, yhat)
    assert abs(r.rse - (1 - r.r2)) <= 1e-12
    err = np.abs(y - yhat)
    assert r.mae <= r.rmse * (1 + 1e-12) and r.rmse <= err.max() * (1 + 1e-12)
    assert abs(r.pi - r.rrmse / (1 + r.pearson_r)) <= 1e-12
    assert -1.0 <= r.pearson_r <= 1.0


@given(vec, vec, st.floats(0.01, 100), st.floats(-100, 100))
@settings(max_examples=150, deadline=None)
def test_pearson_affine_invariance(a, b, scale, shift):
    n = min(a.size, b.size)
    a, b = a[:n], b[:n]
    if np.ptp(a) < 1e-3 or np.ptp(b) < 1e-3:
        return
    r = pearson(a, b)
    assert abs(pearson(a, scale * b + shift) - r) <= 1e-10


def test_r2_not_affine_invariant():
    y = np.array([1.0, 2, 3, 4])
    assert evaluate(y, y).r2 != evaluate(y, 2 * y + 1).r2


def test_uncertainty_example():
    u = uncertainty([2.0, 4, 6], [3.0, 3, 6])
    assert u.rmse == pytest.approx(0.81650, abs=1e-5) and u.sigma == pytest.approx(0.81650, abs=1e-5)
    assert u.u_abs == pytest.approx(2.26322, abs=1e-4)
    assert u.u_norm == pytest.approx(28.8675, abs=1e-4)


def test_uncertainty_degenerate_cases():
    u = uncertainty([1.0, 2, 3], [1.0, 2, 3])
    assert u.u_abs == 0.0 and u.u_norm == 0.0
    z0 = uncertainty([2.0, 4, 6], [3.0, 3, 6], z=0.0)
    assert z0.u_abs == 0.0 and z0.u_norm == pytest.approx(28.8675, abs=1e-4)


@given(vec, st.floats(0.1, 5))
@settings(max_examples=100, deadline=None)
def test_uncertainty_linear_in_z(e, z):
    y = np.full(e.size, 50.0) + np.arange(e.size)
    a = uncertainty(y, y + e)
    b = uncertainty(y, y + e, z=z)
    assert b.u_abs == pytest.approx(a.u_abs * z / 1.96, rel=1e-12, abs=1e-12)
    assert b.u_norm == a.u_norm


@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(0.1, 100)))
@settings(max_examples=100, deadline=None)
def test_zero_mean_error(half):
    e = np.concatenate([half, -half])
    y = np.full(e.size, 40.0)
    u = uncertainty(y, y + e)
    assert abs(u.u_abs - 1.96 * u.rmse * math.sqrt(2)) <= 1e-10


def test_within_band():
    assert within_band([100.0, 100, 100], [110.0, 111, 89]).tolist() == [True, False, False]


def _rep(u):
    return UncertaintyReport(1.96 * u, u, 0.0, 0.0, 1.96, 1.0)


def test_compare_uncertainty():
    rank = compare_uncertainty({"B": {"train": _rep(20.59), "test": _rep(24.3)},
                                "A": {"train": _rep(13.15), "test": _rep(15.5)}})
    assert [r.model for r in rank] == ["A", "B"] and [r.rank for r in rank] == [1, 2]
    assert rank[0].delta_u_norm == pytest.approx(15.5 - 13.15)
    single = compare_uncertainty({"only": {"train": _rep(1), "test": _rep(2)}})
    assert single[0].rank == 1
    tied = compare_uncertainty({"z": {"train": _rep(1), "test": _rep(2)},
                                "a": {"train": _rep(1), "test": _rep(2)}})
    assert [r.model for r in tied] == ["a", "z"]
    buf = io.StringIO()
    write_ranking_csv(buf, rank)
    rows = list(csv.reader(io.StringIO(buf.getvalue())))
    assert tuple(rows[0]) == RANK_COLUMNS and rows[1][1] == "A"


def test_metrics_csv_columns():
    buf = io.StringIO()
    r = evaluate([2.0, 4, 6], [3.0, 3, 6])
    write_metrics_csv(buf, [r, r], labels=["train", "test"])
    rows = list(csv.reader(io.StringIO(buf.getvalue())))
    assert tuple(rows[0]) == ("split", *CSV_COLUMNS)
    assert rows[1][0] == "train" and float(rows[1][CSV_COLUMNS.index("r2") + 1]) == 0.75
    assert tuple(CSV_COLUMNS) == ("n", "r2", "rmse", "mae", "rse", "rrmse", "pearson_r", "pi", "pi_eq12")
