"""Regression metrics and uncertainty indices."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import InsufficientDataError, ShapeError, UndefinedMetricError

CSV_COLUMNS = ("n", "r2", "rmse", "mae", "rse", "rrmse", "pearson_r", "pi", "pi_eq12")
Z_95 = 1.96


@dataclass(frozen=True)
class MetricsReport:
    """Seven regression statistics for one (actual, predicted) pair.

    ``rrmse`` is a fraction of the mean actual value.  ``pi`` is
    ``rrmse / (1 + pearson_r)``; ``pi_eq12`` is ``r2 / (1 + rrmse)``.
    Undefined entries are NaN; ``pearson_degenerate`` flags constant
    predictions, for which ``pearson_r`` is reported as 0.
    """

    n: int
    r2: float
    rmse: float
    mae: float
    rse: float
    rrmse: float
    pearson_r: float
    pi: float
    pi_eq12: float
    y_mean: float
    pearson_degenerate: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    def csv_row(self) -> list:
        return [self.n if c == "n" else _fmt(getattr(self, c)) for c in CSV_COLUMNS]


def _fmt(v: float) -> str:
    return repr(float(v))


def write_metrics_csv(fh, reports, labels=None) -> None:
    w = csv.writer(fh, lineterminator="\n")
    head = list(CSV_COLUMNS)
    if labels is not None:
        head = ["split", *head]
    w.writerow(head)
    for i, r in enumerate(reports):
        row = r.csv_row()
        w.writerow([labels[i], *row] if labels is not None else row)


def _pair(y, yhat):
    y = np.asarray(y, dtype=np.float64).ravel()
    yhat = np.asarray(yhat, dtype=np.float64).ravel()
    if y.shape != yhat.shape:
        raise ShapeError(f"y has {y.size} values, yhat has {yhat.size}")
    if y.size == 0:
        raise InsufficientDataError("no samples to evaluate")
    return y, yhat


def pearson(a, b) -> float:
    a, b = _pair(a, b)
    da = a - a.mean()
    db = b - b.mean()
    denom = math.sqrt(float(np.dot(da, da)) * float(np.dot(db, db)))
    if denom == 0.0:
        return float("nan")
    return float(np.clip(np.dot(da, db) / denom, -1.0, 1.0))


def evaluate(y, yhat, strict: bool = True) -> MetricsReport:
    """Compute R2, RMSE, MAE, RSE, RRMSE, Pearson R and PI.

    With ``strict`` an :class:`UndefinedMetricError` is raised when a metric
    is undefined (constant actuals, zero mean, or fewer than 2 samples); the
    error's ``partial`` attribute carries the report with NaN entries.
    Without ``strict`` that partial report is returned directly.
    """
    y, yhat = _pair(y, yhat)
    n = y.size
    err = y - yhat
    sse = float(np.dot(err, err))
    y_mean = float(y.mean())
    dev = y - y_mean
    sst = float(np.dot(dev, dev))
    rmse = math.sqrt(sse / n)
    mae = float(np.abs(err).mean())
    problems = []
    if n < 2:
        problems.append("fewer than 2 samples")
    if sst > 0.0:
        rse = sse / sst
        r2 = 1.0 - rse
    else:
        rse = r2 = float("nan")
        problems.append("actual values are constant (R2, RSE, R undefined)")
    degenerate = False
    if sst > 0.0:
        r = pearson(y, yhat)
        if math.isnan(r):
            r, degenerate = 0.0, True
    else:
        r = float("nan")
    if y_mean != 0.0:
        rrmse = rmse / y_mean
    else:
        rrmse = float("nan")
        problems.append("mean actual value is zero (RRMSE undefined)")
    pi = rrmse / (1.0 + r) if not (math.isnan(rrmse) or math.isnan(r)) and r != -1.0 else float("nan")
    pi_eq12 = r2 / (1.0 + rrmse) if not (math.isnan(r2) or math.isnan(rrmse)) else float("nan")
    report = MetricsReport(n, r2, rmse, mae, rse, rrmse, r, pi, pi_eq12, y_mean, degenerate)
    if problems and strict:
        raise UndefinedMetricError("; ".join(problems), partial=report)
    return report


def within_band(y, yhat, frac: float = 0.10) -> np.ndarray:
    """True where the prediction lies within ``frac`` of the actual value."""
    y, yhat = _pair(y, yhat)
    return np.abs(yhat - y) <= frac * np.abs(y)


@dataclass(frozen=True)
class UncertaintyReport:
    u_abs: float
    u_norm: float  # percent
    rmse: float
    sigma: float
    z: float
    y_mean: float

    def to_dict(self) -> dict:
        return asdict(self)


def uncertainty(y, yhat, z: float = Z_95, strict: bool = True) -> UncertaintyReport:
    """Absolute ``z * sqrt(RMSE^2 + sigma^2)`` and mean-normalised percent uncertainty.

    ``sigma`` is the population standard deviation of the signed errors.
    """
    y, yhat = _pair(y, yhat)
    err = yhat - y
    rmse = math.sqrt(float(np.dot(err, err)) / err.size)
    sigma = float(err.std())
    spread = math.sqrt(rmse * rmse + sigma * sigma)
    y_mean = float(y.mean())
    if y_mean == 0.0:
        if strict:
            raise UndefinedMetricError("mean actual value is zero: normalised uncertainty undefined",
                                       partial=UncertaintyReport(z * spread, float("nan"), rmse, sigma, z, y_mean))
        u_norm = float("nan")
    else:
        u_norm = spread / y_mean * 100.0
    return UncertaintyReport(z * spread, u_norm, rmse, sigma, z, y_mean)


@dataclass(frozen=True)
class UncertaintyRank:
    rank: int
    model: str
    train_u_abs: float
    test_u_abs: float
    train_u_norm: float
    test_u_norm: float
    delta_u_abs: float
    delta_u_norm: float


RANK_COLUMNS = tuple(f.name for f in fields(UncertaintyRank))


def compare_uncertainty(reports) -> list:
    """Rank models by ascending test ``u_norm``; ties go to the lexicographically smaller name.

    ``reports`` maps model name to ``{"train": UncertaintyReport, "test": UncertaintyReport}``.
    """
    keyed = sorted(reports.items(), key=lambda kv: (kv[1]["test"].u_norm, kv[0]))
    out = []
    for i, (name, rep) in enumerate(keyed, start=1):
        tr, te = rep["train"], rep["test"]
        out.append(UncertaintyRank(i, name, tr.u_abs, te.u_abs, tr.u_norm, te.u_norm,
                                   te.u_abs - tr.u_abs, te.u_norm - tr.u_norm))
    return out


def write_ranking_csv(fh, ranking) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(RANK_COLUMNS)
    for r in ranking:
        w.writerow([r.rank, r.model, *(_fmt(getattr(r, c)) for c in RANK_COLUMNS[2:])])
