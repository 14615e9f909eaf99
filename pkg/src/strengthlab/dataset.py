"""Tabular data ingestion, descriptive statistics, splitting and synthesis."""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import (
    EmptyDataError,
    InsufficientDataError,
    InvalidStatsError,
    ParseError,
    SchemaError,
    ShapeError,
    UnknownFeatureError,
)
from .presets import TARGETS, marginal_rows
from .rng import Stream

log = logging.getLogger(__name__)

STAT_NAMES = ("mean", "std", "min", "p25", "p50", "p75", "max")
QUANTILE_LEVELS = (0.0, 0.25, 0.5, 0.75, 1.0)


def _frozen(a, dtype=np.float64):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    feature_names: tuple
    X: np.ndarray
    y: np.ndarray
    target_name: str

    def __post_init__(self):
        X = _frozen(self.X)
        y = _frozen(self.y)
        names = tuple(str(n) for n in self.feature_names)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise ShapeError(f"X {X.shape} and y {y.shape} do not describe one table")
        if X.shape[0] < 1:
            raise EmptyDataError("dataset has no rows")
        if X.shape[1] < 1 or len(names) != X.shape[1]:
            raise ShapeError(f"{len(names)} feature names for {X.shape[1]} columns")
        if len(set(names)) != len(names):
            raise ShapeError("feature names must be unique")
        if not (np.isfinite(X).all() and np.isfinite(y).all()):
            raise ValueError("dataset contains non-finite values")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def column(self, name: str) -> np.ndarray:
        if name == self.target_name:
            return self.y
        try:
            return self.X[:, self.feature_names.index(name)]
        except ValueError:
            raise UnknownFeatureError(name) from None

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(self.feature_names, self.X[rows], self.y[rows], self.target_name)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([*self.feature_names, self.target_name])
            for row, t in zip(self.X, self.y):
                w.writerow([repr(float(v)) for v in row] + [repr(float(t))])


def load_csv(path, schema: Sequence[str] | None = None, target: str = "CS") -> Dataset:
    """Read a comma-delimited file with a header row.

    ``schema`` lists the feature columns in the order they should appear; when
    omitted every non-target column is a feature, in file order.  Data rows
    in error messages are numbered from 1.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or not any(h.strip() for h in header):
            raise EmptyDataError(f"{path}: empty file")
        header = [h.strip() for h in header]
        rows = [r for r in reader if any(c.strip() for c in r)]
    features = list(schema) if schema is not None else [h for h in header if h != target]
    for col in [*features, target]:
        if col not in header:
            raise SchemaError(col)
    if not rows:
        raise EmptyDataError(f"{path}: header but no data rows")
    pos = {h: i for i, h in enumerate(header)}
    wanted = [*features, target]
    table = np.empty((len(rows), len(wanted)))
    for r, row in enumerate(rows, start=1):
        for j, col in enumerate(wanted):
            text = row[pos[col]].strip() if pos[col] < len(row) else ""
            try:
                value = float(text)
            except ValueError:
                raise ParseError(r, col, text) from None
            if not math.isfinite(value):
                raise ParseError(r, col, text)
            table[r - 1, j] = value
    return Dataset(tuple(features), table[:, :-1], table[:, -1], target)


# --------------------------------------------------------------------------
# descriptive statistics


@dataclass(frozen=True)
class StatsTable:
    columns: tuple
    values: np.ndarray  # shape (7, n_columns), rows in STAT_NAMES order

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "values", _frozen(self.values))

    def get(self, column: str, stat: str) -> float:
        try:
            j = self.columns.index(column)
        except ValueError:
            raise UnknownFeatureError(column) from None
        return float(self.values[STAT_NAMES.index(stat), j])

    def row(self, column: str) -> dict:
        return {s: self.get(column, s) for s in STAT_NAMES}

    @classmethod
    def from_rows(cls, rows: Mapping[str, Mapping[str, float]]) -> "StatsTable":
        cols = list(rows)
        vals = np.array([[rows[c][s] for c in cols] for s in STAT_NAMES], dtype=float)
        return cls(tuple(cols), vals)

    @classmethod
    def published(cls, name: str) -> "StatsTable":
        """Marginals of ``table1`` (CS), ``table2`` (FS) or ``table3`` (TS)."""
        return cls.from_rows(marginal_rows(name))

    def to_records(self) -> list:
        return [{"statistic": s, **{c: float(self.values[i, j]) for j, c in enumerate(self.columns)}}
                for i, s in enumerate(STAT_NAMES)]

    def write_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["statistic", *self.columns])
        for i, s in enumerate(STAT_NAMES):
            w.writerow([s, *(repr(float(v)) for v in self.values[i])])

    def to_json(self) -> str:
        return json.dumps({"columns": list(self.columns), "statistics": self.to_records()}, indent=2)


def _quantile(sorted_col: np.ndarray, q: float) -> float:
    h = q * (len(sorted_col) - 1)
    lo = math.floor(h)
    hi = math.ceil(h)
    return float(sorted_col[lo] + (h - lo) * (sorted_col[hi] - sorted_col[lo]))


def _column_stats(col: np.ndarray) -> list:
    s = np.sort(col)
    mean = math.fsum(s) / len(s)
    var = math.fsum((s - mean) ** 2) / len(s)
    return [mean, math.sqrt(var), float(s[0]), _quantile(s, 0.25), _quantile(s, 0.5),
            _quantile(s, 0.75), float(s[-1])]


def summarize(ds: Dataset) -> StatsTable:
    """Mean, population std, min, linear-interpolated quartiles and max per column."""
    cols = [*ds.feature_names, ds.target_name]
    data = np.column_stack([ds.X, ds.y])
    vals = np.array([_column_stats(data[:, j]) for j in range(data.shape[1])]).T
    return StatsTable(tuple(cols), vals)


# --------------------------------------------------------------------------
# correlations


@dataclass(frozen=True)
class CorrMatrix:
    names: tuple
    matrix: np.ndarray
    constant_columns: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "matrix", _frozen(self.matrix))
        object.__setattr__(self, "constant_columns", tuple(self.constant_columns))

    @property
    def has_constant(self) -> bool:
        return bool(self.constant_columns)

    def get(self, a: str, b: str) -> float:
        return float(self.matrix[self.names.index(a), self.names.index(b)])

    def write_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["", *self.names])
        for name, row in zip(self.names, self.matrix):
            w.writerow([name, *(repr(float(v)) for v in row)])

    def to_json(self) -> str:
        return json.dumps({"names": list(self.names), "matrix": self.matrix.tolist(),
                           "constant_columns": list(self.constant_columns)}, indent=2)


def pearson_matrix(ds: Dataset) -> CorrMatrix:
    """Pearson coefficients over features plus the target column.

    A constant column has no defined correlation; its off-diagonal entries
    are 0 and its name is listed in ``constant_columns``.
    """
    if ds.n < 2:
        raise InsufficientDataError("Pearson correlation needs at least 2 rows")
    names = (*ds.feature_names, ds.target_name)
    data = np.column_stack([ds.X, ds.y])
    centred = data - data.mean(axis=0)
    norms = np.sqrt((centred ** 2).sum(axis=0))
    scale = data.std(axis=0)
    constant = (norms == 0) | (scale <= 1e-15 * np.maximum(1.0, np.abs(data).max(axis=0)))
    safe = np.where(constant, 1.0, norms)
    m = (centred.T @ centred) / np.outer(safe, safe)
    m = 0.5 * (m + m.T)
    m[constant, :] = 0.0
    m[:, constant] = 0.0
    np.clip(m, -1.0, 1.0, out=m)
    np.fill_diagonal(m, 1.0)
    const_names = tuple(n for n, c in zip(names, constant) if c)
    if const_names:
        warnings.warn(f"constant columns have undefined correlation, reported as 0: {const_names}",
                      RuntimeWarning, stacklevel=2)
    return CorrMatrix(names, m, const_names)


# --------------------------------------------------------------------------
# splitting


@dataclass(frozen=True)
class SplitIndices:
    train: tuple
    test: tuple
    seed: int
    ratio: float

    def to_dict(self) -> dict:
        return {"train": list(self.train), "test": list(self.test), "seed": self.seed, "ratio": self.ratio}


def train_size(n: int, ratio: float) -> int:
    # rounding guards products such as 0.57 * 100 = 56.999...
    return math.floor(round(ratio * n, 9))


def split(ds_or_n, ratio: float = 0.8, seed: int = 0) -> SplitIndices:
    """Seeded random train/test partition; ``floor(ratio * n)`` training rows."""
    n = ds_or_n if isinstance(ds_or_n, int) else ds_or_n.n
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    if n < 2:
        raise InsufficientDataError("a split needs at least 2 rows")
    perm = Stream(seed).permutation(n)
    k = train_size(n, ratio)
    return SplitIndices(tuple(sorted(int(i) for i in perm[:k])),
                        tuple(sorted(int(i) for i in perm[k:])), int(seed), float(ratio))


# --------------------------------------------------------------------------
# synthesis

GroundTruth = Callable[[Mapping[str, np.ndarray]], np.ndarray]


def _ramp(x, centre, width):
    return np.tanh((x - centre) / width)


def cs_reference(cols: Mapping[str, np.ndarray]) -> np.ndarray:
    """Smooth compressive-strength-like response in AR2, Sfu, SF and W.

    Increasing in AR2, Sfu and SF, decreasing in W; output in MPa around 55.
    """
    return (55.0
            + 14.0 * _ramp(cols["AR2"], 7.0, 5.0)
            + 0.22 * cols["Sfu"]
            + 6.0 * _ramp(cols["SF"], 0.5, 1.5)
            - 9.0 * _ramp(cols["W"], 175.0, 25.0))


def constant(value: float) -> GroundTruth:
    def f(cols):
        n = len(next(iter(cols.values())))
        return np.full(n, float(value))
    f.__name__ = f"constant_{value}"
    return f


GROUND_TRUTHS = {"cs_reference": cs_reference}


def resolve_ground_truth(spec) -> GroundTruth:
    """Accept a callable, a registered name, or ``"constant:<value>"``."""
    if callable(spec):
        return spec
    if isinstance(spec, str) and spec.startswith("constant:"):
        return constant(float(spec.split(":", 1)[1]))
    try:
        return GROUND_TRUTHS[spec]
    except KeyError:
        raise KeyError(f"unknown ground truth {spec!r}; known: {sorted(GROUND_TRUTHS)}") from None


def quantile_anchors(stats: StatsTable, column: str) -> np.ndarray:
    row = stats.row(column)
    lo, hi = row["min"], row["max"]
    if not (math.isfinite(lo) and math.isfinite(hi)) or hi < lo:
        raise InvalidStatsError(f"{column}: max {hi} below min {lo}")
    inner = np.clip(np.sort([row["p25"], row["p50"], row["p75"]]), lo, hi)
    return np.array([lo, *inner, hi])


def anchor_moments(anchors: np.ndarray) -> tuple:
    """Mean and std of the piecewise-linear inverse-CDF distribution (closed form)."""
    q = np.asarray(QUANTILE_LEVELS)
    m1 = m2 = 0.0
    for i in range(4):
        a, b, w = anchors[i], anchors[i + 1], q[i + 1] - q[i]
        m1 += w * (a + b) / 2.0
        m2 += w * (a * a + a * b + b * b) / 3.0
    return m1, math.sqrt(max(m2 - m1 * m1, 0.0))


def synthesize(stats: StatsTable, ground_truth, noise_std: float, n: int, seed: int,
               target: str | None = None) -> Dataset:
    """Draw a surrogate dataset whose feature marginals follow ``stats``.

    Each feature is sampled independently through the piecewise-linear
    inverse CDF pinned at (min, p25, p50, p75, max); the target is
    ``ground_truth(columns) + N(0, noise_std)``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if noise_std < 0:
        raise ValueError("noise_std must be >= 0")
    target = target or _guess_target(stats)
    features = [c for c in stats.columns if c != target]
    stream = Stream(seed)
    cols = {}
    for j, name in enumerate(features):
        anchors = quantile_anchors(stats, name)
        u = stream.spawn(j).uniform(n)
        cols[name] = np.interp(u, QUANTILE_LEVELS, anchors)
        mean, std = anchor_moments(anchors)
        want_mean, want_std = stats.get(name, "mean"), stats.get(name, "std")
        tol = max(want_std, 1e-12)
        if abs(mean - want_mean) > tol or abs(std - want_std) > tol:
            log.debug("%s: generator mean/std %.4g/%.4g vs published %.4g/%.4g",
                      name, mean, std, want_mean, want_std)
    f = resolve_ground_truth(ground_truth)
    y = np.asarray(f(cols), dtype=float)
    if noise_std > 0:
        y = y + noise_std * stream.spawn(len(features)).normal(n)
    X = np.column_stack([cols[c] for c in features])
    return Dataset(tuple(features), X, y, target)


def _guess_target(stats: StatsTable) -> str:
    for t in TARGETS.values():
        if t in stats.columns:
            return t
    return "y"


def reference_dataset(n: int = 1000, seed: int = 0, noise_frac: float = 0.05,
                      table: str = "table1", ground_truth=cs_reference) -> Dataset:
    """Synthetic CS-like data with noise std = ``noise_frac`` * std of the clean response."""
    stats = StatsTable.published(table)
    clean = synthesize(stats, ground_truth, 0.0, n, seed, target=TARGETS[table])
    noise_std = noise_frac * float(np.std(clean.y))
    return synthesize(stats, ground_truth, noise_std, n, seed, target=TARGETS[table])
