"""Published marginal statistics and hyperparameter configurations.

The marginal tables are the per-column (mean, std, min, p25, p50, p75, max)
rows of the compressive, flexural and tensile strength datasets.  The
hyperparameter presets are the tuned configurations of the three hybrids.
"""

_STAT_ORDER = ("mean", "std", "min", "p25", "p50", "p75", "max")

_CS_ROWS = {
    "C": (453.18, 125.99, 180, 405, 450, 500, 980),
    "Sfu": (21.32, 29.61, 0, 0, 0, 48, 120),
    "Fagg": (646.09, 266.32, 0, 617.75, 712, 778.75, 1250),
    "CSA": (849.82, 291.72, 0, 800, 898, 1080, 1200),
    "RS": (676.71, 216.91, 0, 628, 724, 800, 980),
    "SP": (6.18, 6.67, 0, 0.93, 4.2, 9.9, 35),
    "FA": (18.73, 41.74, 0, 0, 0, 0, 135),
    "W": (184.01, 182.36, 125, 156, 172, 186, 805),
    "W/B": (0.36, 0.07, 0.14, 0.3, 0.35, 0.42, 0.55),
    "SF": (0.73, 1.45, 0, 0, 0, 0.9, 14.18),
    "AR1": (37.84, 44.26, 0, 0, 40, 64, 250),
    "PPF": (0.45, 0.76, 0, 0, 0.15, 0.57, 4),
    "AR2": (8.43, 12.35, 0, 3.5, 6, 8.33, 60),
    "HT": (16.01, 9.18, 0, 20, 20, 23, 23),
    "Cage": (26.21, 19.56, 1, 7, 28, 28, 91),
    "Swidth": (11.79, 3.08, 0, 10, 10, 15, 30),
    "Slength": (11.79, 3.08, 0, 10, 10, 15, 30),
    "Sheight": (11.79, 3.08, 0, 10, 10, 15, 30),
    "CS": (55.31, 45.82, 18.39, 38, 53.38, 70.8, 138.75),
}

_FS_ROWS = {
    "C": (468.28, 134.92, 200, 420, 450, 500, 980),
    "Sfu": (16.09, 26.07, 0, 0, 0, 40, 120),
    "Fagg": (635.47, 290.61, 0, 617, 712, 823, 1250),
    "CSA": (918.89, 389.03, 0, 800, 939, 1110, 1200),
    "RS": (703.98, 214.21, 0, 628, 729, 823, 980),
    "SP": (6.83, 6.36, 0, 2, 5.16, 12.5, 18.68),
    "FA": (19.37, 40.53, 0, 2, 0, 0, 140),
    "W": (178.03, 42.65, 125, 158, 175, 186, 372.4),
    "W/B": (0.36, 0.07, 0.25, 0.3, 0.35, 0.43, 0.55),
    "SF": (0.92, 1.70, 0, 0, 0, 1, 14.18),
    "AR1": (40.67, 49.99, 0, 0, 42, 64, 250),
    "PPF": (0.66, 0.94, 0, 0, 0.38, 0.75, 4),
    "AR2": (5.59, 5.81, 0, 0.55, 4, 8.3, 24.19),
    "HT": (18.08, 7.74, 0, 20, 20, 23, 23),
    "Cage": (24.72, 16.89, 1, 7, 28, 28, 91),
    "Swidth": (9.12, 3.84, 0, 8, 10, 10, 15),
    "Slength": (40.01, 16.11, 0, 40, 40, 50, 72),
    "Sheight": (9.37, 3.79, 0, 10, 10, 10, 15),
    "FS": (9.48, 14.73, 1, 5.03, 6.5, 9.24, 14.9),
}

_TS_ROWS = {
    "C": (431.19, 122.03, 180, 417, 446, 468, 800),
    "Sfu": (12.13, 20.39, 0, 0, 0, 26, 65),
    "Fagg": (700.40, 143.11, 0, 620, 712, 823, 960),
    "CSA": (868.22, 253.13, 0, 758.88, 875, 1080, 1200),
    "RS": (693.87, 150.99, 0, 620, 712, 823, 980),
    "SP": (5.27, 6.13, 0, 0, 4.2, 5.48, 18.68),
    "FA": (27.42, 52.33, 0, 0, 0, 0, 140),
    "W": (181.42, 19.64, 156, 163.8, 177.1, 198, 242),
    "W/B": (0.39, 0.07, 0.25, 0.34, 0.4, 0.45, 0.48),
    "SF": (0.73, 1.27, 0, 0, 0, 1, 6.1),
    "AR1": (41.20, 32.78, 0, 0, 46.67, 80, 80),
    "PPF": (0.67, 1.00, 0, 0, 0.25, 0.9, 4),
    "AR2": (5.27, 4.53, 0, 3.29, 5.31, 6, 24.19),
    "HT": (16.63, 8.57, 0, 20, 20, 22, 23),
    "Cage": (24.83, 16.49, 1, 14, 28, 28, 91),
    "Sdiameter": (7.89, 5.74, 0, 0, 10, 10, 15),
    "Sheight": (16.28, 11.86, 0, 0, 20, 30, 30),
    "TS": (4.99, 8.69, 0.39, 2.7, 3.74, 4.94, 9.2),
}

# The FS table prints p25 = 2 above p50 = 0 for fly ash; the quartile
# anchors are forced monotone when fitting a generator (see dataset.synthesize).

MARGINALS = {"table1": _CS_ROWS, "table2": _FS_ROWS, "table3": _TS_ROWS}
TARGETS = {"table1": "CS", "table2": "FS", "table3": "TS"}


def marginal_rows(name):
    """Return ``{column: {stat: value}}`` for one of table1/table2/table3."""
    try:
        rows = MARGINALS[name]
    except KeyError:
        raise KeyError(f"unknown marginal table {name!r}; expected one of {sorted(MARGINALS)}") from None
    return {col: dict(zip(_STAT_ORDER, map(float, vals))) for col, vals in rows.items()}


TABLE4_ET_XGB = {
    "kind": "et_xgb",
    "seed": 100,
    "stage1": {
        "n_estimators": 500,
        "min_samples_split": 2,
        "min_samples_leaf": 1,
        "max_depth": None,
        "split_mode": "random_threshold",
        "bootstrap": False,
        "feature_subsample": 1.0,
        "seed": 100,
    },
    "stage2": {
        "n_estimators": 500,
        "learning_rate": 0.005,
        "max_depth": 5,
        "min_child_weight": 10.0,
        "reg_alpha": 5.0,
        "reg_lambda": 10.0,
        "gamma": 1.0,
        "subsample": 0.4,
        "colsample_bytree": 0.4,
        "mode": "exact",
        "seed": 100,
    },
}

TABLE6_RF_LGBM = {
    "kind": "rf_lgbm",
    "seed": 42,
    "stage1": {
        "n_estimators": 50,
        "min_samples_split": 2,
        "min_samples_leaf": 1,
        "max_depth": None,
        "split_mode": "exact",
        "bootstrap": True,
        "feature_subsample": 1.0,
        "seed": 42,
    },
    "stage2": {
        "n_estimators": 50,
        "learning_rate": 0.005,
        "max_depth": 3,
        "min_child_weight": 10.0,
        "reg_alpha": 5.0,
        "reg_lambda": 5.0,
        "gamma": 0.0,
        "subsample": 1.0,
        "colsample_bytree": 1.0,
        "mode": "histogram",
        "seed": 42,
    },
}

TABLE8_TRANSFORMER_XGB = {
    "kind": "transformer_xgb",
    "seed": 42,
    "stage1": {
        "n_layers": 2,
        "n_heads": 4,
        "d_model": 128,
        "dropout": 0.1,
        "learning_rate": 0.001,
        "batch_size": 32,
        "max_epochs": 100,
        "early_stop_patience": 10,
        "val_fraction": 0.1,
        "seed": 42,
    },
    "stage2": {
        "n_estimators": 500,
        "learning_rate": 0.01,
        "max_depth": 10,
        "min_child_weight": 1.0,
        "reg_alpha": 1.0,
        "reg_lambda": 1.0,
        "gamma": 0.0,
        "subsample": 0.8,
        "colsample_bytree": 0.8,
        "mode": "exact",
        "seed": 42,
    },
}

PRESETS = {
    "table4": TABLE4_ET_XGB,
    "table6": TABLE6_RF_LGBM,
    "table8": TABLE8_TRANSFORMER_XGB,
}
DEFAULT_PRESET = {"et_xgb": "table4", "rf_lgbm": "table6", "transformer_xgb": "table8"}
