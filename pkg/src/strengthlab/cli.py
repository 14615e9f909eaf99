"""Command-line front end: ``strengthlab <command> [options]``.

Every command writes its outputs and a ``manifest.json`` (command, config,
seed and sha256 of each produced file) into ``--out``.  Exit status is 0 on
success, 1 on a runtime error and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import os
import re
import sys
import tempfile
from pathlib import Path

import numpy as np

from .dataset import StatsTable, load_csv, pearson_matrix, reference_dataset, split, summarize
from .errors import StrengthLabError
from .evaluation import (compare_uncertainty, evaluate, uncertainty, within_band, write_metrics_csv,
                         write_ranking_csv)
from .explain import dependence, explain, global_importance, waterfall, write_dependence_csv
from .hybrid import (KINDS, HybridModel, HybridSpec, PredictionPoint, default_spec, evaluate_hybrid, fit_hybrid,
                     preset_spec)
from .presets import PRESETS, TARGETS
from .rng import Stream
from .tuning import default_space, random_search, write_trial_log

COMMANDS = ("describe", "train", "evaluate", "tune", "explain", "uncertainty", "synth")


class Outputs:
    """Collects files written atomically into one directory, for the manifest."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.files = {}

    def write_text(self, name: str, text: str) -> Path:
        data = text.encode("utf-8")
        path = self.root / name
        fd, tmp = tempfile.mkstemp(dir=self.root, prefix=".tmp-", suffix="-" + name)
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        self.files[name] = hashlib.sha256(data).hexdigest()
        return path

    def write_with(self, name: str, writer) -> Path:
        buf = io.StringIO()
        writer(buf)
        return self.write_text(name, buf.getvalue())

    def write_json(self, name: str, obj) -> Path:
        return self.write_text(name, json.dumps(obj, indent=1, sort_keys=True) + "\n")

    def manifest(self, command: str, config: dict, seed) -> None:
        body = {"command": command, "config": config, "seed": seed,
                "files": [{"name": k, "sha256": v} for k, v in sorted(self.files.items())]}
        self.write_text("manifest.json", json.dumps(body, indent=1, sort_keys=True) + "\n")


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", name)


def _load_spec(args) -> HybridSpec:
    if args.params:
        with open(args.params, encoding="utf-8") as fh:
            spec = HybridSpec.from_dict(json.load(fh))
    elif args.preset:
        spec = preset_spec(args.preset)
    else:
        spec = default_spec(args.kind)
    if args.kind and spec.kind != args.kind:
        raise StrengthLabError(f"--kind {args.kind} does not match the {spec.kind} configuration")
    return spec if args.seed is None else spec.with_seed(args.seed)


def _load_model(path) -> HybridModel:
    with open(path, encoding="utf-8") as fh:
        return HybridModel.from_dict(json.load(fh))


def _predictions_writer(points):
    def write(fh):
        fh.write("split,index,actual,predicted,within_band\n")
        for p in points:
            fh.write(f"{p.split},{p.index},{p.actual!r},{p.predicted!r},{int(p.within_band)}\n")
    return write


# ---------------------------------------------------------------------------
# commands


def cmd_describe(args, out: Outputs):
    ds = load_csv(args.input, target=args.target)
    stats = summarize(ds)
    out.write_with("stats.csv", stats.write_csv)
    corr = pearson_matrix(ds)
    out.write_with("corr.csv", corr.write_csv)
    if args.compare:
        published = StatsTable.published(args.compare)
        out.write_with("published_stats.csv", published.write_csv)
    return None


def cmd_synth(args, out: Outputs):
    seed = 0 if args.seed is None else args.seed
    ds = reference_dataset(args.n, seed=seed, noise_frac=args.noise, table=args.table)
    buf = io.StringIO()
    names = [*ds.feature_names, ds.target_name]
    buf.write(",".join(names) + "\n")
    for row, t in zip(ds.X, ds.y):
        buf.write(",".join(repr(float(v)) for v in (*row, t)) + "\n")
    out.write_text(args.name, buf.getvalue())
    return seed


def cmd_train(args, out: Outputs):
    spec = _load_spec(args)
    ds = load_csv(args.input, target=args.target)
    sp = split(ds, args.split, spec.seed)
    model = fit_hybrid(ds.subset(list(sp.train)), spec)
    ev = evaluate_hybrid(model, ds, sp)
    out.write_json("model.json", model.to_dict())
    out.write_json("split.json", sp.to_dict())
    out.write_with("metrics_train.csv", lambda fh: write_metrics_csv(fh, [ev.train]))
    out.write_with("metrics_test.csv", lambda fh: write_metrics_csv(fh, [ev.test]))
    out.write_with("predictions.csv", _predictions_writer(ev.points))
    return spec.seed


def cmd_evaluate(args, out: Outputs):
    model = _load_model(args.model)
    ds = load_csv(args.input, schema=model.feature_names, target=args.target or model.target_name)
    yhat = model.predict(ds.X)
    report = evaluate(ds.y, yhat, strict=False)
    out.write_with("metrics.csv", lambda fh: write_metrics_csv(fh, [report]))
    flags = within_band(ds.y, yhat)
    pts = [PredictionPoint("all", i, float(a), float(p), bool(b))
           for i, (a, p, b) in enumerate(zip(ds.y, yhat, flags))]
    out.write_with("predictions.csv", _predictions_writer(pts))
    return None


def cmd_tune(args, out: Outputs):
    spec = _load_spec(args)
    ds = load_csv(args.input, target=args.target)
    trials = []

    def log(trial):
        trials.append(trial)
        if args.verbose:
            mean = "failed" if trial.cv is None else f"{trial.cv.mean:.6g}"
            print(f"trial {trial.draw_index}: {mean}", file=sys.stderr)

    try:
        result = random_search(ds, spec.kind, default_space(spec.kind), args.budget, args.k,
                               spec.seed, base_spec=spec, on_trial=log)
    finally:
        out.write_with("trials.jsonl", lambda fh: write_trial_log(fh, trials))
    out.write_json("best_spec.json", result.best_spec.to_dict())
    return spec.seed


def cmd_explain(args, out: Outputs):
    model = _load_model(args.model)
    ds = load_csv(args.input, schema=model.feature_names, target=args.target or model.target_name)
    seed = 0 if args.seed is None else args.seed
    rows = np.arange(ds.n)
    if args.max_rows and ds.n > args.max_rows:
        rows = np.sort(Stream(seed).choice(ds.n, args.max_rows))
    background = None
    if args.mode == "interventional":
        nb = min(ds.n, args.background)
        background = ds.X[np.sort(Stream(seed).spawn(1).choice(ds.n, nb))]
    shap = explain(model, ds.X[rows], ds.feature_names, rows.tolist(), args.mode, background)
    ranking = global_importance(shap)
    out.write_with("importance.csv", ranking.write_csv)
    out.write_with("shap_long.csv", shap.write_long_csv)
    out.write_json("waterfall.json", [waterfall(shap, i) for i in range(min(args.waterfalls, len(rows)))])
    use_ds = ds if model.feature_space == "raw" else None
    for feat in ranking.top(args.top):
        pairs = dependence(shap, use_ds, feat)
        out.write_with(f"dependence_{_safe(feat)}.csv", lambda fh: write_dependence_csv(fh, feat, pairs))
    return seed


def cmd_uncertainty(args, out: Outputs):
    reports = {}
    for path in args.models:
        model = _load_model(path)
        ds = load_csv(args.input, schema=model.feature_names, target=args.target or model.target_name)
        sp = split(ds, args.split, model.spec.seed if args.seed is None else args.seed)
        name = model.kind if model.kind not in reports else f"{model.kind}:{Path(path).stem}"
        rep = {}
        for part, idx in (("train", sp.train), ("test", sp.test)):
            idx = list(idx)
            rep[part] = uncertainty(ds.y[idx], model.predict(ds.X[idx]), z=args.z, strict=False)
        reports[name] = rep
    out.write_with("uncertainty.csv", lambda fh: write_ranking_csv(fh, compare_uncertainty(reports)))
    return args.seed


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="strengthlab",
                                description="Hybrid tree/attention regressors for concrete strength data.")
    sub = p.add_subparsers(dest="command", metavar="command")
    sub.required = True

    def common(sp, data=True, target=True):
        if data:
            sp.add_argument("--input", required=True, help="CSV with a header row")
        if target:
            sp.add_argument("--target", default=None, help="target column (default CS, or the model's)")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default="out", help="output directory (default: out)")

    def spec_args(sp):
        sp.add_argument("--kind", choices=KINDS)
        sp.add_argument("--preset", choices=sorted(PRESETS))
        sp.add_argument("--params", help="JSON file with a full hybrid configuration")

    d = sub.add_parser("describe", help="descriptive statistics and correlation matrix")
    common(d)
    d.add_argument("--compare", choices=sorted(TARGETS), help="also write a published marginal table")

    t = sub.add_parser("train", help="fit a hybrid and report train/test metrics")
    common(t)
    spec_args(t)
    t.add_argument("--split", type=float, default=0.8, help="training fraction (default 0.8)")

    e = sub.add_parser("evaluate", help="score a saved model on a dataset")
    common(e)
    e.add_argument("--model", required=True)

    tu = sub.add_parser("tune", help="random search with k-fold cross-validation")
    common(tu)
    spec_args(tu)
    tu.add_argument("--budget", type=int, default=10)
    tu.add_argument("--k", type=int, default=5)
    tu.add_argument("--verbose", action="store_true")

    x = sub.add_parser("explain", help="SHAP importance, long-format values and dependence data")
    common(x)
    x.add_argument("--model", required=True)
    x.add_argument("--top", type=int, default=3, help="dependence files for the top features")
    x.add_argument("--mode", choices=("path", "interventional"), default="path")
    x.add_argument("--background", type=int, default=100, help="background rows (interventional)")
    x.add_argument("--max-rows", type=int, default=0, help="explain a seeded sample of rows (0 = all)")
    x.add_argument("--waterfalls", type=int, default=5, help="per-sample breakdowns to export")

    u = sub.add_parser("uncertainty", help="rank saved models by normalised test uncertainty")
    common(u)
    u.add_argument("--models", nargs="+", required=True)
    u.add_argument("--split", type=float, default=0.8)
    u.add_argument("--z", type=float, default=1.96)

    s = sub.add_parser("synth", help="write a synthetic dataset from published marginals")
    common(s, data=False, target=False)
    s.add_argument("--table", choices=sorted(TARGETS), default="table1")
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--noise", type=float, default=0.05, help="noise std as a fraction of the response std")
    s.add_argument("--name", default="synth.csv", help="output file name")
    return p


HANDLERS = {"describe": cmd_describe, "train": cmd_train, "evaluate": cmd_evaluate, "tune": cmd_tune,
            "explain": cmd_explain, "uncertainty": cmd_uncertainty, "synth": cmd_synth}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "target", "unset") is None and args.command in ("describe", "train", "tune"):
        args.target = "CS"
    if args.command in ("train", "tune") and not (args.kind or args.preset or args.params):
        parser.print_usage(sys.stderr)
        print(f"strengthlab {args.command}: error: one of --kind, --preset or --params is required",
              file=sys.stderr)
        return 2
    try:
        out = Outputs(args.out)
        seed = HANDLERS[args.command](args, out)
        config = {k: v for k, v in sorted(vars(args).items()) if k not in ("command", "verbose", "out")}
        out.manifest(args.command, config, seed if seed is not None else args.seed)
    except (StrengthLabError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"strengthlab {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
