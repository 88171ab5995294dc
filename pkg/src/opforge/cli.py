"""Command-line front end: generate, train, evaluate, hypersearch, sensitivity.

Artifacts written by a command depend only on its inputs and seed. Wall-clock
timings and timestamps go to ``manifest.json`` in the output directory, which
is run metadata rather than an artifact.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, fields
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .campaign import (
    CampaignConfig, ConfigError, derive_seed, default_workers, generate_dataset, load_dataset,
    save_dataset,
)
from .models import CONFIG_TYPES, KINDS, RomModel, load_model, save_model
from .sensitivity import interaction_check, rom_sobol, save_sobol
from .training import (
    TrainConfig, default_model_config, default_train_config, evaluate, grid_search,
    loss_curve_rows, predict_series, hyper_groups, train, write_jsonl,
)

log = logging.getLogger("opforge")


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True, allow_nan=False)
        fh.write("\n")


class Manifest:
    """``manifest.json``: one entry per stage with its artifacts and timings."""

    def __init__(self, out_dir, stage, args):
        self.path = Path(out_dir) / "manifest.json"
        self.stage = stage
        self.entry = {
            "config": getattr(args, "config", None),
            "seed": args.seed,
            "out": str(out_dir),
            "version": __version__,
            "started": datetime.now(timezone.utc).isoformat(),
            "artifacts": [],
            "timings": {},
        }

    def add(self, path):
        path = str(path)
        if path not in self.entry["artifacts"]:
            self.entry["artifacts"].append(path)
        return path

    def write(self):
        doc = {"stages": {}}
        if self.path.exists():
            try:
                doc = json.loads(self.path.read_text(encoding="utf-8"))
            except json.JSONDecodeError:
                pass
        self.entry["finished"] = datetime.now(timezone.utc).isoformat()
        doc.setdefault("stages", {})[self.stage] = self.entry
        _write_json(self.path, doc)


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _flat_yaml(path):
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a flat key: value mapping")
    return data


def _training_setup(kind, target, args):
    """Model and training configs from defaults, overridden by a flat YAML file."""
    model_kw = asdict(default_model_config(kind, target))
    train_cfg = default_train_config(kind, target, seed=derive_seed(args.seed, f"train-{kind}"))
    train_kw = asdict(train_cfg)
    model_keys = {f.name for f in fields(CONFIG_TYPES[kind])}
    train_keys = {f.name for f in fields(TrainConfig)} - {"seed"}
    for key, value in _flat_yaml(args.config).items():
        if key in model_keys:
            model_kw[key] = value
        elif key in train_keys:
            train_kw[key] = value
        else:
            raise ConfigError(f"unknown {kind} training key {key!r}")
    if getattr(args, "epochs", None):
        train_kw["epochs"] = args.epochs
    try:
        return CONFIG_TYPES[kind](**model_kw), TrainConfig(**train_kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _print_report(report):
    for name, q in report.qois.items():
        print(f"{report.kind} {report.target} {name}: rmse={q.rmse:.6g} r2={q.r2:.6f} "
              f"median_rel_err={q.summary.median:.4g}%")


# -- commands --------------------------------------------------------------------

def cmd_generate(args):
    cfg = CampaignConfig.from_file(args.config) if args.config else CampaignConfig()
    if args.n_samples is not None:
        if args.n_samples < 1:
            raise UsageError("n_samples must be >= 1")
        cfg.n_samples = args.n_samples
    if args.seed is not None:
        cfg.seed = args.seed
    args.seed = cfg.seed
    out = _out_dir(args)
    manifest = Manifest(out, "generate", args)
    workers = args.workers or default_workers()
    start = time.perf_counter()
    ds = generate_dataset(cfg, workers)
    manifest.entry["timings"]["campaign_s"] = time.perf_counter() - start
    path = out / "dataset.jsonl"
    save_dataset(ds, path)
    manifest.add(path)
    manifest.write()
    print(f"samples={cfg.n_samples} retained={len(ds)} removed={ds.removed} "
          f"split={len(ds.split['train'])}/{len(ds.split['val'])}/{len(ds.split['test'])}")
    print(f"dataset: {path}")
    return 0


def cmd_train(args):
    kind, target = args.model_kind, args.target
    ds = load_dataset(args.dataset)
    model_cfg, train_cfg = _training_setup(kind, target, args)
    fit_target = "scalar" if kind == "dnn" else "series"
    if kind == "dnn" and target == "series":
        raise UsageError("the DNN surrogate only supports --target scalar")
    out = _out_dir(args)
    manifest = Manifest(out, f"train:{kind}:{target}", args)
    model = RomModel.initialize(kind, model_cfg, seed=derive_seed(args.seed, f"init-{kind}"),
                                target=fit_target)
    result = train(model, ds, train_cfg)
    manifest.entry["timings"]["training_time_s"] = result.training_time_s
    stem = f"{kind}_{target}"

    model_path = out / f"{stem}.model.json"
    save_model(result.model, model_path)
    manifest.add(model_path)
    curves = out / f"{stem}.loss.jsonl"
    write_jsonl(curves, loss_curve_rows(result))
    manifest.add(curves)

    report = evaluate(result.model, ds, "test", target, result.training_time_s)
    report_path = out / f"{stem}.report.json"
    _write_json(report_path, report.to_json())
    manifest.add(report_path)
    if fit_target == "series":
        pred = predict_series(result.model, ds.inputs("test"))
        truth = ds.series_targets("test")
        rows = [{"index": int(idx), "time": ds.records[idx].time_grid.tolist(),
                 "pred_v_bead": p[:, 0].tolist(), "pred_t_mp": p[:, 1].tolist(),
                 "true_v_bead": t[:, 0].tolist(), "true_t_mp": t[:, 1].tolist()}
                for idx, p, t in zip(ds.split["test"], pred, truth)]
        pred_path = out / f"{stem}.predictions.jsonl"
        write_jsonl(pred_path, rows)
        manifest.add(pred_path)
    manifest.write()
    _print_report(report)
    print(f"training_time_s={result.training_time_s:.1f} best_epoch={result.best_epoch}")
    print(f"model: {model_path}")
    return 0


def cmd_evaluate(args):
    ds = load_dataset(args.dataset)
    model = load_model(args.model)
    if model.kind == "dnn" and args.target == "series":
        raise UsageError("the DNN surrogate only supports --target scalar")
    out = _out_dir(args)
    manifest = Manifest(out, f"evaluate:{model.kind}:{args.target}", args)
    report = evaluate(model, ds, args.split, args.target)
    path = out / f"{model.kind}_{args.target}.{args.split}.report.json"
    _write_json(path, report.to_json())
    manifest.add(path)
    manifest.write()
    _print_report(report)
    return 0


def cmd_hypersearch(args):
    kind = args.model_kind
    ds = load_dataset(args.dataset)
    groups = hyper_groups()
    chosen = [int(g) for g in args.groups.split(",")] if args.groups else range(1, 7)
    for g in chosen:
        if not 1 <= g <= len(groups):
            raise UsageError(f"group {g} outside 1..{len(groups)}")
    _, train_cfg = _training_setup(kind, "scalar", args)
    out = _out_dir(args)
    manifest = Manifest(out, f"hypersearch:{kind}", args)
    configs = [groups[g - 1][kind] for g in chosen]
    start = time.perf_counter()
    ranked = grid_search(kind, ds, configs, train_cfg)
    manifest.entry["timings"]["search_s"] = time.perf_counter() - start
    rows = []
    for entry in ranked:
        score = entry.val_rmse if np.isfinite(entry.val_rmse) else None
        row = {"rank": entry.rank, "config": entry.config, "val_rmse_scaled": score,
               "error": entry.error}
        if entry.report is not None:
            row["test_rmse"] = {k: q.rmse for k, q in entry.report.qois.items()}
            row["test_r2"] = {k: q.r2 for k, q in entry.report.qois.items()}
        rows.append(row)
        print(json.dumps(row, separators=(",", ":")))
    path = out / f"hypersearch_{kind}.jsonl"
    write_jsonl(path, rows)
    manifest.add(path)
    manifest.write()
    return 0


def cmd_sensitivity(args):
    model = load_model(args.model)
    out = _out_dir(args)
    manifest = Manifest(out, f"sensitivity:{model.kind}", args)
    start = time.perf_counter()
    result = rom_sobol(model, args.n_base, derive_seed(args.seed, "sobol"))
    manifest.entry["timings"]["sobol_s"] = time.perf_counter() - start
    summary = interaction_check(result)
    path = out / f"sobol_{model.kind}.jsonl"
    save_sobol(result, path, {"model_kind": model.kind, "total_sum": summary.total_sum})
    manifest.add(path)
    manifest.write()
    for qoi, total in summary.total_sum.items():
        label = "negligible interactions" if summary.negligible[qoi] else "interacting"
        print(f"{model.kind} {qoi}: sum(ST)={total:.4f} ({label}), top input {result.top_input(qoi)}")
    return 0


# -- parser ----------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="opforge", description="Operator-learning surrogates for a DED thermal model.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="run the LHS simulation campaign and write the dataset")
    g.add_argument("--config")
    g.add_argument("--n-samples", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.add_argument("--workers", type=int, help="campaign processes (default: $OPFORGE_WORKERS or 1)")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train one surrogate and report test accuracy")
    t.add_argument("--dataset", required=True)
    t.add_argument("--model-kind", choices=KINDS, required=True)
    t.add_argument("--target", choices=("scalar", "series"), default="scalar")
    t.add_argument("--config")
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score a saved model on a dataset split")
    e.add_argument("--dataset", required=True)
    e.add_argument("--model", required=True)
    e.add_argument("--target", choices=("scalar", "series"), default="scalar")
    e.add_argument("--split", choices=("train", "val", "test"), default="test")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)

    h = sub.add_parser("hypersearch", help="grid search over the six hyperparameter groups")
    h.add_argument("--dataset", required=True)
    h.add_argument("--model-kind", choices=KINDS, required=True)
    h.add_argument("--groups", help="comma-separated group numbers, default all six")
    h.add_argument("--config")
    h.add_argument("--epochs", type=int)
    h.add_argument("--seed", type=int, default=0)
    h.add_argument("--out", required=True)
    h.set_defaults(func=cmd_hypersearch)

    s = sub.add_parser("sensitivity", help="Sobol indices of a trained surrogate")
    s.add_argument("--model", required=True)
    s.add_argument("--n-base", type=int, default=1024)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sensitivity)
    return p


def _fail(kind, message, code):
    print(json.dumps({"error": kind, "message": " ".join(str(message).split())}), file=sys.stderr)
    return code


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail("usage", exc, 2)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        return _fail("usage", exc, 2)
    except FileNotFoundError as exc:
        return _fail("missing_file", exc, 1)
    except Exception as exc:  # noqa: BLE001 - every failure becomes one parsable line
        return _fail(type(exc).__name__, exc, 1)


if __name__ == "__main__":
    sys.exit(main())
