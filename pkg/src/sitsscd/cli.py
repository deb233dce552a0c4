"""Command-line entry point: ``sitsscd <command>``.

Commands: synth, split, train, eval, report, selftest. Flags override the
INI file given with ``--config``, which overrides module defaults.

Exit codes: 0 success, 2 usage, 3 data or format problem, 4 numeric
failure, 5 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from contextlib import nullcontext
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .data import (
    FoldPlan,
    changed_fraction,
    class_distribution,
    dataset_hash,
    load_dataset,
    make_plan,
    materialize,
    save_sample,
    synth_generate,
)
from .errors import ConfigError, NumericError, SitsError
from .inference import SplitScheme, infer, make_scheme, predict_labels, table2_schemes
from .metrics import LabelSeries, MetricsReport, ScdConfusion, csv_rows, mean_report
from .model import ModelConfig, TemporalAttentionUNet, count_parameters, load_model, save_checkpoint
from .training import random_baseline, train

log = logging.getLogger("sitsscd")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4, 5


class UsageError(SitsError):
    pass


def _thread_limit():
    threads = os.environ.get("SCD_THREADS")
    if not threads:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(threads))


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    for item in args.set or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise UsageError(f"--set expects section.key=value, got {item!r}")
        lhs, value = item.split("=", 1)
        section, key = lhs.split(".", 1)
        cfg.set(section.strip(), key.strip(), value)
    # dedicated flags have the last word
    for section, key, attr in _FLAG_MAP:
        value = getattr(args, attr, None)
        if value is not None:
            cfg.set(section, key, value if not isinstance(value, (int, float)) else str(value))
    return cfg


_FLAG_MAP = (
    ("data", "seed", "seed"),
    ("data", "n_aoi", "n_aoi"),
    ("data", "change_rate", "change_rate"),
    ("data", "setting", "setting"),
    ("data", "split_day", "split_day"),
    ("model", "variant", "variant"),
    ("model", "feature_size", "feature_size"),
    ("train", "max_iters", "max_iters"),
    ("train", "seed", "train_seed"),
    ("infer", "scheme", "scheme"),
    ("infer", "group_len", "group_len"),
    ("eval", "baseline", "baseline"),
)


# ------------------------------------------------------------------ synth

def cmd_synth(cfg: ExperimentConfig, out_dir) -> dict:
    """Generate the synthetic world into ``out_dir`` and write ``manifest.json``."""
    world = cfg.synth_config()
    samples = synth_generate(world)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for s in samples:
        save_sample(out, s)
    manifest = {
        "aoi_ids": [s.aoi_id for s in samples],
        "seed": world.seed,
        "n_classes": world.n_classes,
        "config": world.to_dict(),
        "config_hash": cfg.digest(),
        "dataset_hash": dataset_hash(samples),
        "changed_fraction": round(changed_fraction(samples), 8),
    }
    _write(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _manifest(data_dir) -> dict:
    path = Path(data_dir) / "manifest.json"
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise SitsError(f"{path}: {exc}") from exc


def _n_classes(data_dir, samples) -> int:
    try:
        return int(_manifest(data_dir)["n_classes"])
    except (FileNotFoundError, KeyError):
        return int(max(s.labels.max() for s in samples)) + 1


# ------------------------------------------------------------------ split

def cmd_split(cfg: ExperimentConfig, data_dir, setting: Optional[str] = None) -> FoldPlan:
    setting = setting or cfg.get("data", "setting")
    manifest = _manifest(data_dir)
    ids = manifest["aoi_ids"]
    if setting == "temporal":
        samples = load_dataset(data_dir)
        plan = make_plan(setting, ids, split_day=cfg.get("data", "split_day"), days=samples[0].days)
    elif setting == "spatial":
        samples = load_dataset(data_dir)
        k = _n_classes(data_dir, samples)
        hist = {s.aoi_id: class_distribution([s], k) for s in samples}
        plan = make_plan(setting, ids, balance_by=hist)
    elif setting == "no_shift":
        plan = make_plan(setting, ids)
    else:
        raise UsageError(f"unknown setting {setting!r}; expected no_shift, temporal or spatial")
    return plan


def _fold(plan: FoldPlan, name: str):
    for f in plan.folds:
        if f.name == name:
            return f
    raise UsageError(f"fold {name!r} not in plan (have {[f.name for f in plan.folds]})")


def _fold_names(plan: FoldPlan, spec: str) -> list[str]:
    if spec == "all":
        return [f.name for f in plan.folds]
    return [s.strip() for s in spec.split(",") if s.strip()]


def _read_plan(path) -> FoldPlan:
    return FoldPlan.from_dict(json.loads(Path(path).read_text()))


# ------------------------------------------------------------------ train

def _resolve_model_config(cfg: ExperimentConfig, samples, n_classes: int) -> ModelConfig:
    """Model config with channel and class counts taken from the data unless set explicitly."""
    channels = samples[0].images.shape[1]
    set_keys = cfg.values["model"]
    if set_keys.get("in_channels", channels) != channels:
        raise ConfigError(f"[model] in_channels={set_keys['in_channels']} but the data has {channels} bands")
    derived = {"in_channels": channels}
    if "n_classes" not in set_keys:
        derived["n_classes"] = n_classes
    return cfg.model_config(**derived)


def cmd_train(cfg: ExperimentConfig, data_dir, plan_path, fold_name: str, out_dir) -> dict:
    """Train one fold; writes ``checkpoint.scdw``, ``train_log.jsonl`` and ``run.json``."""
    samples = load_dataset(data_dir)
    plan = _read_plan(plan_path)
    fold = _fold(plan, fold_name)
    train_units = materialize(fold.train, samples)
    val_units = materialize(fold.val, samples)
    model_cfg = _resolve_model_config(cfg, samples, _n_classes(data_dir, samples))
    train_cfg = cfg.train_config()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = TemporalAttentionUNet(model_cfg)
    log_path = out / "train_log.jsonl"
    with open(log_path, "w", encoding="utf-8") as fh:
        def sink(record):
            fh.write(json.dumps(record, sort_keys=True) + "\n")
            fh.flush()

        try:
            result = train(model, train_units, val_units, train_cfg, log_callback=sink)
        except NumericError as err:
            save_checkpoint(out / "last_good.scdw", model_cfg, err.state)
            raise
    save_checkpoint(out / "checkpoint.scdw", model_cfg, result.params)
    run = {
        "setting": plan.setting,
        "fold": fold.name,
        "model": model_cfg.to_dict(),
        "train": train_cfg.to_dict(),
        "n_parameters": count_parameters(model_cfg),
        "best_iter": result.best_iter,
        "best_val_scs": result.best_val_scs,
    }
    _write(out / "run.json", json.dumps(run, indent=2, sort_keys=True) + "\n")
    return run


def _train_job(job):
    cfg_text, data_dir, plan_path, fold_name, out_dir = job
    with _thread_limit():
        return cmd_train(ExperimentConfig.from_string(cfg_text), data_dir, plan_path, fold_name, out_dir)


# ------------------------------------------------------------------ eval

def _scheme(cfg: ExperimentConfig, n_dates: int) -> tuple[str, SplitScheme]:
    name = cfg.get("infer", "scheme")
    glen = cfg.get("infer", "group_len")
    if name == "full":
        return "full", make_scheme(n_dates, n_dates, "contiguous")
    if name in ("contiguous", "strided"):
        if glen is None:
            raise UsageError(f"scheme {name} needs group_len")
        return f"{name}{glen}", make_scheme(n_dates, glen, name)
    path = Path(name)
    if path.exists():
        return path.stem, SplitScheme.from_json(path.read_text())
    raise UsageError(f"scheme must be full, contiguous, strided or a JSON file; got {name!r}")


def _oracle_logits(sample, n_classes: int) -> np.ndarray:
    return np.moveaxis(np.eye(n_classes, dtype=np.float32)[sample.labels], -1, 1)


def _confusion(sample, pred_logits: Optional[np.ndarray], labels: Optional[np.ndarray],
               n_classes: int, anchor: str) -> ScdConfusion:
    if labels is None:
        labels = predict_labels(pred_logits).labels
    pred = LabelSeries(labels, sample.ignore)
    return ScdConfusion.from_series(pred, sample.series, n_classes, anchor)


def _eval_fold(cfg, samples, fold, model, n_classes, schemes, seed) -> dict:
    anchor = cfg.get("eval", "anchor")
    aggregation = cfg.get("eval", "aggregation")
    baseline = cfg.get("eval", "baseline")
    tile = cfg.get("infer", "tile")
    test = materialize(fold.test, samples)
    reports = {}
    for name, scheme in schemes:
        total = ScdConfusion(n_classes)
        rng = np.random.default_rng(seed)
        for s in test:
            if baseline == "random":
                total = total + _confusion(s, None, random_baseline(s.labels.shape, n_classes, rng).labels,
                                           n_classes, anchor)
            elif baseline == "oracle":
                total = total + _confusion(s, _oracle_logits(s, n_classes), None, n_classes, anchor)
            else:
                total = total + _confusion(s, infer(model, s, scheme, tile), None, n_classes, anchor)
        reports[name] = total.report(aggregation)
    return reports


def cmd_eval(cfg: ExperimentConfig, data_dir, plan_path, folds: str, checkpoint: Optional[str],
             out_dir) -> dict:
    """Score test units; writes ``report_<fold>.json``, ``scores.csv`` and optionally ``per_class.csv``.

    ``checkpoint`` may contain ``{fold}``, replaced by each fold name.
    """
    samples = load_dataset(data_dir)
    plan = _read_plan(plan_path)
    baseline = cfg.get("eval", "baseline")
    if baseline not in (None, "random", "oracle"):
        raise UsageError(f"unknown baseline {baseline!r}")
    if baseline is None and not checkpoint:
        raise UsageError("eval needs --checkpoint or --baseline")
    n_classes = _n_classes(data_dir, samples)
    n_dates = samples[0].n_dates
    out = Path(out_dir)
    per_fold: dict[str, dict[str, MetricsReport]] = {}
    for name in _fold_names(plan, folds):
        fold = _fold(plan, name)
        model = None
        dates = materialize(fold.test[:1], samples)[0].n_dates if fold.test else n_dates
        if baseline is None:
            model = load_model(checkpoint.replace("{fold}", name))
            _check_model_matches(cfg, model.config)
            n_classes = model.config.n_classes
        if cfg.get("eval", "sweep"):
            schemes = table2_schemes(dates)
        else:
            schemes = [_scheme(cfg, dates)]
        reports = _eval_fold(cfg, samples, fold, model, n_classes, schemes, seed=cfg.get("data", "seed"))
        per_fold[name] = reports
        doc = {
            "fold": name,
            "setting": plan.setting,
            "baseline": baseline,
            "reports": {k: {**r.to_dict(), "percentages": r.percentages()} for k, r in reports.items()},
        }
        _write(out / f"report_{name}.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")

    scheme_names = list(next(iter(per_fold.values())))
    rows = []
    for sname in scheme_names:
        mean = mean_report([per_fold[f][sname] for f in per_fold])
        rows.append((sname, {"SCS": round(100 * mean["scs"], 1), "SC": round(100 * mean["sc"], 1),
                             "BC": round(100 * mean["bc"], 1), "mIoU": round(100 * mean["miou"], 1)}))
    _write(out / "scores.csv", csv_rows(rows, label="scheme"))
    if cfg.get("eval", "per_class"):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["scheme", *[f"class_{k}" for k in range(n_classes)], "mIoU"])
        for sname in scheme_names:
            ious = np.array([[np.nan if v is None else v for v in per_fold[f][sname].per_class_iou]
                             for f in per_fold], dtype=float)
            with np.errstate(all="ignore"):
                col = np.nanmean(ious, axis=0) if np.isfinite(ious).any() else ious[0]
            writer.writerow([sname, *(("" if np.isnan(v) else f"{100 * v:.1f}") for v in col),
                             f"{100 * np.mean([per_fold[f][sname].miou for f in per_fold]):.1f}"])
        _write(out / "per_class.csv", buf.getvalue())
    return {"folds": list(per_fold), "rows": rows}


def _check_model_matches(cfg: ExperimentConfig, model_cfg: ModelConfig) -> None:
    """Every key set in ``[model]`` must agree with the checkpoint's config."""
    stored = model_cfg.to_dict()
    for key, value in cfg.values["model"].items():
        if key == "channels_per_level" and value is not None:
            value = list(value)
        if stored.get(key) != value:
            raise VersionMismatch(f"checkpoint has {key}={stored.get(key)!r}, config asks for {value!r}")


class VersionMismatch(SitsError):
    """Checkpoint and configuration describe different models."""


# ------------------------------------------------------------------ report

def cmd_report(run_dirs: Sequence[str]) -> tuple[str, list[str]]:
    """TSV of (setting, D, parameter count, SCS, mIoU) per run, sorted by D; also lists skipped runs."""
    rows, skipped = [], []
    for d in run_dirs:
        d = Path(d)
        try:
            run = json.loads((d / "run.json").read_text())
            scores = list(csv.DictReader((d / "scores.csv").read_text().splitlines()))
            first = scores[0]
            model_cfg = ModelConfig.from_dict(run["model"])
            rows.append((run.get("setting", ""), model_cfg.feature_size, count_parameters(model_cfg),
                         float(first["SCS"]), float(first["mIoU"]), d.name))
        except (OSError, KeyError, IndexError, ValueError, SitsError) as exc:
            skipped.append(f"{d}: {exc}")
    rows.sort(key=lambda r: (r[0], r[1], r[5]))
    lines = ["setting\tD\tparams\tSCS\tmIoU\trun"]
    lines += [f"{s}\t{dd}\t{p}\t{scs_:.1f}\t{m:.1f}\t{name}" for s, dd, p, scs_, m, name in rows]
    return "\n".join(lines) + "\n", skipped


# ------------------------------------------------------------------ selftest

def cmd_selftest(stream=None) -> bool:
    """Quick gradient, metric and planning checks; prints one line per check."""
    from .metrics import scs
    from .data.folds import NO_SHIFT_FOLDS, SPATIAL_FOLDS
    from .tensor import Tensor, conv2d, grad_check, group_norm, softmax_axis
    from .training import focal_loss

    stream = stream or sys.stdout
    rng = np.random.default_rng(0)
    checks = {}
    x = rng.standard_normal((1, 2, 5, 5))
    k = rng.standard_normal((3, 2, 3, 3))
    checks["conv2d gradient"] = grad_check(lambda a, b: conv2d(a, b, padding=1), [x, k]) < 1e-4
    checks["softmax gradient"] = grad_check(lambda a: softmax_axis(a, axis=1, temperature=2.0),
                                            rng.standard_normal((2, 4, 3))) < 1e-4
    checks["group_norm gradient"] = grad_check(
        lambda a: group_norm(a, 2, Tensor(np.ones(4)), Tensor(np.zeros(4))),
        rng.standard_normal((2, 4, 3, 3))) < 1e-4
    labels = rng.integers(0, 3, (2, 3, 3))
    checks["focal loss gradient"] = grad_check(lambda z: focal_loss(z, labels, 2.0),
                                               rng.standard_normal((2, 3, 3, 3))) < 1e-3
    checks["SCS arithmetic"] = abs(100 * scs(0.410, 0.224) - 31.7) < 0.05
    checks["fold tables"] = NO_SHIFT_FOLDS[0] == ((1, 2), 3, 4) and SPATIAL_FOLDS[0] == ((1, 2, 3), 4, 5)
    for name, ok in checks.items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}", file=stream)
    return all(checks.values())


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sitsscd", description="Semantic change detection on image time series.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--config", help="INI file with [data] [model] [train] [infer] [eval] sections")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config key")
    p.add_argument("-v", "--verbose", action="store_true", help="log defaulted keys and progress")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--n-aoi", type=int, dest="n_aoi")
    s.add_argument("--change-rate", type=float, dest="change_rate")

    s = sub.add_parser("split", help="write a fold plan")
    s.add_argument("--data", required=True)
    s.add_argument("--setting", choices=("no_shift", "temporal", "spatial"))
    s.add_argument("--split-day", type=int, dest="split_day")
    s.add_argument("--out", help="plan JSON path (default DATA/plan_<setting>.json)")

    s = sub.add_parser("train", help="train one or more folds")
    s.add_argument("--data", required=True)
    s.add_argument("--plan", required=True)
    s.add_argument("--fold", default="I", help="fold name, comma list or 'all'")
    s.add_argument("--out", required=True, help="run directory (one subdirectory per fold when several)")
    s.add_argument("--variant", choices=("ours", "tae", "ltae"))
    s.add_argument("--feature-size", type=int, dest="feature_size")
    s.add_argument("--max-iters", type=int, dest="max_iters")
    s.add_argument("--seed", type=int, dest="train_seed")
    s.add_argument("--jobs", type=int, default=1)

    s = sub.add_parser("eval", help="score a checkpoint or a baseline on test units")
    s.add_argument("--data", required=True)
    s.add_argument("--plan", required=True)
    s.add_argument("--fold", default="I")
    s.add_argument("--checkpoint", help="path; '{fold}' is replaced by the fold name")
    s.add_argument("--baseline", choices=("random", "oracle"))
    s.add_argument("--scheme", help="full, contiguous, strided or a JSON assignment file")
    s.add_argument("--group-len", type=int, dest="group_len")
    s.add_argument("--sweep", action="store_true", help="one row per sequence-length scheme")
    s.add_argument("--per-class", action="store_true", dest="per_class")
    s.add_argument("--out", required=True)

    s = sub.add_parser("report", help="collect runs into a TSV series")
    s.add_argument("runs", nargs="+")
    s.add_argument("--out", help="TSV path (default stdout)")

    sub.add_parser("selftest", help="fast built-in checks")
    return p


def _dispatch(args, cfg: ExperimentConfig) -> int:
    if args.command == "synth":
        m = cmd_synth(cfg, args.out)
        print(f"wrote {len(m['aoi_ids'])} AoIs to {args.out} (changed fraction {m['changed_fraction']:.4f})")
    elif args.command == "split":
        plan = cmd_split(cfg, args.data, args.setting)
        out = Path(args.out) if args.out else Path(args.data) / f"plan_{plan.setting}.json"
        _write(out, plan.to_json() + "\n")
        print(plan.table())
    elif args.command == "train":
        plan = _read_plan(args.plan)
        names = _fold_names(plan, args.fold)
        if len(names) == 1:
            run = cmd_train(cfg, args.data, args.plan, names[0], args.out)
            print(f"fold {names[0]}: best val SCS {run['best_val_scs']:.4f} at iteration {run['best_iter']}")
        else:
            jobs = [(cfg.to_string(), args.data, args.plan, n, str(Path(args.out) / f"fold_{n}")) for n in names]
            if args.jobs > 1:
                with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                    runs = list(pool.map(_train_job, jobs))
            else:
                runs = [_train_job(j) for j in jobs]
            for n, run in zip(names, runs):
                print(f"fold {n}: best val SCS {run['best_val_scs']:.4f} at iteration {run['best_iter']}")
    elif args.command == "eval":
        if args.sweep:
            cfg.set("eval", "sweep", True)
        if args.per_class:
            cfg.set("eval", "per_class", True)
        res = cmd_eval(cfg, args.data, args.plan, args.fold, args.checkpoint, args.out)
        print(csv_rows(res["rows"], label="scheme"), end="")
    elif args.command == "report":
        text, skipped = cmd_report(args.runs)
        for line in skipped:
            print(f"skipped {line}", file=sys.stderr)
        if args.out:
            _write(Path(args.out), text)
        else:
            print(text, end="")
    elif args.command == "selftest":
        return EXIT_OK if cmd_selftest() else EXIT_NUMERIC
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        with _thread_limit():
            cfg = _load_config(args)
            return _dispatch(args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except SitsError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
