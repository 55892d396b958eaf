"""Command-line entry point: ``lcgldl <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from lcgldl import __version__
from lcgldl.data import load_csv, load_label_matrix, save_csv, synth_dataset
from lcgldl.errors import ConfigError, DataError, NumericalError
from lcgldl.harness import (TrainConfig, ablation, default_gradcheck_sample, evaluate, grad_check,
                            gradcheck_config, noise_experiment, run_cv, train)
from lcgldl.metrics import aggregate, evaluate_dataset, format_table
from lcgldl.net import save_params

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
WORKERS_ENV = "LCGLDL_WORKERS"
GRADCHECK_TOL = 1e-4
BUILTIN_CONFIGS = ("humangene", "naturalscene", "yeast_alpha", "movie")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass
class RunManifest:
    command: str
    config: TrainConfig | None
    data: str | None
    out: str | None
    seed: int


def load_config(spec: str | None) -> dict:
    if spec is None:
        return {}
    path = Path(spec)
    if path.is_file():
        text = path.read_text(encoding="utf-8")
    elif spec.replace("-", "_") in BUILTIN_CONFIGS:
        text = resources.files("lcgldl.configs").joinpath(f"{spec.replace('-', '_')}.json").read_text()
    else:
        raise DataError(f"config not found: {spec}")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"{spec}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise DataError(f"{spec}: config must be a JSON object")
    return doc


def _parse_set(items) -> dict:
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def resolve_config(args) -> TrainConfig:
    doc = load_config(args.config)
    for key in ("epochs", "batch_size", "lr", "hidden"):
        value = getattr(args, key, None)
        if value is not None:
            doc[key] = value
    doc.update(_parse_set(args.set))
    if args.seed is not None:
        doc["seed"] = args.seed
    return TrainConfig.from_dict(doc)


def _resolve(path):
    return str(Path(path).resolve()) if path else None


def _meta(seed):
    return {
        "package_version": __version__,
        "numpy_version": np.__version__,
        "python": platform.python_version(),
        "master_seed": seed,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }


def _write(out, doc):
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    return text


def _dataset_doc(ds):
    return {"name": ds.name, "m": ds.m, "n": ds.n, "t": ds.t}


def _workers(args) -> int:
    if args.workers is not None:
        return args.workers
    try:
        return int(os.environ.get(WORKERS_ENV, "1"))
    except ValueError:
        raise UsageError(f"{WORKERS_ENV} must be an integer") from None


def _base_doc(manifest: RunManifest, ds=None) -> dict:
    doc = {"command": manifest.command, "data": manifest.data, "meta": _meta(manifest.seed)}
    if manifest.config is not None:
        doc["config"] = manifest.config.to_dict()
    if ds is not None:
        doc["dataset"] = _dataset_doc(ds)
    return doc


def cmd_train(args):
    cfg = resolve_config(args)
    manifest = RunManifest("train", cfg, _resolve(args.data), _resolve(args.out), cfg.seed)
    ds = load_csv(args.data)
    res = train(cfg, ds)
    doc = _base_doc(manifest, ds)
    doc["history"] = res.history.as_dict()
    if args.test:
        report = evaluate(res.params, load_csv(args.test), res.scaler)
        doc["test_metrics"] = report.as_dict()
        print(format_table({"test": aggregate([report])}))
    if args.checkpoint:
        meta = {"config": cfg.to_dict()}
        if res.scaler is not None:
            meta["feature_mean"] = res.scaler.mean.tolist()
            meta["feature_scale"] = res.scaler.scale.tolist()
        save_params(args.checkpoint, res.params, **meta)
    _write(args.out, doc)
    print(f"final loss {res.history.total[-1]:.6f} after {cfg.epochs} epochs")


def _cv_common(args, command):
    cfg = resolve_config(args)
    manifest = RunManifest(command, cfg, _resolve(args.data), _resolve(args.out), cfg.seed)
    ds = load_csv(args.data)
    cfg.check_for(ds.t)
    doc = _base_doc(manifest, ds)
    doc["protocol"] = {"repeats": args.repeats, "folds": args.folds}
    return cfg, ds, doc


def cmd_cv(args):
    cfg, ds, doc = _cv_common(args, "cv")
    result = run_cv(cfg, ds, args.repeats, args.folds, _workers(args))
    doc["results"] = result.as_dict()
    _write(args.out, doc)
    print(format_table({ds.name: result.aggregate}))


def cmd_ablate(args):
    cfg, ds, doc = _cv_common(args, "ablate")
    runs = ablation(cfg, ds, args.repeats, args.folds, _workers(args))
    doc["results"] = {name: r.as_dict() for name, r in runs.items()}
    _write(args.out, doc)
    print(format_table({name: r.aggregate for name, r in runs.items()}))


def cmd_noise(args):
    cfg, ds, doc = _cv_common(args, "noise")
    try:
        variances = [float(v) for v in args.variances.split(",")]
    except ValueError:
        raise UsageError(f"bad --variances list: {args.variances!r}") from None
    runs = noise_experiment(cfg, ds, variances, args.repeats, args.folds, _workers(args), args.train_only)
    doc["protocol"].update(variances=variances, train_only=args.train_only)
    doc["results"] = [{"variance": v, **r.as_dict()} for v, r in runs.items()]
    _write(args.out, doc)
    print(format_table({f"var={v:g}": r.aggregate for v, r in runs.items()}))


def cmd_gradcheck(args):
    seed = 0 if args.seed is None else args.seed
    cfg = gradcheck_config(hidden=args.hidden, ldp_dim=args.p, batch_size=args.b)
    sample = default_gradcheck_sample(seed, n=args.n, t=args.t, b=args.b)
    start = time.perf_counter()
    res = grad_check(cfg, sample, seed=seed)
    elapsed = time.perf_counter() - start
    passed = bool(res.max_rel_error < GRADCHECK_TOL)
    doc = {"command": "gradcheck", "meta": _meta(seed), "config": cfg.to_dict(),
           "max_rel_error": res.max_rel_error, "checked": res.checked, "skipped": res.skipped,
           "tolerance": GRADCHECK_TOL, "passed": passed}
    if args.out:
        _write(args.out, doc)
    print(f"max relative error {res.max_rel_error:.3e} over {res.checked} coordinates "
          f"({res.skipped} skipped) in {elapsed:.2f}s: {'PASS' if passed else 'FAIL'} (tol {GRADCHECK_TOL:g})")
    if not passed:
        raise NumericalError("gradient check failed")


def cmd_synth(args):
    seed = 0 if args.seed is None else args.seed
    ds = synth_dataset(args.m, args.n, args.t, seed)
    save_csv(ds, args.out)
    print(f"wrote {ds.m}x{ds.n} features, {ds.t} labels to {args.out}")


def cmd_metrics(args):
    true = load_label_matrix(args.true)
    pred = load_label_matrix(args.pred)
    report = evaluate_dataset(true, pred)
    doc = {"command": "metrics", "true": _resolve(args.true), "pred": _resolve(args.pred),
           "metrics": report.as_dict(), "meta": _meta(None)}
    if args.out:
        _write(args.out, doc)
    print(format_table({Path(args.pred).stem: aggregate([report])}))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lcgldl", description="Label distribution learning with a label correlation grid.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(p, protocol=False):
        p.add_argument("--data", required=True, help="dataset CSV (f0..,l0.. columns)")
        p.add_argument("--config", help="config JSON path or builtin name: " + ", ".join(BUILTIN_CONFIGS))
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="results JSON path")
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--hidden", type=int)
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config field")
        if protocol:
            p.add_argument("--repeats", type=int, default=10)
            p.add_argument("--folds", type=int, default=5)
            p.add_argument("--workers", type=int, help=f"fold workers (default ${WORKERS_ENV} or 1)")
        return p

    p = with_config(sub.add_parser("train", help="train on a dataset"))
    p.add_argument("--test", help="held-out CSV to evaluate after training")
    p.add_argument("--checkpoint", help="write trained parameters to this JSON file")
    p.set_defaults(func=cmd_train)

    with_config(sub.add_parser("cv", help="repeated k-fold cross-validation"), True).set_defaults(func=cmd_cv)
    with_config(sub.add_parser("ablate", help="full / w/o grid / w/o projection"), True).set_defaults(func=cmd_ablate)

    p = with_config(sub.add_parser("noise", help="label-noise robustness sweep"), True)
    p.add_argument("--variances", default="0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0")
    p.add_argument("--train-only", action="store_true", help="inject noise into training folds only")
    p.set_defaults(func=cmd_noise)

    p = sub.add_parser("gradcheck", help="finite-difference check of all backward passes")
    p.add_argument("--seed", type=int)
    p.add_argument("--n", type=int, default=5)
    p.add_argument("--t", type=int, default=4)
    p.add_argument("--b", type=int, default=4)
    p.add_argument("--hidden", type=int, default=8)
    p.add_argument("--p", type=int, default=3)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="write a synthetic dataset CSV")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--t", type=int, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("metrics", help="score predicted against true distributions")
    p.add_argument("--true", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_metrics)
    return parser


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
    except UsageError as exc:
        print(f"lcgldl: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"lcgldl: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"lcgldl: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"lcgldl: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
