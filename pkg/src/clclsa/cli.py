"""Command-line entry point.

Subcommands: synth, mask, train, eval, sweep, grid, ablate, surface. Every
subcommand accepts --config FILE (JSON) with individual flags taking
precedence (and --set section.key=value for any leaf field). Stochastic
subcommands require an explicit --seed. Each run writes a manifest recording
the resolved configuration, seeds, input digests, artifact paths, and
duration; re-running the same command line reproduces every emitted number
bitwise in single-thread mode.

Exit codes: 0 success, 1 usage error, 2 runtime/numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
import time

from . import __version__
from . import data as dt
from . import evaluation as ev
from . import model as md
from . import train as tr


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so usage errors map to code 1."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


STOCHASTIC = {"synth", "mask", "train", "sweep", "grid", "ablate", "surface"}


# ---------------------------------------------------------------------------
# Config plumbing


def _load_config(path):
    if path is None:
        return {}
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    return doc


def _apply_sets(config, assignments):
    for item in assignments or []:
        if "=" not in item:
            raise UsageError(f"--set needs key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = config
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise UsageError(f"--set {key}: {part} is not a section")
        node[parts[-1]] = value
    return config


def _section(config, name):
    value = config.get(name, {})
    if not isinstance(value, dict):
        raise UsageError(f"config section {name!r} must be an object")
    return dict(value)


def _model_config(config, args, ds=None):
    section = _section(config, "model")
    if getattr(args, "preset", None):
        base = md.preset(args.preset).to_dict()
        base.update(section)
        section = base
    if "num_views" not in section:
        if ds is None:
            raise UsageError("model config needs num_views/input_dims (or --preset)")
        section.setdefault("num_views", ds.n_views)
        section.setdefault("input_dims", list(ds.view_dims))
        section.setdefault("num_classes", ds.class_count)
        section.setdefault("embed_dims", [16] * ds.n_views)
        section.setdefault("ae_hidden", [16, 8])
        section.setdefault("dropout_p", 0.1)
    return md.ModelConfig.from_dict(section), section


def _train_config(config, args):
    section = _section(config, "train")
    for flag in ("epochs", "initial_lr", "lr_schedule", "batch_size", "reduction"):
        value = getattr(args, flag, None)
        if value is not None:
            section[flag] = value
    weights = section.get("weights", {})
    for flag, key in (("lambda_al", "lambda_al"), ("lambda_co", "lambda_co"),
                      ("lambda_cl", "lambda_cl"), ("alpha", "alpha")):
        value = getattr(args, flag, None)
        if value is not None:
            weights[key] = value
    if weights:
        section["weights"] = weights
    section["seed"] = args.seed if args.seed is not None else section.get("seed", 0)
    return tr.TrainConfig.from_dict(section), section


def _sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(out_dir, command, resolved, seeds, inputs, artifacts, started):
    manifest = {
        "command": command,
        "resolved_config": resolved,
        "seeds": seeds,
        "input_digests": {path: _sha256(path) for path in inputs if os.path.exists(path)},
        "artifacts": sorted(artifacts),
        "tool_version": __version__,
        "duration_seconds": time.time() - started,
    }
    path = os.path.join(out_dir, "run_manifest.json")
    fd, tmp = tempfile.mkstemp(dir=out_dir, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        json.dump(manifest, fh, indent=2)
    os.replace(tmp, path)
    return path


def _dataset_inputs(directory):
    with open(os.path.join(directory, "manifest.json")) as fh:
        files = json.load(fh)["files"]
    paths = [os.path.join(directory, f) for f in files["views"]]
    paths.append(os.path.join(directory, files["labels"]))
    if files.get("mask"):
        paths.append(os.path.join(directory, files["mask"]))
    return paths


def _out_dir(args):
    os.makedirs(args.out, exist_ok=True)
    return args.out


# ---------------------------------------------------------------------------
# Subcommands


def _cmd_synth(args, config):
    section = _section(config, "synth")
    for flag, key in (("n", "n_subjects"), ("views", "n_views"), ("classes", "class_count"),
                      ("snr", "snr"), ("sep", "class_sep"), ("shared_dim", "shared_dim")):
        value = getattr(args, flag, None)
        if value is not None:
            section[key] = value
    if args.dims is not None:
        section["view_dims"] = [int(d) for d in args.dims.split(",")]
    section["seed"] = args.seed
    section.setdefault("n_views", 3)
    section.setdefault("view_dims", [20] * section["n_views"])
    spec = dt.SyntheticSpec.from_dict(section)
    ds = dt.synth_generate(spec)
    out = _out_dir(args)
    started = time.time()
    manifest = dt.write_dataset(ds, out, manifest_extra={"synth_spec": spec.to_dict()})
    artifacts = [os.path.join(out, f) for f in manifest["files"]["views"]]
    artifacts.append(os.path.join(out, manifest["files"]["labels"]))
    _write_manifest(out, "synth", {"synth": spec.to_dict()}, [args.seed], [], artifacts, started)
    print(f"wrote synthetic dataset ({ds.n_subjects} subjects, {ds.n_views} views) to {out}")
    return 0


def _cmd_mask(args, config):
    started = time.time()
    ds = dt.load_dataset_dir(args.data)
    section = _section(config, "mask")
    eta = args.eta if args.eta is not None else section.get("eta")
    if eta is None:
        raise UsageError("mask needs --eta")
    policy = args.policy or section.get("policy", "uniform")
    spec = dt.MissingnessSpec(eta=eta, seed=args.seed, policy=policy)
    masked = dt.apply_missingness(ds, spec)
    out = _out_dir(args)
    dt.write_dataset(masked, out, manifest_extra={
        "missingness": {"eta": eta, "seed": args.seed, "policy": policy}})
    _write_manifest(out, "mask", {"mask": {"eta": eta, "policy": policy}}, [args.seed],
                    _dataset_inputs(args.data), [os.path.join(out, "mask.csv")], started)
    print(f"wrote masked dataset (eta={eta}, realized {masked.missing_rate():.4f}) to {out}")
    return 0


def _epoch_log_csv(path, logs):
    import csv as _csv

    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["epoch", "l_clf", "l_al", "l_co", "l_cl", "total", "lr",
                         "latent_variance", "train_acc"])
        for entry in logs:
            b = entry.breakdown
            writer.writerow([entry.epoch, repr(b.l_clf), repr(b.l_al), repr(b.l_co),
                             repr(b.l_cl), repr(b.total), repr(entry.lr),
                             ";".join(repr(v) for v in entry.latent_variance),
                             "" if entry.train_acc is None else repr(entry.train_acc)])


def _cmd_train(args, config):
    started = time.time()
    ds = dt.load_dataset_dir(args.data, scale=args.scale)
    model_config, model_section = _model_config(config, args, ds)
    train_config, train_section = _train_config(config, args)
    out = _out_dir(args)
    resolved = {"model": model_section or model_config.to_dict(),
                "train": train_config.to_dict()}
    with open(os.path.join(out, "config.json"), "w") as fh:
        json.dump(resolved, fh, indent=2)
    try:
        params, logs = tr.train(ds, model_config, train_config)
    except tr.TrainingAborted as exc:
        md.save_checkpoint(os.path.join(out, "checkpoint.json"), exc.params,
                           extra={"aborted": True, "term": exc.term, "epoch": exc.epoch})
        _epoch_log_csv(os.path.join(out, "epochs.csv"), exc.logs)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    checkpoint = os.path.join(out, "checkpoint.json")
    md.save_checkpoint(checkpoint, params)
    _epoch_log_csv(os.path.join(out, "epochs.csv"), logs)
    artifacts = [checkpoint, os.path.join(out, "epochs.csv"), os.path.join(out, "config.json")]
    _write_manifest(out, "train", resolved, [train_config.seed],
                    _dataset_inputs(args.data), artifacts, started)
    print(f"trained {train_config.epochs} epochs; final loss "
          f"{logs[-1].breakdown.total!r}; checkpoint at {checkpoint}")
    return 0


def _cmd_eval(args, config):
    ds = dt.load_dataset_dir(args.data, scale=args.scale)
    params = md.load_checkpoint(args.checkpoint)
    yhat, pred = md.predict(ds.views, ds.mask, params)
    report = ev.compute_report(yhat, ds.labels, ds.class_count,
                               metadata={"checkpoint": args.checkpoint, "data": args.data})
    text = json.dumps(report.to_dict(), indent=2)
    if args.out:
        os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
        print(f"wrote metrics to {args.out}")
    else:
        print(text)
    return 0


def _parse_float_list(text):
    return [float(tok) for tok in text.split(",") if tok != ""]


def _parse_int_list(text):
    return [int(tok) for tok in text.split(",") if tok != ""]


def _cmd_sweep(args, config):
    started = time.time()
    ds = dt.load_dataset_dir(args.data, scale=args.scale)
    model_config, model_section = _model_config(config, args, ds)
    train_config, _ = _train_config(config, args)
    etas = _parse_float_list(args.etas)
    seeds = _parse_int_list(args.seeds) if args.seeds else [args.seed]
    result = ev.missing_rate_sweep(ds, model_config, train_config, etas, seeds,
                                   mask_test=not args.complete_test,
                                   dataset_name=os.path.basename(os.path.normpath(args.data)))
    out = _out_dir(args)
    report_path = os.path.join(out, f"sweep.{args.format}")
    ev.emit_report(result, report_path, fmt=args.format)
    resolved = {"model": model_section, "train": train_config.to_dict(),
                "sweep": {"etas": etas, "seeds": seeds, "mask_test": not args.complete_test}}
    _write_manifest(out, "sweep", resolved, seeds, _dataset_inputs(args.data),
                    [report_path], started)
    for point in result.points:
        acc = point.mean.get("acc")
        print(f"eta={point.eta}: mean acc {acc if acc is None else round(acc, 4)} "
              f"({len(point.reports)} ok, {point.failures} failed)")
    return 0


def _cmd_grid(args, config):
    started = time.time()
    ds = dt.load_dataset_dir(args.data, scale=args.scale)
    model_config, model_section = _model_config(config, args, ds)
    train_config, _ = _train_config(config, args)
    section = _section(config, "grid")
    grid = tr.GridSpec(
        lambda_al_values=tuple(section.get("lambda_al_values", md.GRID_VALUES)),
        lambda_co_values=tuple(section.get("lambda_co_values", md.GRID_VALUES)),
        lambda_cl_values=tuple(section.get("lambda_cl_values", md.GRID_VALUES)),
        metric=section.get("metric", "acc"),
        val_fraction=section.get("val_fraction", 0.2),
    )
    result = tr.grid_search(ds, None, model_config, grid, train_config)
    out = _out_dir(args)
    summary = os.path.join(out, "grid.csv")
    import csv as _csv

    with open(summary, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["lambda_al", "lambda_co", "lambda_cl", "metric", "status", "detail"])
        for trial in result.trials:
            w = trial.weights
            writer.writerow([w.lambda_al, w.lambda_co, w.lambda_cl,
                             "" if trial.metric is None else repr(trial.metric),
                             trial.status, trial.detail])
    resolved = {"model": model_section, "train": train_config.to_dict(),
                "grid": {"lambda_al_values": list(grid.lambda_al_values),
                         "lambda_co_values": list(grid.lambda_co_values),
                         "lambda_cl_values": list(grid.lambda_cl_values),
                         "metric": grid.metric}}
    _write_manifest(out, "grid", resolved, [train_config.seed],
                    _dataset_inputs(args.data), [summary], started)
    if result.best is None:
        print("grid search: no trial succeeded", file=sys.stderr)
        return 2
    w = result.best.weights
    print(f"best: lambda_al={w.lambda_al} lambda_co={w.lambda_co} "
          f"lambda_cl={w.lambda_cl} ({grid.metric}={result.best.metric:.4f}); "
          f"summary at {summary}")
    return 0


def _cmd_ablate(args, config):
    started = time.time()
    ds = dt.load_dataset_dir(args.data, scale=args.scale)
    model_config, model_section = _model_config(config, args, ds)
    train_config, _ = _train_config(config, args)
    etas = tuple(_parse_float_list(args.etas))
    seeds = tuple(_parse_int_list(args.seeds) if args.seeds else [args.seed])
    spec = ev.AblationSpec(etas=etas, seeds=seeds, lambda_co=args.lambda_co_fixed)
    results = ev.ablation_run(ds, spec, model_config, train_config,
                              dataset_name=os.path.basename(os.path.normpath(args.data)))
    out = _out_dir(args)
    report_path = os.path.join(out, f"ablation.{args.format}")
    ev.emit_report(results, report_path, fmt=args.format)
    resolved = {"model": model_section, "train": train_config.to_dict(),
                "ablate": {"etas": list(etas), "seeds": list(seeds),
                           "lambda_co": spec.lambda_co}}
    _write_manifest(out, "ablate", resolved, list(seeds), _dataset_inputs(args.data),
                    [report_path], started)
    for variant, sweep in results.items():
        accs = [p.mean.get("acc") for p in sweep.points]
        print(f"{variant}: mean acc per eta {[None if a is None else round(a, 4) for a in accs]}")
    return 0


def _cmd_surface(args, config):
    started = time.time()
    ds = dt.load_dataset_dir(args.data, scale=args.scale)
    model_config, model_section = _model_config(config, args, ds)
    train_config, _ = _train_config(config, args)
    fixed_name, fixed_value = args.fix.split("=", 1)
    fixed = {fixed_name: float(fixed_value)}
    grids = {}
    for item in args.vary:
        name, values = item.split("=", 1)
        grids[name] = _parse_float_list(values)
    seeds = _parse_int_list(args.seeds) if args.seeds else [args.seed]
    rows = ev.hyperparam_surface(ds, model_config, train_config, fixed, grids,
                                 args.eta, seeds,
                                 dataset_name=os.path.basename(os.path.normpath(args.data)))
    out = _out_dir(args)
    report_path = os.path.join(out, f"surface.{args.format}")
    ev.emit_report(rows, report_path, fmt=args.format)
    resolved = {"model": model_section, "train": train_config.to_dict(),
                "surface": {"fixed": fixed, "grids": grids, "eta": args.eta,
                            "seeds": seeds}}
    _write_manifest(out, "surface", resolved, seeds, _dataset_inputs(args.data),
                    [report_path], started)
    ok = sum(1 for r in rows if r.status == "ok")
    print(f"surface: {ok}/{len(rows)} trials ok; table at {report_path}")
    return 0


# ---------------------------------------------------------------------------
# Parser assembly


def _build_parser():
    parser = _Parser(prog="clclsa", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config leaf (dotted path)")
        p.add_argument("--seed", type=int, help="random seed")
        p.add_argument("--out", required=True, help="output directory")
        if data:
            p.add_argument("--data", required=True, help="dataset directory")
            p.add_argument("--scale", action="store_true",
                           help="min-max scale features to [0,1] on load")

    def training_flags(p):
        p.add_argument("--preset", choices=sorted(md.PRESETS),
                       help="published architecture preset")
        p.add_argument("--epochs", type=int)
        p.add_argument("--initial-lr", dest="initial_lr", type=float)
        p.add_argument("--lr-schedule", dest="lr_schedule", choices=["step", "constant"])
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--reduction", choices=["mean", "sum"])
        p.add_argument("--lambda-al", dest="lambda_al", type=float)
        p.add_argument("--lambda-co", dest="lambda_co", type=float)
        p.add_argument("--lambda-cl", dest="lambda_cl", type=float)
        p.add_argument("--alpha", type=float)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p, data=False)
    p.add_argument("--n", type=int)
    p.add_argument("--views", type=int)
    p.add_argument("--classes", type=int)
    p.add_argument("--dims", help="comma-separated per-view dims")
    p.add_argument("--shared-dim", dest="shared_dim", type=int)
    p.add_argument("--snr", type=float)
    p.add_argument("--sep", type=float)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("mask", help="apply simulated missingness")
    common(p)
    p.add_argument("--eta", type=float)
    p.add_argument("--policy")
    p.set_defaults(func=_cmd_mask)

    p = sub.add_parser("train", help="train a model")
    common(p)
    training_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--scale", action="store_true")
    p.add_argument("--out", help="write the metrics JSON here (default: stdout)")
    p.set_defaults(func=_cmd_eval, seed=None)

    p = sub.add_parser("sweep", help="missing-rate sweep")
    common(p)
    training_flags(p)
    p.add_argument("--etas", required=True, help="comma-separated missing rates")
    p.add_argument("--seeds", help="comma-separated seeds (default: --seed)")
    p.add_argument("--complete-test", action="store_true",
                   help="evaluate on complete test data instead of masked")
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("grid", help="grid search over loss weights")
    common(p)
    training_flags(p)
    p.set_defaults(func=_cmd_grid)

    p = sub.add_parser("ablate", help="component ablation across missing rates")
    common(p)
    training_flags(p)
    p.add_argument("--etas", default="0.2,0.4")
    p.add_argument("--seeds")
    p.add_argument("--lambda-co-fixed", dest="lambda_co_fixed", type=float, default=0.1)
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("surface", help="hyperparameter surface at fixed eta")
    common(p)
    training_flags(p)
    p.add_argument("--fix", required=True, metavar="NAME=VALUE",
                   help="the fixed weight, e.g. lambda_al=0.1")
    p.add_argument("--vary", action="append", required=True, metavar="NAME=V1,V2,...",
                   help="a varying weight grid (give twice)")
    p.add_argument("--eta", type=float, required=True)
    p.add_argument("--seeds")
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.set_defaults(func=_cmd_surface)

    return parser


def dispatch(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command in STOCHASTIC and args.seed is None:
            raise UsageError(f"clclsa {args.command}: --seed is required")
        if getattr(args, "vary", None) is not None and len(args.vary) != 2:
            raise UsageError("surface needs exactly two --vary grids")
        config = _apply_sets(_load_config(getattr(args, "config", None)),
                             getattr(args, "set", None))
        return args.func(args, config)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (md.NumericError, tr.TrainingAborted) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
