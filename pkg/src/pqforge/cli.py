"""Command-line entry point: ``pqforge {train,tune,export,infer,eval,template,report}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 1 anything else.
Set ``PQFORGE_LOG`` (``DEBUG``, ``INFO``, ...) for log output on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .config import (
    config_hash,
    default_config,
    dump_config,
    load_config,
    load_preset,
    preset_names,
    update_config,
)
from .data import encode_with_classes, load_data, read_csv_table
from .deploy import export_bundle, finalize_model, import_bundle, int_infer
from .errors import ConfigError, DataError, PQForgeError, UnsupportedArchitectureError
from .model import (
    hlf_mlp_description,
    load_checkpoint,
    load_description,
    replace_layers,
    save_checkpoint,
    template_layer_config,
)
from .tracking import RunTracker, log_run, read_jsonl

log = logging.getLogger("pqforge")

DTYPES = {"f32": np.float32, "f64": np.float64}
REPORT_BEGIN = "----- BEGIN REPORT -----"
REPORT_END = "----- END REPORT -----"


def _common(parser: argparse.ArgumentParser, data_help: str = "CSV dataset (16 features + label)"):
    parser.add_argument("--config", type=Path, help="YAML compression config or a bundled preset name")
    parser.add_argument("--data", type=Path, help=data_help)
    parser.add_argument("--out", type=Path, help="output file or directory")
    parser.add_argument("--seed", type=int, help="overrides training.seed / hpo.seed")
    parser.add_argument("--workers", type=int, help="parallel trials for tune")
    parser.add_argument("--dtype", choices=sorted(DTYPES), default="f64", help="training precision")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pqforge", description="Pruning and quantization-aware training.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a compressed model and write checkpoint, bundle and run log")
    _common(p)
    p.add_argument("--model", type=Path, help="model description JSON (default: the 16-64-32-32-5 MLP)")
    p.add_argument("--synthetic", type=int, metavar="N", help="use N synthetic rows when --data is absent")
    p.add_argument("--train-limit", type=int, metavar="N", help="keep only the first N training rows")
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--no-bundle", action="store_true", help="skip integer lowering")

    p = sub.add_parser("tune", help="hyperparameter search over the config's hpo block")
    _common(p)
    p.add_argument("--model", type=Path)
    p.add_argument("--synthetic", type=int, metavar="N")
    p.add_argument("--train-limit", type=int, metavar="N")
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--trials", type=int, help="overrides hpo.n_trials")

    p = sub.add_parser("export", help="lower a trained run directory to a bundle")
    _common(p)
    p.add_argument("run", type=Path, help="directory written by train")

    for name, text in (("infer", "integer inference with a bundle"), ("eval", "bundle accuracy on a labelled CSV")):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.add_argument("bundle", type=Path)

    p = sub.add_parser("template", help="print a config listing every layer for per-layer edits")
    _common(p)
    p.add_argument("--model", type=Path)

    p = sub.add_parser("report", help="summary table and figures from run logs")
    _common(p)
    p.add_argument("logs", type=Path, nargs="+", help="JSONL run logs")
    return parser


# helpers ----------------------------------------------------------------------------------

def _config(args):
    if args.config is None:
        config = default_config()
    elif not args.config.exists() and args.config.suffix == "" and args.config.name in preset_names():
        config = load_preset(args.config.name)
    else:
        config = load_config(args.config)
    if args.seed is not None:
        config = update_config(config, {"training.seed": args.seed, "hpo.seed": args.seed})
    return config


def _dataset(args, config):
    if args.data is None and not args.synthetic:
        log.warning("no --data given; using 5000 synthetic rows")
    data = load_data(args.data, args.val_fraction, config.training.seed, synthetic=args.synthetic)
    return data.limit_train(args.train_limit)


def _description(args, data):
    if args.model:
        return load_description(args.model)
    return hlf_mlp_description(features=data.X.shape[1], classes=data.n_classes)


def _with_data_meta(deployed, data):
    meta = dict(deployed.meta, mean=data.mean.tolist(), std=data.std.tolist(),
                class_names=list(data.class_names), feature_names=list(data.feature_names))
    return dataclasses.replace(deployed, meta=meta)


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# subcommands ------------------------------------------------------------------------------

def cmd_train(args) -> int:
    from .training import train_model

    config = _config(args)
    data = _dataset(args, config)
    desc = _description(args, data)
    out = args.out or Path("run")
    out.mkdir(parents=True, exist_ok=True)
    model = replace_layers(desc, config, dtype=DTYPES[args.dtype])
    model, record = train_model(model, config, training_data=data.train, validation_data=data.val)
    dump_config(config, out / "config.yaml")
    _write_json(out / "model.json", desc)
    _write_json(out / "data.json", {"mean": data.mean.tolist(), "std": data.std.tolist(),
                                    "class_names": list(data.class_names),
                                    "feature_names": list(data.feature_names), "dtype": args.dtype})
    save_checkpoint(model, out / "checkpoint.npz")
    bundle = None
    if not args.no_bundle:
        bundle = export_bundle(_with_data_meta(finalize_model(model), data), out / "model.bundle")
        record.artifact = str(bundle)
    log_run(record, out / "run.jsonl", bundle_path=bundle)
    s = record.summary
    print(f"run {out}: accuracy={s.get('accuracy', float('nan')):.4f} sparsity={s['sparsity']:.4f} "
          f"ebops={s['ebops']:.0f} config={record.config_hash[:12]}")
    if bundle is not None:
        print(f"bundle {bundle}")
    return 0


def cmd_tune(args) -> int:
    from .hpo import config_objective, run_study

    config = _config(args)
    h = config.hpo
    if not h.search_space:
        raise ConfigError("search space is empty", path="hpo.search_space")
    data = _dataset(args, config)
    desc = _description(args, data)
    out = args.out or Path("tune")
    out.mkdir(parents=True, exist_ok=True)
    tracker = RunTracker(out / "trials.jsonl")
    objective = config_objective(config, data, h.objectives,
                                 model_factory=lambda cfg: replace_layers(desc, cfg, dtype=DTYPES[args.dtype]))
    study = run_study(h.search_space, args.trials or h.n_trials, objective, h.objectives, h.directions,
                      h.sampler, h.seed, args.workers or h.workers, tracker)
    best = study.best()
    front = study.pareto()
    tracker.log({"type": "study", "config_hash": config_hash(config), "n_trials": len(study.trials),
                 "failed": sum(t.status == "failed" for t in study.trials),
                 "best": best.id if best else None, "pareto": [t.id for t in front]})
    if best is None:
        print("no trial completed", file=sys.stderr)
        return 1
    print(f"best trial {best.id}: {dict(zip(h.objectives, best.values))} params={best.params}")
    print("pareto front:")
    for t in front:
        print(f"  trial {t.id}: {dict(zip(h.objectives, t.values))} params={t.params}")
    return 0


def cmd_export(args) -> int:
    run = args.run
    for name in ("config.yaml", "model.json", "checkpoint.npz"):
        if not (run / name).exists():
            raise ConfigError(f"run directory is missing {name}", path=str(run))
    config = load_config(run / "config.yaml")
    meta = json.loads((run / "data.json").read_text()) if (run / "data.json").exists() else {}
    model = replace_layers(load_description(run / "model.json"), config,
                           dtype=DTYPES[meta.get("dtype", args.dtype)])
    load_checkpoint(model, run / "checkpoint.npz")
    deployed = finalize_model(model)
    if meta:
        deployed = dataclasses.replace(deployed, meta=dict(deployed.meta, **{k: v for k, v in meta.items()
                                                                             if k != "dtype"}))
    path = export_bundle(deployed, args.out or run / "model.bundle")
    print(f"bundle {path} ebops={deployed.ebops():.0f}")
    return 0


def _bundle_inputs(args, require_label: bool):
    if args.data is None:
        raise DataError("--data is required")
    deployed = import_bundle(args.bundle)
    n_features = int(np.prod(deployed.input_shape))
    X, labels, _, _ = read_csv_table(args.data, n_features, require_label=require_label, encode=False)
    meta = deployed.meta
    if "mean" in meta:
        X = (X - np.asarray(meta["mean"])) / np.asarray(meta["std"])
    X = X.reshape((len(X),) + tuple(deployed.input_shape))
    y = None
    if labels is not None:
        classes = meta.get("class_names")
        if not classes:
            X_, y, _, classes = read_csv_table(args.data, n_features)
        else:
            y = encode_with_classes(labels, classes, args.data)
    return deployed, X, y


def cmd_infer(args) -> int:
    deployed, X, _ = _bundle_inputs(args, require_label=False)
    scores = int_infer(deployed, X)
    pred = np.argmax(scores, axis=1)
    classes = deployed.meta.get("class_names") or []
    lines = ["row,prediction," + ",".join(f"score_{j}" for j in range(scores.shape[1]))]
    for r, (p, row) in enumerate(zip(pred, scores)):
        label = classes[p] if p < len(classes) else str(p)
        lines.append(f"{r},{label}," + ",".join(repr(float(v)) for v in row))
    text = "\n".join(lines) + "\n"
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(text)
        print(f"predictions {args.out} ({len(pred)} rows)")
    else:
        sys.stdout.write(text)
    return 0


def cmd_eval(args) -> int:
    deployed, X, y = _bundle_inputs(args, require_label=True)
    pred = np.argmax(int_infer(deployed, X), axis=1)
    result = {"rows": int(len(y)), "accuracy": float(np.mean(pred == y)), "ebops": deployed.ebops()}
    print(json.dumps(result, sort_keys=True))
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        _write_json(args.out, result)
    return 0


def cmd_template(args) -> int:
    config = _config(args)
    desc = load_description(args.model) if args.model else hlf_mlp_description()
    text = template_layer_config(replace_layers(desc, None, dtype=DTYPES[args.dtype]), config)
    if args.out:
        args.out.write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_report(args) -> int:
    from .plotting import plot_accuracy_vs_ebops, plot_layer_sparsity, plot_training_curves
    from .report import metrics_report, summaries

    events = []
    for path in args.logs:
        try:
            events.extend(read_jsonl(path))
        except OSError as exc:
            raise DataError(f"cannot read run log {path}: {exc}") from None
        except ValueError as exc:
            raise DataError(str(exc)) from None
    runs = summaries(events)
    if not runs:
        raise DataError("run logs contain no finished run (no summary line)")
    out = args.out or Path("report")
    out.mkdir(parents=True, exist_ok=True)
    markdown = metrics_report(runs, "markdown")
    (out / "report.md").write_text(markdown)
    (out / "report.csv").write_text(metrics_report(runs, "csv"))
    figures = [plot_accuracy_vs_ebops(runs, out / "accuracy_vs_ebops.png"),
               plot_layer_sparsity(runs, out / "layer_sparsity.png")]
    if any(e.get("type") == "epoch" for e in events):
        figures.append(plot_training_curves(events, out / "training_curves.png"))
    print(REPORT_BEGIN)
    sys.stdout.write(markdown)
    print(REPORT_END)
    for path in [out / "report.md", out / "report.csv", *figures]:
        print(f"wrote {path}")
    return 0


COMMANDS = {"train": cmd_train, "tune": cmd_tune, "export": cmd_export, "infer": cmd_infer,
            "eval": cmd_eval, "template": cmd_template, "report": cmd_report}


def main(argv=None) -> int:
    level = os.environ.get("PQFORGE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        with ad.default_dtype(DTYPES[args.dtype]):
            return COMMANDS[args.command](args)
    except (ConfigError, UnsupportedArchitectureError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except BrokenPipeError:
        # reader went away (e.g. piped into head); stop quietly
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 0
    except (PQForgeError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
