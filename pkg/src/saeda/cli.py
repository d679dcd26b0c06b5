"""Command-line entry point: generate, train, evaluate, plot, diagnose.

Run layout under ``output_dir``::

    data/{source,target_labeled,target_unlabeled}/   dataset containers
    data/truth.json                                  hidden unlabeled ground truth
    model/stage{1,2,3}/  model/checkpoints.json  model/training_log.jsonl
    effective_config.json  run_meta.json
    eval/report.json  eval/confusion.csv  eval/embedding.csv
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import platform
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__, config as cfgmod, kernels, storage
from .datagen import Dataset, Task, generate_paired, load_dataset, save_dataset, save_truth
from .eval import (
    EvalReport,
    MetricError,
    alignment_diagnostic,
    centroid_discrepancy,
    classification_metrics,
    export_embedding,
    regression_metrics,
    write_report,
)
from .model import HeadKind, encode, load_model
from .pipeline import PipelineError, build_model_for, predict, run_full_pipeline, train_stage1_autoencoders

log = logging.getLogger("saeda")

EXIT_OK, EXIT_ERROR, EXIT_CAPPED = 0, 1, 2
SPLITS = ("source", "target_labeled", "target_unlabeled")


class CLIError(Exception):
    pass


def _dataset_paths(doc) -> dict:
    if "dataset_dirs" in doc:
        return {k: Path(v) for k, v in doc["dataset_dirs"].items()}
    data = Path(doc.get("output_dir", "runs/default")) / "data"
    return {**{s: data / s for s in SPLITS}, "truth": data / "truth.json"}


def _load_doc(args) -> dict:
    doc = cfgmod.load_config(args.config)
    return cfgmod.apply_overrides(
        doc,
        seed=getattr(args, "seed", None),
        output=getattr(args, "output", None),
        beta=getattr(args, "beta", None),
        task=getattr(args, "task", None),
        cws_grad=getattr(args, "cws_grad", None),
        skip_stage3=getattr(args, "skip_stage3", None),
    )


def _write_meta(out: Path, command: str) -> None:
    meta = {
        "command": command,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "saeda_version": __version__,
        "kernel_backend": kernels.BACKEND,
        "python": platform.python_version(),
    }
    (out / "run_meta.json").write_text(json.dumps(meta, indent=2) + "\n")


# -- commands -------------------------------------------------------------------------------


def cmd_generate(args) -> int:
    doc = _load_doc(args)
    if "dataset" not in doc:
        raise CLIError("generate needs an inline 'dataset' section")
    dcfg = cfgmod.dataset_config(doc)
    paths = _dataset_paths(doc)
    src, tl, tu, truth = generate_paired(dcfg)
    for split, d in zip(SPLITS, (src, tl, tu)):
        save_dataset(d, paths[split])
    save_truth({"task": dcfg.task.value, **truth}, paths["truth"])
    print(f"{'split':<18}{'samples':>8}  {'shape':<12}{'labels':>7}")
    for split, d in zip(SPLITS, (src, tl, tu)):
        shape = "x".join(map(str, d.shape))
        print(f"{split:<18}{len(d):>8}  {shape:<12}{'yes' if d.labels is not None else 'hidden':>7}")
    print(f"wrote {paths['source'].parent}")
    return EXIT_OK


def _load_splits(doc):
    paths = _dataset_paths(doc)
    try:
        return [load_dataset(paths[s]) for s in SPLITS]
    except storage.MissingManifestError as exc:
        raise CLIError(f"{exc}; run `saeda generate` first") from None


def cmd_train(args) -> int:
    doc = _load_doc(args)
    tcfg = cfgmod.training_config(doc)
    src, tl, tu = _load_splits(doc)
    out = Path(doc.get("output_dir", "runs/default"))
    out.mkdir(parents=True, exist_ok=True)
    (out / "effective_config.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    _write_meta(out, "train")
    result = run_full_pipeline(src, tl, tu, tcfg, output_dir=out / "model", resume=args.resume)
    for r in result.reports:
        print(f"stage {r.stage}: epochs={r.epochs} loss={r.final_loss:.6g} converged={r.converged}")
    if not all(r.converged for r in result.reports):
        capped = [r.stage for r in result.reports if not r.converged]
        warnings.warn(f"stages {capped} stopped at the epoch cap before converging")
        print(f"warning: stages {capped} hit the epoch cap", file=sys.stderr)
        return EXIT_CAPPED
    return EXIT_OK


def _latest_checkpoint(model_dir: Path) -> Path:
    if (model_dir / storage.MANIFEST).is_file():
        return model_dir
    for stage in (3, 2, 1):
        if (model_dir / f"stage{stage}" / storage.MANIFEST).is_file():
            return model_dir / f"stage{stage}"
    raise CLIError(f"no model checkpoint under {model_dir}")


def evaluate_run(model, unlabeled: Dataset, truth: dict, source: Dataset | None = None) -> EvalReport:
    truth_task = Task(truth.get("task") or ("regression" if truth.get("targets") is not None else "classification"))
    model_task = Task.REGRESSION if model.kind is HeadKind.LINEAR_REGRESSOR else Task.CLASSIFICATION
    if truth_task is not model_task:
        raise CLIError(f"task mismatch: model is a {model.kind.value}, truth is for {truth_task.value}")
    labels = np.asarray(truth["labels"], dtype=np.int64)
    preds = predict(model, unlabeled)
    names = unlabeled.class_names
    num_classes = len(names) if names else int(labels.max()) + 1
    report = EvalReport(task=model_task.value, num_samples=len(unlabeled), class_names=names)
    if model_task is Task.REGRESSION:
        report.r_squared, report.mse = regression_metrics(truth["targets"], preds.values)
    else:
        acc, conf = classification_metrics(labels, preds.values, num_classes)
        report.accuracy, report.confusion = acc, conf.tolist()
    if source is not None and source.labels is not None:
        ft = encode(model.target_ae, unlabeled.samples)
        fs = encode(model.source_ae, source.samples)
        report.matched_discrepancy, report.mismatched_discrepancy = centroid_discrepancy(fs, source.labels, ft, labels)
    if len(unlabeled) >= 3:
        report.embedding = export_embedding(model, unlabeled)
        report.embedding_labels = labels
    return report


def cmd_evaluate(args) -> int:
    ckpt = _latest_checkpoint(Path(args.model))
    model = load_model(ckpt)
    data_dir = Path(args.data)
    unlabeled = load_dataset(data_dir)
    truth_path = Path(args.truth) if args.truth else data_dir.parent / "truth.json"
    truth = json.loads(truth_path.read_text())
    source = None
    source_dir = Path(args.source) if args.source else data_dir.parent / "source"
    if (source_dir / storage.MANIFEST).is_file():
        source = load_dataset(source_dir)
    report = evaluate_run(model, unlabeled, truth, source)
    out = Path(args.output) if args.output else ckpt.parent.parent / "eval"
    write_report(out, report)
    if report.task == "regression":
        print(f"mse={report.mse!r}")
        print(f"metric={report.r_squared!r}")
    else:
        print(f"metric={report.accuracy!r}")
    return EXIT_OK


def cmd_plot(args) -> int:
    from .plotting import load_plot_input, plot_confusion, plot_embedding

    kind, payload = load_plot_input(args.input)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if kind == "embedding":
        plot_embedding(*payload, out)
    else:
        plot_confusion(*payload, out)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    doc = _load_doc(args)
    tcfg = cfgmod.training_config(doc)
    src, tl, tu = _load_splits(doc)
    truth = json.loads(_dataset_paths(doc)["truth"].read_text())
    held_out = Dataset(tu.samples, "target_unlabeled", labels=truth["labels"], class_names=tu.class_names)
    model = build_model_for(src, tl, tcfg)
    before = alignment_diagnostic(model, src, held_out)
    train_stage1_autoencoders(model, src, tl, tcfg)
    after = alignment_diagnostic(model, src, held_out)
    result = {
        "before": {"matched": before[0], "mismatched": before[1], "ratio": before[0] / before[1]},
        "after": {"matched": after[0], "mismatched": after[1], "ratio": after[0] / after[1]},
    }
    out = Path(doc.get("output_dir", "runs/default"))
    out.mkdir(parents=True, exist_ok=True)
    (out / "diagnose.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    for when in ("before", "after"):
        r = result[when]
        print(f"{when:<7} matched={r['matched']:.5g} mismatched={r['mismatched']:.5g} ratio={r['ratio']:.4f}")
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="saeda", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def run_opts(sp, training=False):
        sp.add_argument("--config", default="default", help="config path or bundled name (default, regression)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--output", help="override output_dir")
        sp.add_argument("--task", choices=[t.value for t in Task])
        if training:
            sp.add_argument("--beta", type=float)
            sp.add_argument("--cws-grad", dest="cws_grad", choices=["both", "target-only"])
            sp.add_argument("--skip-stage3", dest="skip_stage3", action="store_true")

    run_opts(sub.add_parser("generate", help="generate synthetic paired datasets"))
    t = sub.add_parser("train", help="run the staged training pipeline")
    run_opts(t, training=True)
    t.add_argument("--resume", choices=["stage1", "stage2", "stage3"])
    d = sub.add_parser("diagnose", help="class alignment before/after stage 1")
    run_opts(d, training=True)

    e = sub.add_parser("evaluate", help="score a trained model on the unlabeled split")
    e.add_argument("--model", required=True, help="checkpoint tree or stage directory")
    e.add_argument("--data", required=True, help="target_unlabeled dataset directory")
    e.add_argument("--truth", help="truth.json (default: next to --data)")
    e.add_argument("--source", help="source dataset for the discrepancy diagnostic")
    e.add_argument("--output", help="report directory (default: <run>/eval)")

    pl = sub.add_parser("plot", help="render embedding.csv / confusion.csv / report.json")
    pl.add_argument("input")
    pl.add_argument("--out", required=True)
    return p


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "evaluate": cmd_evaluate,
            "plot": cmd_plot, "diagnose": cmd_diagnose}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    warnings.filterwarnings("ignore", message="Using padding='same' with even kernel")
    try:
        return COMMANDS[args.command](args)
    except (CLIError, cfgmod.ConfigError, storage.ContainerError, PipelineError, MetricError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
