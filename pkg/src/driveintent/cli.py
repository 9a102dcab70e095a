"""Command-line entry point: ``driveintent <subcommand> [options]``.

Option values resolve in the order: command-line flag, environment
variable ``DRIVEINTENT_<OPTION>`` (upper case, dashes as underscores),
``--config`` JSON file, built-in default.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import metrics as M
from .checkpoint import load_checkpoint, save_checkpoint
from .discretize import (
    DiscretizerConfig,
    discretize_velocity,
    discretize_yaw,
    load_symbols,
    save_symbols,
    symbolize,
    symbolize_traces,
)
from .models import MODEL_KINDS, ModelConfig, build
from .traces import (
    CLASS_ORDER,
    DATASET_ORDER,
    SynthConfig,
    TraceFormatError,
    class_counts,
    format_counts,
    load_csv,
    read_trace_rows,
    save_csv,
    synth_dataset,
)
from .training import evaluate, predict_stream, train

ENV_PREFIX = "DRIVEINTENT_"
CLASS_ORDER_TAG = "".join(m.value for m in CLASS_ORDER)
log = logging.getLogger("driveintent")


class UsageError(ValueError):
    pass


# option name -> (type, default)
OPTIONS = {
    "seed": (int, 0),
    "counts": (str, "990,770,660,550"),
    "model": (str, "proposed"),
    "epochs": (int, 60),
    "hidden": (int, 64),
    "attention_dim": (int, 32),
    "layers": (int, 1),
    "lr": (float, 1e-3),
    "batch_size": (int, 32),
    "patience": (int, 10),
    "val_fraction": (float, 0.15),
    "threads": (int, 1),
    "velocity_threshold": (float, 10.0),
    "yaw_threshold": (float, 3.0),
    "train_fraction": (float, 0.7),
    "split": (str, "test"),
    "data": (str, None),
    "out": (str, None),
    "checkpoint": (str, None),
}


def _add(parser, *names):
    for name in names:
        flag = "--" + name.replace("_", "-")
        typ = OPTIONS[name][0]
        kwargs = {"dest": name, "default": None, "type": typ}
        if name == "model":
            kwargs["choices"] = MODEL_KINDS
        if name == "split":
            kwargs["choices"] = ("test", "all")
        parser.add_argument(flag, **kwargs)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="driveintent", description="Intersection driver-intent sequence labelling.")
    parser.add_argument("--config", help="JSON file of option defaults")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic trace CSV")
    _add(p, "out", "seed", "counts")

    p = sub.add_parser("discretize", help="convert a trace CSV into a symbol file")
    _add(p, "data", "out", "velocity_threshold", "yaw_threshold")

    data_opts = ("data", "seed", "counts", "velocity_threshold", "yaw_threshold", "train_fraction")
    model_opts = ("epochs", "hidden", "attention_dim", "layers", "lr", "batch_size", "patience", "val_fraction", "threads")

    p = sub.add_parser("train", help="discretize, split, train and report on the test split")
    _add(p, "out", "model", *data_opts, *model_opts)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add(p, "checkpoint", "out", "split", *data_opts)

    p = sub.add_parser("compare", help="train and score all three models on one split")
    _add(p, "out", *data_opts, *model_opts)

    p = sub.add_parser("predict", help="stream per-tick intent for one trace (file or stdin)")
    _add(p, "checkpoint", "data", "velocity_threshold", "yaw_threshold")
    return parser


def resolve(args, environ=None) -> dict:
    """Fill unset options from the environment, the config file, then defaults."""
    environ = os.environ if environ is None else environ
    file_cfg = {}
    if args.config:
        with open(args.config) as fh:
            file_cfg = json.load(fh)
        if not isinstance(file_cfg, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = set(file_cfg) - set(OPTIONS)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    opts = {}
    for name, (typ, default) in OPTIONS.items():
        if not hasattr(args, name):
            continue
        value = getattr(args, name)
        source = "flag"
        if value is None and ENV_PREFIX + name.upper() in environ:
            value, source = environ[ENV_PREFIX + name.upper()], "environment"
        elif value is None and name in file_cfg:
            value, source = file_cfg[name], "config file"
        if value is None:
            opts[name] = default
            continue
        try:
            opts[name] = typ(value)
        except (TypeError, ValueError):
            raise UsageError(f"bad value for {name} from {source}: {value!r}") from None
    opts["_explicit"] = {n for n in OPTIONS if getattr(args, n, None) is not None or ENV_PREFIX + n.upper() in environ or n in file_cfg}
    return opts


def parse_counts(text: str) -> dict:
    try:
        values = [int(x) for x in str(text).split(",")]
    except ValueError:
        raise UsageError(f"--counts must be four integers S,P,R,L; got {text!r}") from None
    if len(values) != 4 or min(values) <= 0:
        raise UsageError(f"--counts must be four positive integers S,P,R,L; got {text!r}")
    return dict(zip(DATASET_ORDER, values))


def disc_config(opts) -> DiscretizerConfig:
    return DiscretizerConfig.symmetric(opts["velocity_threshold"], opts["yaw_threshold"])


def _require_input(path):
    if path is None:
        raise UsageError("--data is required")
    if path != "-" and not Path(path).is_file():
        raise UsageError(f"input file not found: {path}")


def _prepare_out_dir(path, required=True):
    if path is None:
        if required:
            raise UsageError("--out is required")
        return None
    out = Path(path)
    if out.exists() and not out.is_dir():
        raise UsageError(f"--out must be a directory: {path}")
    if not out.parent.exists():
        raise UsageError(f"parent directory does not exist: {out.parent}")
    out.mkdir(exist_ok=True)
    return out


def _is_trace_csv(path) -> bool:
    with open(path) as fh:
        first = fh.readline()
    return first.strip().startswith("id,")


def load_sequences(opts, disc: DiscretizerConfig):
    """Symbol sequences from ``--data`` (trace CSV or symbol file) or a fresh synthetic set."""
    path = opts.get("data")
    if path is None:
        cfg = SynthConfig(seed=opts["seed"]).with_counts(parse_counts(opts["counts"]))
        traces = synth_dataset(cfg)
        source = {"source": "synthetic", "counts": opts["counts"], "synth_seed": opts["seed"]}
        return symbolize_traces(traces, disc), source
    _require_input(path)
    if _is_trace_csv(path):
        seqs = symbolize_traces(load_csv(path), disc)
    else:
        seqs = load_symbols(path)
    return seqs, {"source": str(path)}


def model_config(opts) -> ModelConfig:
    return ModelConfig(
        hidden=opts["hidden"],
        attention_dim=opts["attention_dim"],
        layers=opts["layers"],
        learning_rate=opts["lr"],
        batch_size=opts["batch_size"],
        max_epochs=opts["epochs"],
        patience=opts["patience"],
        val_fraction=opts["val_fraction"],
        seed=opts["seed"],
    )


def _progress(kind):
    def report(row):
        log.info(
            "%s epoch %d train_loss %.5f train_acc %.4f val_loss %.5f val_acc %.4f",
            kind, row["epoch"], row["train_loss"], row["train_accuracy"], row["val_loss"], row["val_accuracy"],
        )
    return report


def write_history(history, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        keys = ("epoch", "train_loss", "train_accuracy", "val_loss", "val_accuracy")
        writer.writerow(keys)
        for row in history:
            writer.writerow([row["epoch"]] + [repr(float(row[k])) for k in keys[1:]])


def write_predictions(seqs, records, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("id", "step", "truth", "predicted"))
        for seq, rec in zip(seqs, records):
            for t, (truth, pred) in enumerate(zip(seq.labels, rec.labels)):
                writer.writerow((seq.id, t, truth.value, pred.value))


def write_reports(report, out: Path, title: str):
    text = M.format_report(report, title)
    (out / "report.txt").write_text(text)
    M.write_flat(report, out / "metrics.csv")
    M.write_confusion_csv(report.confusion, out / "confusion.csv")
    return text


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(opts, stdout):
    if opts["out"] is None:
        raise UsageError("--out is required")
    out = Path(opts["out"])
    if not out.parent.exists():
        raise UsageError(f"parent directory does not exist: {out.parent}")
    counts = parse_counts(opts["counts"])
    traces = synth_dataset(SynthConfig(seed=opts["seed"]).with_counts(counts))
    save_csv(traces, out)
    print(format_counts(class_counts(traces)), file=stdout)


def cmd_discretize(opts, stdout):
    _require_input(opts["data"])
    if opts["out"] is None:
        raise UsageError("--out is required")
    seqs = symbolize_traces(load_csv(opts["data"]), disc_config(opts))
    save_symbols(seqs, opts["out"])
    print(f"{len(seqs)} sequences", file=stdout)


def _train_one(kind, train_set, opts):
    model = build(model_config(opts), kind=kind)
    return train(model, train_set, threads=opts["threads"], progress=_progress(kind))


def cmd_train(opts, stdout):
    out = _prepare_out_dir(opts["out"])
    disc = disc_config(opts)
    seqs, source = load_sequences(opts, disc)
    train_set, test_set = M.split_dataset(seqs, opts["train_fraction"], seed=opts["seed"])
    model = _train_one(opts["model"], train_set, opts)
    model.meta.update({
        "class_order": CLASS_ORDER_TAG,
        "discretizer": {"velocity_threshold": disc.velocity_threshold, "yaw_threshold": disc.yaw_high},
        "train_fraction": opts["train_fraction"],
        "split_seed": opts["seed"],
        "data": source,
    })
    save_checkpoint(model, out / "checkpoint.ckpt")
    write_history(model.history, out / "history.csv")
    report, _ = evaluate(model, test_set)
    text = write_reports(report, out, f"{model.kind} on test split ({len(test_set)} sequences)")
    stdout.write(text)
    print(f"test accuracy {report.accuracy:.6f}", file=stdout)


def _eval_setup(opts):
    if opts["checkpoint"] is None:
        raise UsageError("--checkpoint is required")
    if not Path(opts["checkpoint"]).is_file():
        raise UsageError(f"checkpoint not found: {opts['checkpoint']}")
    model = load_checkpoint(opts["checkpoint"])
    meta = model.meta
    if meta.get("class_order", CLASS_ORDER_TAG) != CLASS_ORDER_TAG:
        raise ValueError(f"checkpoint class order {meta['class_order']} does not match {CLASS_ORDER_TAG}")
    # thresholds and split settings default to what the checkpoint was trained with
    explicit = opts["_explicit"]
    stored = meta.get("discretizer", {})
    for key in ("velocity_threshold", "yaw_threshold"):
        if key in opts and key not in explicit and key in stored:
            opts[key] = stored[key]
    data = meta.get("data", {})
    for key, mkey in (("seed", "split_seed"), ("train_fraction", "train_fraction")):
        if key in opts and key not in explicit and mkey in meta:
            opts[key] = meta[mkey]
    if "counts" in opts and "counts" not in explicit and data.get("source") == "synthetic":
        opts["counts"] = data["counts"]
    return model


def cmd_eval(opts, stdout):
    model = _eval_setup(opts)
    out = _prepare_out_dir(opts["out"])
    seqs, _ = load_sequences(opts, disc_config(opts))
    if opts["split"] == "test":
        _, seqs = M.split_dataset(seqs, opts["train_fraction"], seed=opts["seed"])
    report, records = evaluate(model, seqs)
    text = write_reports(report, out, f"{model.kind} on {opts['split']} split ({len(seqs)} sequences)")
    write_predictions(seqs, records, out / "predictions.csv")
    stdout.write(text)


def cmd_compare(opts, stdout):
    out = _prepare_out_dir(opts["out"], required=False)
    seqs, _ = load_sequences(opts, disc_config(opts))
    train_set, test_set = M.split_dataset(seqs, opts["train_fraction"], seed=opts["seed"])
    rows = []
    for kind in MODEL_KINDS:
        try:
            model = _train_one(kind, train_set, opts)
            report, _ = evaluate(model, test_set)
        except Exception as exc:  # one failed model should not hide the others
            rows.append((kind, None, str(exc)))
            continue
        rows.append((kind, report, None))
    lines = [f"{'model':<15}{'accuracy':>10}{'recall':>10}{'f1':>10}"]
    for kind, report, err in rows:
        if report is None:
            lines.append(f"{kind:<15}  failed: {err}")
        else:
            lines.append(f"{kind:<15}{report.accuracy:>10.4f}{report.recall:>10.4f}{report.f1:>10.4f}")
    table = "\n".join(lines) + "\n"
    stdout.write(table)
    if out is not None:
        (out / "compare.txt").write_text(table)
        with open(out / "compare.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("model", "accuracy", "recall", "f1"))
            for kind, report, _ in rows:
                if report is not None:
                    writer.writerow((kind, repr(report.accuracy), repr(report.recall), repr(report.f1)))
    failed = [k for k, r, _ in rows if r is None]
    if failed:
        raise RuntimeError(f"model(s) failed: {', '.join(failed)}")
    return rows


def cmd_predict(opts, stdout, stdin=None):
    model = _eval_setup(opts)
    disc = disc_config(opts)
    path = opts["data"] or "-"
    if path != "-":
        _require_input(path)
    fh = (stdin or sys.stdin) if path == "-" else open(path, newline="")
    try:
        symbols = []
        trace_id = None
        for rownum, row in read_trace_rows(fh, require=("velocity", "yaw_rate")):
            rid = row.get("id")
            if trace_id is None:
                trace_id = rid
            elif rid != trace_id:
                raise TraceFormatError(f"row {rownum}: second trace id {rid!r}; predict takes one trace")
            try:
                v = float(row["velocity"])
                y = float(row["yaw_rate"])
            except ValueError:
                raise TraceFormatError(f"row {rownum}: malformed tick {row}") from None
            if not (np.isfinite(v) and np.isfinite(y)) or v < 0:
                raise TraceFormatError(f"row {rownum}: invalid velocity/yaw-rate ({v}, {y})")
            symbols.append(symbolize(discretize_velocity(v, disc), discretize_yaw(y, disc)))
            probs = predict_stream(model, symbols)
            step = len(symbols) - 1
            label = CLASS_ORDER[int(np.argmax(probs))].value
            stdout.write(f"{step}," + ",".join(repr(float(p)) for p in probs) + f",{label}\n")
            stdout.flush()
        if not symbols:
            raise TraceFormatError("no ticks in input")
    finally:
        if fh is not sys.stdin and fh is not stdin:
            fh.close()


COMMANDS = {
    "synth": cmd_synth,
    "discretize": cmd_discretize,
    "train": cmd_train,
    "eval": cmd_eval,
    "compare": cmd_compare,
    "predict": cmd_predict,
}


def main(argv=None, stdout=None, stdin=None, environ=None) -> int:
    stdout = stdout or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        opts = resolve(args, environ)
        if args.command == "predict":
            cmd_predict(opts, stdout, stdin)
        else:
            COMMANDS[args.command](opts, stdout)
    except Exception as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 2 if isinstance(exc, UsageError) else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
