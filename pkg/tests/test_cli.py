import io
import json

import numpy as np
import pytest

from driveintent.checkpoint import load_checkpoint
from driveintent.cli import main
from driveintent.discretize import load_symbols, symbolize_traces
from driveintent.metrics import read_confusion_csv, read_flat, split_dataset
from driveintent.traces import CSV_HEADER, SynthConfig, load_csv, synth_dataset
from driveintent.training import evaluate

FAST = ["--counts", "4,4,4,4", "--epochs", "2", "--hidden", "6", "--attention-dim", "4"]


def run(argv, stdin=None, environ=None):
    out = io.StringIO()
    code = main(argv, stdout=out, stdin=stdin, environ=environ or {})
    return code, out.getvalue()


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    code, text = run(["train", "--out", str(out), "--seed", "3", *FAST])
    assert code == 0
    return out, text


def test_synth_writes_csv_and_summary(tmp_path):
    path = tmp_path / "t.csv"
    code, text = run(["synth", "--out", str(path), "--counts", "3,2,2,1", "--seed", "4"])
    assert code == 0
    assert text.strip() == "S:3 P:2 R:2 L:1"
    traces = load_csv(path)
    assert traces == synth_dataset(SynthConfig(seed=4).with_counts([3, 2, 2, 1]))


def test_synth_is_byte_reproducible(tmp_path):
    for name in ("a", "b"):
        assert run(["synth", "--out", str(tmp_path / name), "--counts", "2,1,1,1"])[0] == 0
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_discretize(tmp_path):
    run(["synth", "--out", str(tmp_path / "t.csv"), "--counts", "1,1,1,1"])
    code, text = run(["discretize", "--data", str(tmp_path / "t.csv"), "--out", str(tmp_path / "s.tsv")])
    assert code == 0 and text.strip() == "4 sequences"
    assert load_symbols(tmp_path / "s.tsv") == symbolize_traces(load_csv(tmp_path / "t.csv"))


def test_train_outputs(trained):
    out, text = trained
    for name in ("checkpoint.ckpt", "history.csv", "report.txt", "metrics.csv", "confusion.csv"):
        assert (out / name).is_file()
    assert text.splitlines()[-1].startswith("test accuracy ")
    model = load_checkpoint(out / "checkpoint.ckpt")
    assert model.config.hidden == 6 and model.config.max_epochs == 2
    assert model.meta["class_order"] == "SLRP"
    assert len((out / "history.csv").read_text().splitlines()) == len(model.history) + 1
    flat = read_flat(out / "metrics.csv")
    assert float(text.splitlines()[-1].split()[-1]) == pytest.approx(float(flat["accuracy"]), abs=1e-6)


def test_train_report_matches_library(trained):
    out, _ = trained
    model = load_checkpoint(out / "checkpoint.ckpt")
    seqs = symbolize_traces(synth_dataset(SynthConfig(seed=3).with_counts([4, 4, 4, 4])))
    _, test = split_dataset(seqs, 0.7, seed=3)
    report, _ = evaluate(model, test)
    assert read_confusion_csv(out / "confusion.csv") == report.confusion


def test_eval_reuses_checkpoint_settings(trained, tmp_path):
    out, _ = trained
    code, text = run(["eval", "--checkpoint", str(out / "checkpoint.ckpt"), "--out", str(tmp_path)])
    assert code == 0
    assert (tmp_path / "report.txt").read_text() == text
    assert read_flat(tmp_path / "metrics.csv") == read_flat(out / "metrics.csv")
    rows = (tmp_path / "predictions.csv").read_text().splitlines()
    assert rows[0] == "id,step,truth,predicted"
    assert len(rows) - 1 == read_confusion_csv(tmp_path / "confusion.csv").total


def test_eval_all_split(trained, tmp_path):
    out, _ = trained
    code, _ = run(["eval", "--checkpoint", str(out / "checkpoint.ckpt"), "--out", str(tmp_path), "--split", "all"])
    assert code == 0
    assert read_confusion_csv(tmp_path / "confusion.csv").total == 16 * 110


def _one_trace_csv(tmp_path):
    traces = synth_dataset(SynthConfig(seed=8).with_counts([1, 1, 1, 1]))
    lines = [",".join(CSV_HEADER)]
    tr = traces[1]
    for t in range(tr.length):
        lines.append(f"{tr.id},{t},{float(tr.velocity[t])!r},{float(tr.yaw_rate[t])!r},{float(tr.acceleration[t])!r},{tr.maneuver.value}")
    path = tmp_path / "one.csv"
    path.write_text("\n".join(lines) + "\n")
    return path, tr


def test_predict_streams_one_line_per_tick(trained, tmp_path):
    out, _ = trained
    path, tr = _one_trace_csv(tmp_path)
    ckpt = str(out / "checkpoint.ckpt")
    code, text = run(["predict", "--checkpoint", ckpt, "--data", str(path)])
    assert code == 0
    lines = text.splitlines()
    assert len(lines) == tr.length
    model = load_checkpoint(out / "checkpoint.ckpt")
    seq = symbolize_traces([tr])[0]
    last = model.forward(seq).probs[-1]
    fields = lines[-1].split(",")
    assert fields[0] == str(tr.length - 1)
    probs = np.array([float(x) for x in fields[1:5]])
    assert np.array_equal(probs, last)
    assert fields[5] == "SLRP"[int(np.argmax(last))]
    for line in lines:
        assert abs(sum(float(x) for x in line.split(",")[1:5]) - 1) < 1e-9


def test_predict_reads_stdin(trained, tmp_path):
    out, _ = trained
    path, _ = _one_trace_csv(tmp_path)
    ckpt = str(out / "checkpoint.ckpt")
    _, from_file = run(["predict", "--checkpoint", ckpt, "--data", str(path)])
    code, from_stdin = run(["predict", "--checkpoint", ckpt], stdin=io.StringIO(path.read_text()))
    assert code == 0 and from_stdin == from_file


def test_predict_rejects_two_traces(trained, tmp_path):
    out, _ = trained
    run(["synth", "--out", str(tmp_path / "t.csv"), "--counts", "1,1,1,1"])
    code, _ = run(["predict", "--checkpoint", str(out / "checkpoint.ckpt"), "--data", str(tmp_path / "t.csv")])
    assert code == 1


def test_compare(tmp_path):
    code, text = run(["compare", "--out", str(tmp_path), *FAST])
    assert code == 0
    lines = text.splitlines()
    assert lines[0].split() == ["model", "accuracy", "recall", "f1"]
    assert [ln.split()[0] for ln in lines[1:]] == ["proposed", "standard-lstm", "mlp"]
    assert (tmp_path / "compare.txt").read_text() == text
    assert len((tmp_path / "compare.csv").read_text().splitlines()) == 4


@pytest.mark.parametrize(
    "argv, code",
    [
        (["train"], 2),
        (["synth", "--out", "/nonexistent/dir/x.csv"], 2),
        (["synth", "--out", "x.csv", "--counts", "1,2,3"], 2),
        (["discretize", "--data", "missing.csv", "--out", "s.tsv"], 2),
        (["eval", "--checkpoint", "missing.ckpt", "--out", "o"], 2),
        (["frobnicate"], 2),
        (["synth", "--seed", "abc"], 2),
    ],
)
def test_usage_errors(tmp_path, monkeypatch, capsys, argv, code):
    monkeypatch.chdir(tmp_path)
    assert run(argv)[0] == code
    err = capsys.readouterr().err
    assert "error" in err


def test_runtime_error_is_one_line(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("id,step,velocity,acceleration,label\nx,0,1,0,S\n")
    code, _ = run(["discretize", "--data", str(bad), "--out", str(tmp_path / "s.tsv")])
    assert code == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error: TraceFormatError:") and "yaw_rate" in err[0]


def test_option_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"counts": "2,2,2,2", "seed": 9}))
    env = {"DRIVEINTENT_COUNTS": "1,1,1,1"}
    path = str(tmp_path / "t.csv")
    assert run(["--config", str(cfg), "synth", "--out", path], environ=env)[1].strip() == "S:1 P:1 R:1 L:1"
    assert run(["--config", str(cfg), "synth", "--out", path])[1].strip() == "S:2 P:2 R:2 L:2"
    assert load_csv(path) == synth_dataset(SynthConfig(seed=9).with_counts([2, 2, 2, 2]))
    code, text = run(["--config", str(cfg), "synth", "--out", path, "--counts", "3,1,1,1"], environ=env)
    assert text.strip() == "S:3 P:1 R:1 L:1"


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"colour": "red"}))
    assert run(["--config", str(cfg), "synth", "--out", str(tmp_path / "t.csv")])[0] == 2


def test_bad_env_value(tmp_path):
    code, _ = run(["synth", "--out", str(tmp_path / "t.csv")], environ={"DRIVEINTENT_SEED": "x"})
    assert code == 2
