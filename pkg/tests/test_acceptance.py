"""Acceptance gate: one test per criterion, each logging a PASS/FAIL line.

The lines are echoed in the pytest terminal summary. Criteria 3, 4, 7 and 8
train full-size models and take several minutes in total.
"""
import io
import time

import numpy as np
import pytest

from driveintent import nn
from driveintent.checkpoint import load_checkpoint
from driveintent.cli import main
from driveintent.discretize import (
    discretize_velocity,
    discretize_yaw,
    split_symbol,
    symbolize,
    symbolize_traces,
)
from driveintent.metrics import ConfusionMatrix, accuracy, earliest_stable_step, precision, recall, split_dataset
from driveintent.models import MODEL_KINDS, ModelConfig, build
from driveintent.traces import Maneuver, SynthConfig, synth_dataset
from driveintent.training import stream_records

COUNTS = "99,77,66,55"
SEEDS = (0, 1, 2)


def verdict(log, n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    log[n] = line
    print(line)
    assert ok, line


def cli(argv):
    out = io.StringIO()
    code = main(argv, stdout=out, environ={})
    assert code == 0, f"driveintent {' '.join(argv)} exited {code}"
    return out.getvalue()


@pytest.fixture(scope="module")
def train_runs(tmp_path_factory):
    """Two identical full train + eval runs on the scaled synthetic set."""
    runs = []
    for name in ("a", "b"):
        out = tmp_path_factory.mktemp(f"run_{name}")
        start = time.perf_counter()
        text = cli(["train", "--out", str(out), "--counts", COUNTS, "--seed", "0"])
        elapsed = time.perf_counter() - start
        cli(["eval", "--checkpoint", str(out / "checkpoint.ckpt"), "--out", str(out / "eval")])
        runs.append((out, text, elapsed))
    return runs


def test_criterion_1_metric_oracle(acceptance_log):
    cm = ConfusionMatrix([[218, 0, 0, 2], [0, 219, 0, 1], [0, 0, 110, 0], [0, 0, 0, 330]])
    acc, p_stop, r_straight = accuracy(cm), precision(cm, "P"), recall(cm, "S")
    ok = (
        abs(acc - 0.99659) < 1e-4
        and abs(acc - 877 / 880) < 1e-6
        and abs(p_stop - 330 / 333) < 1e-6
        and abs(r_straight - 218 / 220) < 1e-6
    )
    verdict(acceptance_log, 1, ok, f"accuracy={acc:.6f} P_stop={p_stop:.6f} R_straight={r_straight:.6f}")


def _unit_gaps():
    rng = np.random.default_rng(0)
    gaps = {}

    D, H = 3, 4
    p = nn.LstmParams.init(rng, D, H)
    x, h0, c0 = rng.normal(size=D), rng.normal(size=H), rng.normal(size=H)
    wh, wc = rng.normal(size=H), rng.normal(size=H)

    def cell(q):
        lp = nn.LstmParams(q["W"], q["U"], q["b"])
        h, c, cache = nn.lstm_cell_forward(q["x"], q["h"], q["c"], lp)
        dx, dh, dc, g = nn.lstm_cell_backward(wh, wc, cache, lp)
        return wh @ h + wc @ c, {"x": dx, "h": dh, "c": dc, "W": g.W, "U": g.U, "b": g.b}

    gaps["lstm cell"] = nn.grad_check(cell, {"x": x, "h": h0, "c": c0, "W": p.W, "U": p.U, "b": p.b})

    ap = nn.AttentionParams.init(rng, 3, 3, 5)
    keys, query, wc2 = rng.normal(size=(4, 3)), rng.normal(size=3), rng.normal(size=3)

    def attention(q):
        a = nn.AttentionParams(q["Wq"], q["Wk"], q["v"])
        ctx, _, cache = nn.attention_forward(q["q"][None, None], q["k"][None], a)
        dq, dk, g = nn.attention_backward(wc2[None, None], cache, a)
        return float(wc2 @ ctx[0, 0]), {"q": dq[0, 0], "k": dk[0], "Wq": g.Wq, "Wk": g.Wk, "v": g.v}

    gaps["attention"] = nn.grad_check(attention, {"q": query, "k": keys, "Wq": ap.Wq, "Wk": ap.Wk, "v": ap.v})

    W, b, xd, wd = rng.normal(size=(3, 5)), rng.normal(size=3), rng.normal(size=(2, 5)), rng.normal(size=(2, 3))

    def dense(q):
        y = nn.dense_forward(q["x"], q["W"], q["b"])
        dx, dW, db = nn.dense_backward(wd, q["x"], q["W"])
        return float(np.sum(wd * y)), {"x": dx, "W": dW, "b": db}

    gaps["dense"] = nn.grad_check(dense, {"x": xd, "W": W, "b": b})

    targets = rng.integers(0, 4, size=6)

    def softmax_ce(q):
        loss, grad, _ = nn.softmax_cross_entropy(q["z"], targets)
        return loss, {"z": grad}

    gaps["softmax/CE"] = nn.grad_check(softmax_ce, {"z": rng.normal(size=(6, 4))})

    seq = symbolize_traces(synth_dataset(SynthConfig(seed=0).with_counts([1, 1, 1, 1])))[0]
    symbols, targets10 = seq.symbols[None, 50:60], seq.label_indices[None, 50:60]
    model = build(ModelConfig(hidden=8), seed=0)

    def full(params):
        model.params = params
        loss, grads, _ = model.loss_and_grads(symbols, targets10)
        return loss, grads

    gaps["full model"] = nn.grad_check(full, model.params)
    return gaps


def test_criterion_2_gradient_correctness(acceptance_log):
    start = time.perf_counter()
    gaps = _unit_gaps()
    elapsed = time.perf_counter() - start
    ok = all(g < 1e-4 for g in gaps.values()) and elapsed < 30
    detail = " ".join(f"{k}={v:.1e}" for k, v in gaps.items())
    verdict(acceptance_log, 2, ok, f"max rel. error {detail} ({elapsed:.0f}s)")


def test_criterion_3_learnability(acceptance_log, train_runs):
    out, text, elapsed = train_runs[0]
    acc = float(text.splitlines()[-1].split()[-1])
    model = load_checkpoint(out / "checkpoint.ckpt")
    epochs = len(model.history) - 1
    ok = acc >= 0.95 and epochs <= 60 and elapsed < 300
    verdict(acceptance_log, 3, ok, f"test accuracy={acc:.4f} after {epochs} epochs in {elapsed:.0f}s")


def _compare_accuracies(seed):
    table = cli(["compare", "--counts", COUNTS, "--seed", str(seed)])
    accs = {}
    for line in table.splitlines()[1:]:
        name, acc, *_ = line.split()
        accs[name] = float(acc)
    assert set(accs) == set(MODEL_KINDS)
    return accs


def test_criterion_4_model_ranking(acceptance_log):
    results = {seed: _compare_accuracies(seed) for seed in SEEDS}
    ok = all(r["proposed"] >= r["standard-lstm"] >= r["mlp"] for r in results.values())
    detail = "; ".join(
        f"seed {s}: {r['proposed']:.4f} >= {r['standard-lstm']:.4f} >= {r['mlp']:.4f}" for s, r in results.items()
    )
    verdict(acceptance_log, 4, ok, detail)


def test_criterion_5_discretizer_exactness(acceptance_log):
    checks = [
        discretize_velocity(10.0) == 1,
        discretize_velocity(np.nextafter(10.0, 0)) == 0,
        discretize_yaw(3.0) == 1,
        discretize_yaw(-3.0) == 1,
        discretize_yaw(np.nextafter(3.0, 4)) == 2,
        discretize_yaw(np.nextafter(-3.0, -4)) == 0,
        symbolize(0, 0) == 1,
        symbolize(0, 1) == 2,
    ]
    pairs = [(v, y) for v in range(2) for y in range(3)]
    symbols = [symbolize(v, y) for v, y in pairs]
    checks.append(sorted(symbols) == [1, 2, 3, 4, 5, 6])
    checks.append([split_symbol(s) for s in symbols] == pairs)
    verdict(acceptance_log, 5, all(checks), f"{sum(checks)}/{len(checks)} exact checks")


def test_criterion_6_sequence_contract(acceptance_log):
    rng = np.random.default_rng(6)
    cfg = ModelConfig(hidden=8, attention_dim=6)
    worst = 0.0
    lengths_ok = True
    for kind in MODEL_KINDS:
        model = build(cfg, seed=int(rng.integers(1 << 31)), kind=kind)
        for n in range(1, 111):
            rec = model.forward(rng.integers(1, 7, size=n))
            lengths_ok &= rec.probs.shape == (n, 4)
            worst = max(worst, np.abs(rec.probs.sum(axis=1) - 1).max())
            if rec.attention is not None:
                lengths_ok &= rec.attention.shape == (n, n)
                worst = max(worst, np.abs(rec.attention.sum(axis=1) - 1).max())
            lengths_ok &= bool(np.all(rec.probs >= 0))
    ok = lengths_ok and worst <= 1e-9
    verdict(acceptance_log, 6, ok, f"T_y == T_x for n in 1..110 on {len(MODEL_KINDS)} models; max simplex error {worst:.1e}")


def test_criterion_7_determinism(acceptance_log, train_runs):
    (a, _, _), (b, _, _) = train_runs
    names = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    other = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    same = names == other and all((a / n).read_bytes() == (b / n).read_bytes() for n in names)
    verdict(acceptance_log, 7, same, f"{len(names)} output files compared byte for byte")


@pytest.fixture(scope="module")
def stop_steps(train_runs):
    """Earliest stable streaming step for each held-out Stop trace of run a."""
    out, _, _ = train_runs[0]
    model = load_checkpoint(out / "checkpoint.ckpt")
    seqs = symbolize_traces(synth_dataset(SynthConfig(seed=0).with_counts([99, 77, 66, 55])))
    _, test = split_dataset(seqs, 0.7, seed=0)
    stops = [s for s in test if s.maneuver is Maneuver.STOP]
    return [earliest_stable_step(r, Maneuver.STOP, k=10) for r in stream_records(model, stops)]


def test_criterion_8_early_prediction(acceptance_log, stop_steps):
    # a trace that never stabilises counts as infinitely late
    median = float(np.median([np.inf if s is None else s for s in stop_steps]))
    verdict(acceptance_log, 8, median <= 80, f"median earliest stable step {median:g} over {len(stop_steps)} held-out Stop traces")


def test_stop_streams_mostly_settle_by_step_80(stop_steps):
    settled = sum(s is not None and s <= 80 for s in stop_steps)
    assert settled >= 0.9 * len(stop_steps)
