"""Mini-batch Adam training, batched inference and streaming prediction."""
from __future__ import annotations

import logging
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import nn
from .discretize import SymbolSequence
from .metrics import evaluate_labels, split_dataset
from .models import IntentModel, PredictionRecord

log = logging.getLogger(__name__)

# Samples per gradient chunk. Fixed, so the reduction order (and hence the
# result) does not depend on how many threads compute the chunks.
GRAD_CHUNK = 16
EVAL_BATCH = 16


class TrainingDiverged(RuntimeError):
    """Non-finite loss or gradient during training.

    ``checkpoint`` holds the model restored to its last finite best state.
    """

    def __init__(self, message: str, checkpoint: IntentModel):
        super().__init__(message)
        self.checkpoint = checkpoint


def _stack(seqs):
    symbols = np.stack([s.symbols for s in seqs])
    targets = np.stack([s.label_indices for s in seqs])
    return symbols, targets


def length_batches(order, lengths, batch_size: int):
    """Group indices (in ``order``) into batches of equal sequence length.

    A batch is emitted as soon as its length bucket fills; partial buckets
    follow in order of first appearance.
    """
    buckets: OrderedDict[int, list] = OrderedDict()
    batches = []
    for i in order:
        bucket = buckets.setdefault(lengths[i], [])
        bucket.append(int(i))
        if len(bucket) == batch_size:
            batches.append(bucket[:])
            bucket.clear()
    batches.extend(b for b in buckets.values() if b)
    return batches


def dataset_loss(model: IntentModel, seqs) -> tuple[float, float]:
    """Mean per-step cross-entropy and per-step accuracy over ``seqs``."""
    if not seqs:
        return float("nan"), float("nan")
    lengths = [s.length for s in seqs]
    total = 0.0
    correct = 0
    steps = 0
    for batch in length_batches(range(len(seqs)), lengths, EVAL_BATCH):
        symbols, targets = _stack([seqs[i] for i in batch])
        loss, hits = model.loss(symbols, targets)
        total += loss
        correct += hits
        steps += targets.size
    return total / steps, correct / steps


def _batch_grads(model, symbols, targets, pool):
    chunks = [slice(i, i + GRAD_CHUNK) for i in range(0, len(symbols), GRAD_CHUNK)]

    def run(sl):
        return model.loss_and_grads(symbols[sl], targets[sl])

    results = list(pool.map(run, chunks)) if pool is not None else [run(sl) for sl in chunks]
    loss, grads, correct = results[0]
    grads = {k: g.copy() for k, g in grads.items()}
    for l2, g2, c2 in results[1:]:
        loss += l2
        correct += c2
        for k in grads:
            grads[k] += g2[k]
    return loss, grads, correct


def train(model: IntentModel, dataset, config=None, threads: int = 1, progress=None) -> IntentModel:
    """Fit ``model`` to ``dataset`` and return the best-validation copy.

    The input model is left untouched. A validation subset of
    ``config.val_fraction`` is carved out (stratified, seeded); with a zero
    fraction the training loss drives early stopping instead. History holds
    one row per epoch, epoch 0 being the untrained state.
    """
    model = model.copy()
    if config is not None:
        config.validate()
        model.config = config
    cfg = model.config
    seqs = list(dataset)
    if not seqs:
        raise ValueError("cannot train on an empty dataset")
    if cfg.val_fraction > 0:
        train_set, val_set = split_dataset(seqs, 1.0 - cfg.val_fraction, seed=cfg.seed)
    else:
        train_set, val_set = seqs, []

    rng = np.random.default_rng([cfg.seed, 1])
    adam = nn.AdamState(lr=cfg.learning_rate)
    lengths = [s.length for s in train_set]

    def monitor(row):
        return row["val_loss"] if val_set else row["train_loss"]

    tr_loss, tr_acc = dataset_loss(model, train_set)
    va_loss, va_acc = dataset_loss(model, val_set)
    history = [_row(0, tr_loss, tr_acc, va_loss, va_acc)]
    best_params = {k: v.copy() for k, v in model.params.items()}
    best_score = monitor(history[0])
    best_epoch = 0
    wait = 0

    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for epoch in range(1, cfg.max_epochs + 1):
            order = rng.permutation(len(train_set))
            ep_loss = 0.0
            ep_correct = 0
            ep_steps = 0
            for batch in length_batches(order, lengths, cfg.batch_size):
                symbols, targets = _stack([train_set[i] for i in batch])
                loss, grads, correct = _batch_grads(model, symbols, targets, pool)
                if not np.isfinite(loss):
                    raise nn.DivergenceError(f"non-finite training loss at epoch {epoch}")
                scale = 1.0 / targets.size
                for g in grads.values():
                    g *= scale
                nn.clip_by_global_norm(grads, cfg.clip_norm)
                nn.adam_step(model.params, grads, adam)
                ep_loss += loss
                ep_correct += correct
                ep_steps += targets.size
            va_loss, va_acc = dataset_loss(model, val_set)
            row = _row(epoch, ep_loss / ep_steps, ep_correct / ep_steps, va_loss, va_acc)
            history.append(row)
            if progress is not None:
                progress(row)
            log.debug("epoch %d: %s", epoch, row)
            if not np.isfinite(monitor(row)):
                raise nn.DivergenceError(f"non-finite validation loss at epoch {epoch}")
            if monitor(row) < best_score:
                best_score = monitor(row)
                best_epoch = epoch
                best_params = {k: v.copy() for k, v in model.params.items()}
                wait = 0
            else:
                wait += 1
                if wait >= cfg.patience:
                    break
    except nn.DivergenceError as exc:
        model.params = best_params
        model.history = history
        model.meta["best_epoch"] = best_epoch
        raise TrainingDiverged(str(exc), model) from exc
    finally:
        if pool is not None:
            pool.shutdown()

    model.params = best_params
    model.history = history
    model.meta["best_epoch"] = best_epoch
    return model


def _row(epoch, tr_loss, tr_acc, va_loss, va_acc) -> dict:
    return {
        "epoch": epoch,
        "train_loss": float(tr_loss),
        "train_accuracy": float(tr_acc),
        "val_loss": float(va_loss),
        "val_accuracy": float(va_acc),
    }


def predict(model: IntentModel, seqs) -> list[PredictionRecord]:
    """Full-sequence predictions for each sequence, in input order."""
    seqs = list(seqs)
    out: list[PredictionRecord | None] = [None] * len(seqs)
    for batch in length_batches(range(len(seqs)), [s.length for s in seqs], EVAL_BATCH):
        symbols = np.stack([seqs[i].symbols for i in batch])
        probs, attn = model.predict_batch(symbols)
        for j, i in enumerate(batch):
            out[i] = PredictionRecord(seqs[i].id, probs[j], None if attn is None else attn[j])
    return out


def evaluate(model: IntentModel, seqs):
    """Per-step metrics report plus the prediction records it was built from."""
    seqs = list(seqs)
    records = predict(model, seqs)
    report = evaluate_labels([r.labels for r in records], [s.labels for s in seqs])
    return report, records


def predict_stream(model: IntentModel, prefix) -> np.ndarray:
    """Intent distribution after observing ``prefix``.

    The prefix is treated as a complete sequence, so the backward direction
    only sees what has been observed so far.
    """
    symbols = prefix.symbols if isinstance(prefix, SymbolSequence) else np.asarray(prefix, dtype=np.int64)
    if len(symbols) == 0:
        raise ValueError("prefix must contain at least one symbol")
    return model.forward(symbols).probs[-1]


def stream_records(model: IntentModel, seqs) -> list[PredictionRecord]:
    """Streaming predictions for every prefix of every sequence.

    Row ``t`` of each record equals ``predict_stream(model, seq[:t + 1])``.
    Prefixes of equal length are batched across sequences.
    """
    seqs = list(seqs)
    rows = [np.empty((s.length, model.config.num_classes)) for s in seqs]
    max_len = max((s.length for s in seqs), default=0)
    for t in range(1, max_len + 1):
        live = [i for i, s in enumerate(seqs) if s.length >= t]
        for start in range(0, len(live), EVAL_BATCH):
            idx = live[start:start + EVAL_BATCH]
            symbols = np.stack([seqs[i].symbols[:t] for i in idx])
            probs, _ = model.predict_batch(symbols)
            for j, i in enumerate(idx):
                rows[i][t - 1] = probs[j, -1]
    return [PredictionRecord(s.id, r) for s, r in zip(seqs, rows)]
