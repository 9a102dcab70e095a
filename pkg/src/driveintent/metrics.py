"""Dataset splitting, confusion matrices and precision / recall / F1.

Confusion matrices put ground truth on rows and predictions on columns, in
class order S, L, R, P. Degenerate ratios follow the 0/0 -> 0 convention.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .traces import CLASS_ORDER, Maneuver, parse_maneuver

NUM_CLASSES = len(CLASS_ORDER)
CLASS_LETTERS = tuple(m.value for m in CLASS_ORDER)


def _class_of(item) -> Maneuver:
    m = getattr(item, "maneuver", None)
    if m is None:
        raise TypeError(f"cannot determine class of {item!r}")
    return parse_maneuver(m)


def split_dataset(sequences, train_fraction: float = 0.7, seed: int = 0):
    """Stratified seeded split into ``(train, test)``.

    Each class contributes ``round(n * train_fraction)`` items to train,
    clamped so both sides receive at least one. Both outputs keep the input
    order.
    """
    items = list(sequences)
    if not items:
        raise ValueError("cannot split an empty dataset")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    by_class: dict[Maneuver, list[int]] = {}
    for i, item in enumerate(items):
        by_class.setdefault(_class_of(item), []).append(i)
    rng = np.random.default_rng(seed)
    train_idx = []
    for m in CLASS_ORDER:
        idx = by_class.get(m)
        if not idx:
            continue
        if len(idx) < 2:
            raise ValueError(f"class {m.value} has {len(idx)} sequence(s); need at least 2 to split")
        n_train = min(max(int(round(len(idx) * train_fraction)), 1), len(idx) - 1)
        perm = rng.permutation(len(idx))
        train_idx.extend(idx[j] for j in perm[:n_train])
    chosen = set(train_idx)
    train = [x for i, x in enumerate(items) if i in chosen]
    test = [x for i, x in enumerate(items) if i not in chosen]
    return train, test


def _to_index(label) -> int:
    if isinstance(label, (int, np.integer)):
        if not 0 <= label < NUM_CLASSES:
            raise ValueError(f"class index {label} out of range")
        return int(label)
    return parse_maneuver(label).index


class ConfusionMatrix:
    """4x4 count matrix, truth on rows, prediction on columns."""

    def __init__(self, counts=None):
        if counts is None:
            counts = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
        counts = np.asarray(counts)
        if counts.shape != (NUM_CLASSES, NUM_CLASSES):
            raise ValueError(f"confusion matrix must be {NUM_CLASSES}x{NUM_CLASSES}")
        if np.any(counts < 0) or np.any(counts != np.round(counts)):
            raise ValueError("confusion counts must be non-negative integers")
        self.counts = counts.astype(np.int64)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def tp(self, cls) -> int:
        k = _to_index(cls)
        return int(self.counts[k, k])

    def fp(self, cls) -> int:
        k = _to_index(cls)
        return int(self.counts[:, k].sum() - self.counts[k, k])

    def fn(self, cls) -> int:
        k = _to_index(cls)
        return int(self.counts[k, :].sum() - self.counts[k, k])

    @property
    def T(self) -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts.T)

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    def __repr__(self):
        return f"ConfusionMatrix({self.counts.tolist()})"


def confusion(preds, truth) -> ConfusionMatrix:
    """Count (truth, prediction) pairs over every timestep.

    ``preds`` and ``truth`` are parallel collections of label sequences
    (letters, :class:`Maneuver` values or class indices).
    """
    preds = list(preds)
    truth = list(truth)
    if len(preds) != len(truth):
        raise ValueError(f"{len(preds)} predicted sequences vs {len(truth)} truth sequences")
    counts = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    for n, (p_seq, t_seq) in enumerate(zip(preds, truth)):
        p_idx = [_to_index(x) for x in p_seq]
        t_idx = [_to_index(x) for x in t_seq]
        if len(p_idx) != len(t_idx):
            raise ValueError(f"sequence {n}: {len(p_idx)} predictions vs {len(t_idx)} labels")
        np.add.at(counts, (t_idx, p_idx), 1)
    return ConfusionMatrix(counts)


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def precision(cm: ConfusionMatrix, cls) -> float:
    return _ratio(cm.tp(cls), cm.tp(cls) + cm.fp(cls))


def recall(cm: ConfusionMatrix, cls) -> float:
    return _ratio(cm.tp(cls), cm.tp(cls) + cm.fn(cls))


def f1(cm: ConfusionMatrix, cls) -> float:
    p = precision(cm, cls)
    r = recall(cm, cls)
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise ValueError("accuracy of an empty confusion matrix")
    return float(np.trace(cm.counts)) / cm.total


@dataclass
class MetricsReport:
    per_class: dict
    precision: float
    recall: float
    f1: float
    accuracy: float
    steps: int
    sequence_accuracy: float | None = None
    confusion: ConfusionMatrix | None = field(default=None, repr=False)

    def flat(self) -> list[tuple[str, str]]:
        rows = [
            ("accuracy", self.accuracy),
            ("macro_precision", self.precision),
            ("macro_recall", self.recall),
            ("macro_f1", self.f1),
            ("steps", self.steps),
        ]
        if self.sequence_accuracy is not None:
            rows.append(("sequence_majority_accuracy", self.sequence_accuracy))
        for letter in CLASS_LETTERS:
            for metric in ("precision", "recall", "f1"):
                rows.append((f"{letter}_{metric}", self.per_class[letter][metric]))
        return [(k, _fmt(v)) for k, v in rows]


def _fmt(v) -> str:
    return str(v) if isinstance(v, (int, np.integer)) else repr(float(v))


def macro_metrics(cm: ConfusionMatrix, sequence_accuracy: float | None = None) -> MetricsReport:
    per_class = {
        letter: {"precision": precision(cm, k), "recall": recall(cm, k), "f1": f1(cm, k)}
        for k, letter in enumerate(CLASS_LETTERS)
    }
    return MetricsReport(
        per_class=per_class,
        precision=float(np.mean([v["precision"] for v in per_class.values()])),
        recall=float(np.mean([v["recall"] for v in per_class.values()])),
        f1=float(np.mean([v["f1"] for v in per_class.values()])),
        accuracy=accuracy(cm),
        steps=cm.total,
        sequence_accuracy=sequence_accuracy,
        confusion=cm,
    )


def majority_vote_accuracy(preds, truth) -> float:
    """Fraction of sequences whose most frequent predicted label is the true maneuver."""
    hits = 0
    n = 0
    for p_seq, t_seq in zip(preds, truth):
        p = np.bincount([_to_index(x) for x in p_seq], minlength=NUM_CLASSES)
        t = np.bincount([_to_index(x) for x in t_seq], minlength=NUM_CLASSES)
        hits += int(np.argmax(p) == np.argmax(t))
        n += 1
    return hits / n if n else 0.0


def evaluate_labels(preds, truth) -> MetricsReport:
    preds = list(preds)
    truth = list(truth)
    cm = confusion(preds, truth)
    return macro_metrics(cm, majority_vote_accuracy(preds, truth))


def earliest_stable_step(record, truth_label, k: int = 10):
    """First step from which ``k`` consecutive predictions equal the truth.

    ``record`` is anything with a ``probs`` (T, 4) array or a plain label
    sequence. Returns ``None`` when no such run exists.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    probs = getattr(record, "probs", None)
    if probs is not None:
        pred = np.argmax(np.asarray(probs), axis=-1)
    else:
        pred = np.array([_to_index(x) for x in record])
    if k > len(pred):
        raise ValueError(f"k={k} longer than sequence of {len(pred)} steps")
    hit = (pred == _to_index(truth_label)).astype(np.int64)
    run = np.convolve(hit, np.ones(k, dtype=np.int64), mode="valid")
    stable = np.flatnonzero(run == k)
    return int(stable[0]) if stable.size else None


# ---------------------------------------------------------------------------
# Emission
# ---------------------------------------------------------------------------

def format_report(report: MetricsReport, title: str = "Evaluation") -> str:
    lines = [title, "=" * len(title)]
    lines.append(f"scored steps : {report.steps}")
    lines.append(f"accuracy     : {report.accuracy:.6f}")
    lines.append(f"macro P/R/F1 : {report.precision:.6f} / {report.recall:.6f} / {report.f1:.6f}")
    if report.sequence_accuracy is not None:
        lines.append(f"per-sequence majority-vote accuracy: {report.sequence_accuracy:.6f}")
    lines.append("")
    lines.append("class  precision  recall    f1")
    for letter in CLASS_LETTERS:
        v = report.per_class[letter]
        lines.append(f"{letter:<5}  {v['precision']:.6f}   {v['recall']:.6f}  {v['f1']:.6f}")
    if report.confusion is not None:
        lines.append("")
        lines.append("confusion (rows = truth, cols = predicted)")
        lines.append("     " + "".join(f"{c:>8}" for c in CLASS_LETTERS))
        for letter, row in zip(CLASS_LETTERS, report.confusion.counts):
            lines.append(f"{letter:<5}" + "".join(f"{int(x):>8}" for x in row))
    return "\n".join(lines) + "\n"


def write_flat(report: MetricsReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("key", "value"))
        writer.writerows(report.flat())


def read_flat(path) -> dict[str, str]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return {k: v for k, v in rows[1:]}


def confusion_csv(cm: ConfusionMatrix) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("truth\\pred",) + CLASS_LETTERS)
    for letter, row in zip(CLASS_LETTERS, cm.counts):
        writer.writerow((letter,) + tuple(int(x) for x in row))
    return buf.getvalue()


def write_confusion_csv(cm: ConfusionMatrix, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(confusion_csv(cm))


def read_confusion_csv(path) -> ConfusionMatrix:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0][1:]) != CLASS_LETTERS:
        raise ValueError(f"confusion CSV columns must be {','.join(CLASS_LETTERS)}")
    if tuple(r[0] for r in rows[1:]) != CLASS_LETTERS:
        raise ValueError(f"confusion CSV rows must be {','.join(CLASS_LETTERS)}")
    return ConfusionMatrix([[int(x) for x in r[1:]] for r in rows[1:]])
