"""Velocity / yaw-rate discretization into the 6-symbol alphabet.

Velocity has two classes split at 10 m/s (the threshold itself is "high"),
yaw-rate three classes split at -3 and +3 rad/s (both thresholds belong to
the middle band). A symbol packs the pair as ``3 * v_class + y_class + 1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .traces import CLASS_ORDER, ManeuverTrace, Maneuver, parse_maneuver

NUM_SYMBOLS = 6


@dataclass(frozen=True)
class DiscretizerConfig:
    velocity_threshold: float = 10.0
    yaw_low: float = -3.0
    yaw_high: float = 3.0

    def __post_init__(self):
        values = (self.velocity_threshold, self.yaw_low, self.yaw_high)
        if not all(math.isfinite(v) for v in values):
            raise ValueError("thresholds must be finite")
        if self.velocity_threshold <= 0:
            raise ValueError("velocity_threshold must be positive")
        if not self.yaw_low < self.yaw_high:
            raise ValueError("yaw_low must be below yaw_high")

    @classmethod
    def symmetric(cls, velocity_threshold: float = 10.0, yaw_threshold: float = 3.0):
        return cls(velocity_threshold, -abs(yaw_threshold), abs(yaw_threshold))


DEFAULT = DiscretizerConfig()


@dataclass
class SymbolSequence:
    id: str
    symbols: np.ndarray
    labels: list

    def __post_init__(self):
        self.symbols = np.asarray(self.symbols, dtype=np.int64)
        self.labels = [parse_maneuver(x) for x in self.labels]
        if self.symbols.ndim != 1:
            raise ValueError("symbols must be one-dimensional")
        if len(self.symbols) != len(self.labels):
            raise ValueError(f"sequence {self.id}: {len(self.symbols)} symbols vs {len(self.labels)} labels")
        if len(self.symbols) and (self.symbols.min() < 1 or self.symbols.max() > NUM_SYMBOLS):
            raise ValueError(f"sequence {self.id}: symbol out of range 1..{NUM_SYMBOLS}")

    @property
    def length(self) -> int:
        return len(self.symbols)

    @property
    def label_indices(self) -> np.ndarray:
        return np.array([m.index for m in self.labels], dtype=np.int64)

    @property
    def maneuver(self) -> Maneuver:
        """Majority label; ties go to the earlier class in S, L, R, P order."""
        counts = np.bincount(self.label_indices, minlength=len(CLASS_ORDER))
        return CLASS_ORDER[int(np.argmax(counts))]

    def __eq__(self, other):
        if not isinstance(other, SymbolSequence):
            return NotImplemented
        return self.id == other.id and np.array_equal(self.symbols, other.symbols) and self.labels == other.labels


def _check_finite(x, name):
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} must be finite")


def discretize_velocity(v, cfg: DiscretizerConfig = DEFAULT):
    """0 below the threshold, 1 at or above it. Scalars give ints, arrays give arrays."""
    arr = np.asarray(v, dtype=np.float64)
    _check_finite(arr, "velocity")
    out = (arr >= cfg.velocity_threshold).astype(np.int64)
    return int(out) if out.ndim == 0 else out


def discretize_yaw(y, cfg: DiscretizerConfig = DEFAULT):
    arr = np.asarray(y, dtype=np.float64)
    _check_finite(arr, "yaw-rate")
    out = np.where(arr < cfg.yaw_low, 0, np.where(arr > cfg.yaw_high, 2, 1)).astype(np.int64)
    return int(out) if out.ndim == 0 else out


def symbolize(velocity_class, yaw_class):
    vc = np.asarray(velocity_class)
    yc = np.asarray(yaw_class)
    if np.any((vc < 0) | (vc > 1)) or np.any((yc < 0) | (yc > 2)):
        raise ValueError(f"class out of range: velocity {velocity_class}, yaw {yaw_class}")
    out = 3 * vc.astype(np.int64) + yc.astype(np.int64) + 1
    return int(out) if out.ndim == 0 else out


def split_symbol(symbol):
    """Inverse of :func:`symbolize`: ``symbol -> (velocity_class, yaw_class)``."""
    s = np.asarray(symbol, dtype=np.int64) - 1
    if np.any((s < 0) | (s >= NUM_SYMBOLS)):
        raise ValueError(f"symbol out of range: {symbol}")
    v, y = np.divmod(s, 3)
    if v.ndim == 0:
        return int(v), int(y)
    return v, y


def symbolize_trace(trace: ManeuverTrace, cfg: DiscretizerConfig = DEFAULT) -> SymbolSequence:
    symbols = symbolize(discretize_velocity(trace.velocity, cfg), discretize_yaw(trace.yaw_rate, cfg))
    return SymbolSequence(trace.id, np.atleast_1d(symbols), [trace.maneuver] * trace.length)


def symbolize_traces(traces, cfg: DiscretizerConfig = DEFAULT) -> list[SymbolSequence]:
    return [symbolize_trace(t, cfg) for t in traces]


def save_symbols(sequences, path) -> None:
    """One line per sequence: ``id<TAB>1 5 5 ...<TAB>S S S ...``."""
    with open(path, "w") as fh:
        for seq in sequences:
            syms = " ".join(str(int(s)) for s in seq.symbols)
            labels = " ".join(m.value for m in seq.labels)
            fh.write(f"{seq.id}\t{syms}\t{labels}\n")


def load_symbols(path) -> list[SymbolSequence]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"line {lineno}: expected 3 tab-separated fields, got {len(parts)}")
            try:
                symbols = [int(s) for s in parts[1].split()]
                out.append(SymbolSequence(parts[0], symbols, parts[2].split()))
            except ValueError as exc:
                raise ValueError(f"line {lineno}: {exc}") from None
    if not out:
        raise ValueError("no sequences")
    return out
