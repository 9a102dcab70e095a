"""Synthetic intersection maneuver traces and the trace CSV format.

A trace is 11 s of telemetry (110 steps at 0.1 s) around one intersection
pass. Profiles are piecewise linear (cruise, ramp, hold) with Gaussian
sensor noise on top. Acceleration is carried along but no model reads it.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields
from enum import Enum

import numpy as np

CSV_HEADER = ("id", "step", "velocity", "yaw_rate", "acceleration", "label")


class Maneuver(str, Enum):
    STRAIGHT = "S"
    LEFT = "L"
    RIGHT = "R"
    STOP = "P"

    @property
    def index(self) -> int:
        return CLASS_ORDER.index(self)


# Class index order used by every model output and confusion matrix.
CLASS_ORDER = (Maneuver.STRAIGHT, Maneuver.LEFT, Maneuver.RIGHT, Maneuver.STOP)
# Generation order; matches the published class counts listing.
DATASET_ORDER = (Maneuver.STRAIGHT, Maneuver.STOP, Maneuver.RIGHT, Maneuver.LEFT)


class TraceFormatError(ValueError):
    """Malformed trace CSV content."""


def parse_maneuver(value) -> Maneuver:
    if isinstance(value, Maneuver):
        return value
    text = str(value).strip()
    for m in Maneuver:
        if text.upper() == m.value or text.lower() == m.name.lower():
            return m
    raise ValueError(f"unknown maneuver {value!r}")


@dataclass
class ManeuverTrace:
    id: str
    maneuver: Maneuver
    velocity: np.ndarray
    yaw_rate: np.ndarray
    acceleration: np.ndarray
    dt: float = 0.1

    def __post_init__(self):
        self.maneuver = parse_maneuver(self.maneuver)
        self.velocity = np.asarray(self.velocity, dtype=np.float64)
        self.yaw_rate = np.asarray(self.yaw_rate, dtype=np.float64)
        self.acceleration = np.asarray(self.acceleration, dtype=np.float64)
        n = len(self.velocity)
        if len(self.yaw_rate) != n or len(self.acceleration) != n:
            raise ValueError(
                f"trace {self.id}: channel lengths differ "
                f"({n}, {len(self.yaw_rate)}, {len(self.acceleration)})"
            )
        if np.any(self.velocity < 0):
            raise ValueError(f"trace {self.id}: negative velocity")

    @property
    def length(self) -> int:
        return len(self.velocity)

    def __eq__(self, other):
        if not isinstance(other, ManeuverTrace):
            return NotImplemented
        return (
            self.id == other.id
            and self.maneuver == other.maneuver
            and self.dt == other.dt
            and np.array_equal(self.velocity, other.velocity)
            and np.array_equal(self.yaw_rate, other.yaw_rate)
            and np.array_equal(self.acceleration, other.acceleration)
        )


def _default_counts() -> dict:
    return {Maneuver.STRAIGHT: 990, Maneuver.STOP: 770, Maneuver.RIGHT: 660, Maneuver.LEFT: 550}


@dataclass
class SynthConfig:
    """Profile parameters for the synthetic generator.

    Speeds are m/s, yaw-rates rad/s, indices are steps. ``timing_jitter``
    shifts each trace's event timing uniformly by up to that many steps and
    ``cruise_jitter`` perturbs the cruise speed uniformly.
    """

    length: int = 110
    dt: float = 0.1
    cruise_speed: float = 14.0
    cruise_jitter: float = 1.5
    turn_speed: float = 6.0
    turn_peak_yaw: float = 5.0
    turn_peak_jitter: float = 0.15
    turn_onset: int = 45
    turn_offset: int = 65
    turn_ramp: int = 5
    brake_lead: int = 15
    recover_steps: int = 20
    stop_decel: float = 4.0
    stop_step: int = 50
    timing_jitter: int = 5
    wander_yaw: float = 1.0
    velocity_noise: float = 0.3
    yaw_noise: float = 0.2
    accel_noise: float = 0.2
    counts: dict = field(default_factory=_default_counts)
    seed: int = 0

    def __post_init__(self):
        self.counts = {parse_maneuver(k): int(v) for k, v in self.counts.items()}

    def validate(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, float) and not math.isfinite(value):
                raise ValueError(f"{f.name} must be finite, got {value}")
        if self.length < 1 or self.dt <= 0:
            raise ValueError("length and dt must be positive")
        if abs(self.turn_peak_yaw) * (1 - self.turn_peak_jitter) <= 3.0:
            raise ValueError("turn peak yaw-rate must exceed 3 rad/s in magnitude")
        if self.cruise_speed - self.cruise_jitter < 10.0:
            raise ValueError("cruise speed must stay at or above 10 m/s")
        if self.turn_speed >= 10.0 or self.turn_speed < 0:
            raise ValueError("turn speed must lie in [0, 10) m/s")
        if not 0 < self.turn_onset < self.turn_offset:
            raise ValueError("need 0 < turn_onset < turn_offset")
        if self.stop_decel <= 0:
            raise ValueError("stop deceleration must be positive")
        if min(self.velocity_noise, self.yaw_noise, self.accel_noise, self.wander_yaw) < 0:
            raise ValueError("noise levels must be non-negative")
        for m in Maneuver:
            if self.counts.get(m, 0) <= 0:
                raise ValueError(f"class count for {m.name} must be positive")

    def with_counts(self, counts) -> "SynthConfig":
        """Copy with counts given as a mapping or an S,P,R,L ordered sequence."""
        if not isinstance(counts, dict):
            counts = dict(zip(DATASET_ORDER, counts, strict=True))
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values["counts"] = counts
        return SynthConfig(**values)


def _ramp(n: int, start: int, end: int, v0: float, v1: float) -> np.ndarray:
    """Value v0 before ``start``, v1 after ``end``, linear between."""
    t = np.arange(n, dtype=np.float64)
    if end <= start:
        return np.where(t < start, v0, v1)
    frac = np.clip((t - start) / (end - start), 0.0, 1.0)
    return v0 + (v1 - v0) * frac


def _trapezoid(n: int, onset: int, offset: int, ramp: int, peak: float) -> np.ndarray:
    t = np.arange(n, dtype=np.float64)
    ramp = max(1, min(ramp, (offset - onset) // 2))
    up = np.clip((t - onset) / ramp, 0.0, 1.0)
    down = np.clip((offset - t) / ramp, 0.0, 1.0)
    return peak * np.minimum(up, down)


def synth_trace(maneuver, cfg: SynthConfig | None = None, seed: int = 0, trace_id: str | None = None) -> ManeuverTrace:
    """Generate one noisy trace for ``maneuver``; deterministic in ``seed``."""
    cfg = cfg or SynthConfig()
    maneuver = parse_maneuver(maneuver)
    cfg.validate()
    rng = np.random.default_rng(seed)
    n = cfg.length

    cruise = cfg.cruise_speed + rng.uniform(-cfg.cruise_jitter, cfg.cruise_jitter)
    shift = int(rng.integers(-cfg.timing_jitter, cfg.timing_jitter + 1))
    phase = rng.uniform(0, 2 * np.pi)
    period = rng.uniform(40, 120)
    wander = cfg.wander_yaw * np.sin(2 * np.pi * np.arange(n) / period + phase)

    onset = cfg.turn_onset + shift
    offset = cfg.turn_offset + shift
    if maneuver is Maneuver.STRAIGHT:
        velocity = np.full(n, cruise)
        yaw = wander
    elif maneuver is Maneuver.STOP:
        stop_at = cfg.stop_step + shift
        decel_steps = int(math.ceil(cruise / (cfg.stop_decel * cfg.dt)))
        velocity = _ramp(n, stop_at - decel_steps, stop_at, cruise, 0.0)
        yaw = wander
    else:
        velocity = _ramp(n, onset - cfg.brake_lead, onset, cruise, cfg.turn_speed)
        recover = _ramp(n, offset, offset + cfg.recover_steps, cfg.turn_speed, cruise)
        velocity = np.where(np.arange(n) >= offset, recover, velocity)
        peak = abs(cfg.turn_peak_yaw) * (1 + rng.uniform(-cfg.turn_peak_jitter, cfg.turn_peak_jitter))
        # positive yaw is a right turn
        sign = 1.0 if maneuver is Maneuver.RIGHT else -1.0
        window = (np.arange(n) >= onset) & (np.arange(n) <= offset)
        yaw = np.where(window, 0.0, wander) + _trapezoid(n, onset, offset, cfg.turn_ramp, sign * peak)

    accel = np.gradient(velocity, cfg.dt) if n > 1 else np.zeros(n)
    velocity = np.maximum(velocity + rng.normal(0, cfg.velocity_noise, n), 0.0)
    yaw = yaw + rng.normal(0, cfg.yaw_noise, n)
    accel = accel + rng.normal(0, cfg.accel_noise, n)
    if trace_id is None:
        trace_id = f"{maneuver.value}{seed}"
    return ManeuverTrace(trace_id, maneuver, velocity, yaw, accel, dt=cfg.dt)


def synth_dataset(cfg: SynthConfig | None = None) -> list[ManeuverTrace]:
    """Traces for every class in S, P, R, L order, each from its own derived seed."""
    cfg = cfg or SynthConfig()
    cfg.validate()
    traces = []
    for maneuver in DATASET_ORDER:
        for i in range(cfg.counts[maneuver]):
            seq = np.random.SeedSequence([cfg.seed, maneuver.index, i])
            seed = int(seq.generate_state(1, dtype=np.uint64)[0])
            traces.append(synth_trace(maneuver, cfg, seed, trace_id=f"{maneuver.value}{i:04d}"))
    return traces


def class_counts(traces) -> dict:
    counts = {m: 0 for m in DATASET_ORDER}
    for t in traces:
        counts[t.maneuver] += 1
    return counts


def format_counts(counts: dict) -> str:
    return " ".join(f"{m.value}:{counts.get(m, 0)}" for m in DATASET_ORDER)


def save_csv(traces, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for tr in traces:
            for step in range(tr.length):
                writer.writerow((
                    tr.id, step,
                    repr(float(tr.velocity[step])),
                    repr(float(tr.yaw_rate[step])),
                    repr(float(tr.acceleration[step])),
                    tr.maneuver.value,
                ))


def _parse_float(text: str, column: str, rownum: int) -> float:
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise TraceFormatError(f"row {rownum}: bad {column} value {text!r}") from None
    if not math.isfinite(value):
        raise TraceFormatError(f"row {rownum}: non-finite {column} value {text!r}")
    return value


def read_trace_rows(lines, require=("id", "step", "velocity", "yaw_rate", "acceleration", "label")):
    """Yield ``(rownum, row_dict)`` from CSV lines after checking the header.

    Row numbers count the header as row 1.
    """
    reader = csv.reader(lines)
    header = next(reader, None)
    if header is None:
        raise TraceFormatError("no traces: empty file")
    header = [h.strip() for h in header]
    for col in require:
        if col not in header:
            raise TraceFormatError(f"missing column {col!r}")
    for rownum, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise TraceFormatError(f"row {rownum}: expected {len(header)} fields, got {len(row)}")
        yield rownum, dict(zip(header, (c.strip() for c in row)))


def load_csv(path, dt: float = 0.1) -> list[ManeuverTrace]:
    """Read traces written by :func:`save_csv` (or any file using its schema)."""
    rows: dict[str, dict] = {}
    with open(path, newline="") as fh:
        for rownum, row in read_trace_rows(fh):
            tid = row["id"]
            try:
                step = int(row["step"])
            except ValueError:
                raise TraceFormatError(f"row {rownum}: bad step value {row['step']!r}") from None
            try:
                label = parse_maneuver(row["label"])
            except ValueError:
                raise TraceFormatError(f"row {rownum}: bad label {row['label']!r}") from None
            entry = rows.setdefault(tid, {"label": label, "v": [], "y": [], "a": []})
            if step != len(entry["v"]):
                raise TraceFormatError(
                    f"row {rownum}: id {tid} step {step} out of order, expected {len(entry['v'])}"
                )
            if label != entry["label"]:
                raise TraceFormatError(f"row {rownum}: id {tid} changes label mid-trace")
            entry["v"].append(_parse_float(row["velocity"], "velocity", rownum))
            entry["y"].append(_parse_float(row["yaw_rate"], "yaw_rate", rownum))
            entry["a"].append(_parse_float(row["acceleration"], "acceleration", rownum))
    if not rows:
        raise TraceFormatError("no traces")
    traces = []
    for tid, e in rows.items():
        try:
            traces.append(ManeuverTrace(tid, e["label"], e["v"], e["y"], e["a"], dt=dt))
        except ValueError as exc:
            raise TraceFormatError(str(exc)) from None
    return traces
