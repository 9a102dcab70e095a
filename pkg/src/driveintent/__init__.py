"""Driver intent prediction at intersections from discretized telemetry."""
from .checkpoint import load_checkpoint, save_checkpoint
from .discretize import DiscretizerConfig, SymbolSequence, symbolize_trace, symbolize_traces
from .models import ModelConfig, PredictionRecord, baseline_mlp, baseline_standard_lstm, build
from .traces import ManeuverTrace, Maneuver, SynthConfig, synth_dataset, synth_trace
from .training import evaluate, predict, predict_stream, train

__all__ = [
    "DiscretizerConfig",
    "ManeuverTrace",
    "Maneuver",
    "ModelConfig",
    "PredictionRecord",
    "SymbolSequence",
    "SynthConfig",
    "baseline_mlp",
    "baseline_standard_lstm",
    "build",
    "evaluate",
    "load_checkpoint",
    "predict",
    "predict_stream",
    "save_checkpoint",
    "symbolize_trace",
    "symbolize_traces",
    "synth_dataset",
    "synth_trace",
    "train",
]
