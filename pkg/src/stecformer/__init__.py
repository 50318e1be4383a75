"""Graph-fused, cascade-decoded auto-correlation forecaster on a numpy autodiff engine."""

from .data import (NormStats, RawSeries, SynthSpec, default_synth_spec, load_csv, normalize,
                   split_712, synth_dataset, window_arrays, windows, write_csv)
from .evaluation import (ABLATION_GRID, Ablation, ExperimentConfig, ForecastReport,
                         forecast_report, run_ablation, run_experiment, subperiod_consistency)
from .model import ModelConfig, Stecformer
from .tensor import Tape, Tensor, backward, grad_check, no_tape
from .training import TrainConfig, joint_loss, loss_weights, train

__all__ = [
    "ABLATION_GRID", "Ablation", "ExperimentConfig", "ForecastReport", "ModelConfig", "NormStats",
    "RawSeries", "Stecformer", "SynthSpec", "Tape", "Tensor", "TrainConfig", "backward",
    "default_synth_spec", "forecast_report", "grad_check", "joint_loss", "load_csv", "loss_weights",
    "no_tape", "normalize", "run_ablation", "run_experiment", "split_712", "subperiod_consistency",
    "synth_dataset", "train", "window_arrays", "windows", "write_csv",
]
