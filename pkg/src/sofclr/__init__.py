"""Fair self-supervised contrastive learning with stochastic compositional minimax optimization."""

__version__ = "0.1.0"

from .data import AugmentOp, Dataset, SyntheticConfig, gen_synthetic, load_csv, save_csv, split_annotate
from .estimator import FairContrastiveEncoder
from .fairmetrics import MetricsReport, ScoredExample, evaluate_scored
from .linear_eval import LinearProbe, evaluate_probe, fit_probe
from .trainer import History, TrainConfig, TrainState, schedule, step, train

__all__ = [
    "AugmentOp",
    "Dataset",
    "SyntheticConfig",
    "gen_synthetic",
    "load_csv",
    "save_csv",
    "split_annotate",
    "FairContrastiveEncoder",
    "MetricsReport",
    "ScoredExample",
    "evaluate_scored",
    "LinearProbe",
    "evaluate_probe",
    "fit_probe",
    "History",
    "TrainConfig",
    "TrainState",
    "schedule",
    "step",
    "train",
]
