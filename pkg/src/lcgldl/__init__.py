"""Label distribution learning with a Label Correlation Grid."""

from lcgldl.data import Dataset, FoldPlan, inject_gaussian_noise, load_csv, make_fold_plan, synth_dataset
from lcgldl.metrics import AggregateReport, MetricsReport, aggregate, evaluate_dataset, evaluate_pair
from lcgldl.harness import TrainConfig, cross_validate, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "FoldPlan",
    "load_csv",
    "make_fold_plan",
    "inject_gaussian_noise",
    "synth_dataset",
    "MetricsReport",
    "AggregateReport",
    "evaluate_pair",
    "evaluate_dataset",
    "aggregate",
    "TrainConfig",
    "train",
    "evaluate",
    "cross_validate",
]
