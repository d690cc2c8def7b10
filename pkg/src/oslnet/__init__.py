"""Orthogonal softmax layer networks, baselines and the experiment harness, in numpy."""

from .analysis import TTestReport, aggregate, angle_matrix, paired_ttest, verify_norm_bounds
from .data import DESK_BENCHMARK, DataRecipe, Dataset, generate_blobs, load_features, write_features
from .layers import DenseLayer, DropConnectLayer, DropoutLayer, MaskMatrix, OslLayer, build_mask
from .losses import LossKind
from .optim import RMSprop, CosineSchedule, SnapshotSet, capture_snapshot, ensemble_predict
from .training import ModelSpec, RunResult, TrainConfig, evaluate, run_rounds, train

__version__ = "0.1.0"

__all__ = [
    "CosineSchedule", "DESK_BENCHMARK", "DataRecipe", "Dataset", "DenseLayer", "DropConnectLayer",
    "DropoutLayer", "LossKind", "MaskMatrix", "ModelSpec", "OslLayer", "RMSprop", "RunResult",
    "SnapshotSet", "TTestReport", "TrainConfig", "aggregate", "angle_matrix", "build_mask",
    "capture_snapshot", "ensemble_predict", "evaluate", "generate_blobs", "load_features",
    "paired_ttest", "run_rounds", "train", "verify_norm_bounds", "write_features",
]
