"""Partial-to-whole knowledge distillation on a small numpy autograd core."""

from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from .data import Dataset, load_cifar10, load_dataset, load_mnist
from .decompose import DecomposeConfig, decompose_step, decompose_train, evaluate
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    MissingGradientError,
    NumericError,
    PWKDError,
    ShapeError,
)
from .estimators import PWKDStudentClassifier, SlimmableTeacherClassifier
from .losses import DistillConfig, student_loss
from .metrics import METRICS_COLUMNS, MetricsRow
from .runner import RunConfig, distill_train, run_baselines
from .slimmable import ArchSpec, SlimmableNet, build, build_plain, extract_standalone, forward_at_width
from .staging import LRSchedule, StagePlan, lr_at, make_plan, stage_for_epoch

__version__ = "0.1.0"

__all__ = [
    "ArchSpec", "CheckpointError", "ConfigError", "DataError", "Dataset", "DecomposeConfig",
    "DistillConfig", "LRSchedule", "METRICS_COLUMNS", "MetricsRow", "MissingGradientError",
    "NumericError", "PWKDError", "PWKDStudentClassifier", "RunConfig", "ShapeError",
    "SlimmableNet", "SlimmableTeacherClassifier", "StagePlan", "build", "build_plain",
    "decompose_step", "decompose_train", "distill_train", "evaluate", "extract_standalone",
    "forward_at_width", "load_checkpoint", "load_cifar10", "load_dataset", "load_mnist",
    "lr_at", "make_plan", "read_checkpoint", "run_baselines", "save_checkpoint",
    "stage_for_epoch", "student_loss",
]
