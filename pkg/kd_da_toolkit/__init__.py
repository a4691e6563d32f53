"""
Public package entry points for kd_da_toolkit.
"""

from .augment import ComposedBatch, DAScheme, LossMode, compose_batch
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import build_experiment_config, experiment_defaults, load_config
from .data import Dataset, MalformedFileError, gen_synthetic, load_cifar_binary
from .distill import DistillConfig, PickConfig, cutmix_pick, kd_loss, kl_only_loss, train_student, train_teacher
from .metrics import WindowStats, shannon_entropy, t_stddev
from .nn import Model, ScheduleConfig, build_model, lr_at, sgd_step
from .stats import CorrelationReport, pearson
from .tensor import Tensor, no_grad

__all__ = [
    "Tensor",
    "no_grad",
    "Model",
    "ScheduleConfig",
    "build_model",
    "sgd_step",
    "lr_at",
    "DAScheme",
    "LossMode",
    "ComposedBatch",
    "compose_batch",
    "Dataset",
    "MalformedFileError",
    "gen_synthetic",
    "load_cifar_binary",
    "DistillConfig",
    "PickConfig",
    "kd_loss",
    "kl_only_loss",
    "cutmix_pick",
    "train_teacher",
    "train_student",
    "WindowStats",
    "shannon_entropy",
    "t_stddev",
    "CorrelationReport",
    "pearson",
    "CheckpointError",
    "save_checkpoint",
    "load_checkpoint",
    "experiment_defaults",
    "build_experiment_config",
    "load_config",
]
