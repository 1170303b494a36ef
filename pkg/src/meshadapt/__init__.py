"""Source-free semi-supervised domain adaptation with a frozen classifier.

A source-trained classifier head is kept fixed while the encoder and
bottleneck adapt to a partially labeled target domain. Four mutually
reinforcing signals drive the adaptation: entropy minimisation on unlabeled
predictions, pseudo labels from graph propagation seeded by ground truth and
by low-uncertainty predictions, adversarial input smoothing, and a diversity
term that keeps the predicted class mix from collapsing.
"""

from .data import Dataset, gen_synthetic_shift, load_dataset, save_dataset, split_nshot
from .experiments import (
    DEFAULT_TASK,
    METHODS,
    ExperimentSpec,
    SyntheticTask,
    run_experiment,
    run_sweep,
)
from .model import ModelParams, init_model, load_model, save_model
from .trainer import AdaptConfig, TrainReport, adapt, evaluate, pretrain_source

__version__ = "0.1.0"

__all__ = [
    "AdaptConfig",
    "Dataset",
    "DEFAULT_TASK",
    "ExperimentSpec",
    "METHODS",
    "ModelParams",
    "SyntheticTask",
    "TrainReport",
    "adapt",
    "evaluate",
    "gen_synthetic_shift",
    "init_model",
    "load_dataset",
    "load_model",
    "pretrain_source",
    "run_experiment",
    "run_sweep",
    "save_dataset",
    "save_model",
    "split_nshot",
    "__version__",
]
