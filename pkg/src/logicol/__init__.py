"""Dense retrieval with logical-consistency constraints on synthetic data."""

from __future__ import annotations

__version__ = "0.1.0"

from .data import Dataset, SynthConfig, load_dataset, save_dataset, synthesize_dataset
from .encoder import EncoderModel, HashConfig, load_checkpoint, save_checkpoint
from .experiment import AblationSpec, alpha_sweep, reproduce, run_experiment
from .logic import QueryExpr, Relation, Template, derive_relation
from .losses import LossConfig, joint_loss
from .retrieval import build_index, evaluate, rank
from .training import TrainConfig, train

__all__ = [
    "AblationSpec", "Dataset", "EncoderModel", "HashConfig", "LossConfig", "QueryExpr",
    "Relation", "SynthConfig", "Template", "TrainConfig", "alpha_sweep", "build_index",
    "derive_relation", "evaluate", "joint_loss", "load_checkpoint", "load_dataset", "rank",
    "reproduce", "run_experiment", "save_checkpoint", "save_dataset", "synthesize_dataset", "train",
]
