"""Hidden conditional random fields that learn with training-only privileged features."""

from .crf import HCRFConfig, ModelParams
from .model_io import load_model, save_model
from .robust_t import StudentTJoint, condition, fit_em
from .seqdata import Dataset, SequenceSample, SynthSpec, generate_synthetic, load_dataset, save_dataset
from .train import TrainConfig, TrainedModel, cross_validate, predict, train, train_hcrf

__all__ = [
    "Dataset", "HCRFConfig", "ModelParams", "SequenceSample", "StudentTJoint", "SynthSpec",
    "TrainConfig", "TrainedModel", "condition", "cross_validate", "fit_em", "generate_synthetic",
    "load_dataset", "load_model", "predict", "save_dataset", "save_model", "train", "train_hcrf",
]
