"""Cross-modal semi-supervised domain adaptation with simultaneously trained
auto-encoders and a class-wise MMD alignment loss."""

__version__ = "0.1.0"

from .datagen import Dataset, DatasetConfig, generate_paired, load_dataset, save_dataset
from .losses import LossConfig
from .model import AdaptationModel, AutoencoderSpec, HeadSpec, build_adaptation_model, load_model, save_model
from .pipeline import TrainingConfig, predict, run_full_pipeline

__all__ = [
    "AdaptationModel", "AutoencoderSpec", "Dataset", "DatasetConfig", "HeadSpec", "LossConfig",
    "TrainingConfig", "build_adaptation_model", "generate_paired", "load_dataset", "load_model",
    "predict", "run_full_pipeline", "save_dataset", "save_model",
]
