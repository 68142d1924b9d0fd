"""Ensembles of feedforward-designed CNNs.

Saab convolutional layers, least-squares FC stages, diversity-driven rosters
and SVM decision fusion with an easy/hard second stage.
"""
from .config import ConfigError, ExperimentConfig, load_config
from .data_io import DataFormatError, LabeledImageSet
from .ensemble import EnsembleModel, fit_ensemble, predict_ensemble, predict_two_stage
from .ffcnn import BaseConfig, FeatureView, ViewKind, predict_base, train_base
from .modelfile import ModelFileError, load_model, save_model

__version__ = "0.1.0"

__all__ = [
    "BaseConfig",
    "ConfigError",
    "DataFormatError",
    "EnsembleModel",
    "ExperimentConfig",
    "FeatureView",
    "LabeledImageSet",
    "ModelFileError",
    "ViewKind",
    "fit_ensemble",
    "load_config",
    "load_model",
    "predict_base",
    "predict_ensemble",
    "predict_two_stage",
    "save_model",
    "train_base",
]
