"""Gated convolutional networks for cross-domain sentiment classification, in numpy."""

from .model import GateKind, forward, init_model, load_checkpoint, predict, save_checkpoint
from .training import TrainConfig, fit

__version__ = "0.1.0"

__all__ = ["GateKind", "TrainConfig", "fit", "forward", "init_model", "load_checkpoint", "predict", "save_checkpoint"]
