"""Minimal numpy CNN stack: layer kernels, preset networks, losses and training."""
from .losses import loss_bce, loss_joint
from .net import PRESETS, LayerSpec, NetSpec, Network, build_preset
from .train import TrainConfig, TrainingSet, augment_awgn, train, write_training_log

__all__ = [
    "loss_bce", "loss_joint", "PRESETS", "LayerSpec", "NetSpec", "Network", "build_preset",
    "TrainConfig", "TrainingSet", "augment_awgn", "train", "write_training_log",
]
