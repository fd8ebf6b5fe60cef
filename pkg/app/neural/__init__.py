"""Numpy convolutional network engine: layers, VDSR/U-Net, losses, Adam, training, weights."""

from app.neural.layers import ConcatSkip, Conv2D, MaxPool2, ReLU, ResidualAddInput, TConv2D, he_init
from app.neural.losses import LossKind, mse_loss, ssim_loss
from app.neural.network import Network, Topology, TopologyKind, build_network, build_unet, build_vdsr
from app.neural.optim import adam_step
from app.neural.trainer import TrainConfig, TrainingHistory, evaluate, predict, train
from app.neural.weights import load_weights, save_weights, warm_start

__all__ = [
    "ConcatSkip",
    "Conv2D",
    "MaxPool2",
    "ReLU",
    "ResidualAddInput",
    "TConv2D",
    "he_init",
    "LossKind",
    "mse_loss",
    "ssim_loss",
    "Network",
    "Topology",
    "TopologyKind",
    "build_network",
    "build_unet",
    "build_vdsr",
    "adam_step",
    "TrainConfig",
    "TrainingHistory",
    "evaluate",
    "predict",
    "train",
    "load_weights",
    "save_weights",
    "warm_start",
]
