"""Minimal 1-D convolutional network engine with manual back-propagation."""

from .layers import (
    LEAKY_SLOPE,
    ConvLayerSpec,
    DenseLayerSpec,
    DropoutSpec,
    FlattenSpec,
    PoolSpec,
    ReshapeSpec,
    activation,
    conv1d_forward,
    conv1d_transposed_forward,
    dense_forward,
    dropout,
    maxpool1d,
    same_padding,
)
from .losses import LOG_CLAMP, gan_losses, l2_penalty, mae_loss
from .network import Network, backward, load_networks, save_networks
from .optim import OptimizerState, adam_step

__all__ = [
    "LEAKY_SLOPE",
    "LOG_CLAMP",
    "ConvLayerSpec",
    "DenseLayerSpec",
    "DropoutSpec",
    "FlattenSpec",
    "Network",
    "OptimizerState",
    "PoolSpec",
    "ReshapeSpec",
    "activation",
    "adam_step",
    "backward",
    "conv1d_forward",
    "conv1d_transposed_forward",
    "dense_forward",
    "dropout",
    "gan_losses",
    "l2_penalty",
    "load_networks",
    "mae_loss",
    "maxpool1d",
    "same_padding",
    "save_networks",
]
