"""Minimal reverse-mode autodiff core: tensors, layers, graphs, Adam, checkpoints."""

from .tensor import (
    ShapeMismatch,
    Tensor,
    concat,
    conv2d,
    dense,
    flatten,
    maxpool2,
    relu,
)
from .layers import (
    Concat,
    Conv2d,
    CyclicGraph,
    Dense,
    Flatten,
    Graph,
    Layer,
    MaxPool2,
    ReLU,
    UnknownLayer,
    he_uniform,
)
from .optim import Adam, adam_step, init_adam_state
from .checkpoint import ChecksumMismatch, load_checkpoint, save_checkpoint

__all__ = [
    "Adam",
    "ChecksumMismatch",
    "Concat",
    "Conv2d",
    "CyclicGraph",
    "Dense",
    "Flatten",
    "Graph",
    "Layer",
    "MaxPool2",
    "ReLU",
    "ShapeMismatch",
    "Tensor",
    "UnknownLayer",
    "adam_step",
    "concat",
    "conv2d",
    "dense",
    "flatten",
    "he_uniform",
    "init_adam_state",
    "load_checkpoint",
    "maxpool2",
    "relu",
    "save_checkpoint",
]
