from .layers import (
    Conv2d,
    Dense,
    Dropout,
    Flatten,
    Layer,
    MaxPool,
    Network,
    ReLU,
    ResidualBlock,
    ShapeError,
    he_uniform,
)
from .train import (
    DivergenceError,
    EpochRecord,
    TrainConfig,
    backward,
    evaluate,
    sgd_step,
    softmax,
    softmax_cross_entropy,
    train,
)

__all__ = [
    "Conv2d",
    "Dense",
    "Dropout",
    "Flatten",
    "Layer",
    "MaxPool",
    "Network",
    "ReLU",
    "ResidualBlock",
    "ShapeError",
    "he_uniform",
    "DivergenceError",
    "EpochRecord",
    "TrainConfig",
    "backward",
    "evaluate",
    "sgd_step",
    "softmax",
    "softmax_cross_entropy",
    "train",
]
