"""Strided-convolution encoder-decoder baseline for depth hand segmentation."""

__version__ = "0.1.0"

from .net import NetSpec, build_network  # noqa: F401
from .train import TrainConfig, predict, train  # noqa: F401
