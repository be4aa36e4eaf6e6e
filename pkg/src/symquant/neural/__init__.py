"""Symmetric quantifiers: set networks trained directly on labelled bags."""
from .autograd import Tensor
from .gradcheck import GradCheckReport, gradient_check
from .kernels import BACKEND
from .layers import (Dense, HistogramLayer, HistogramLayerParams, Pooling, histogram_forward,
                     init_histogram_params, pooling_forward)
from .network import NetworkConfig, QuantNetwork, network_forward
from .training import (AdamW, EmptyDataset, NonFiniteLoss, PRESETS, TrainConfig, TrainHistory,
                       backward_and_step, compute_loss, preset, train)

__all__ = [
    "BACKEND", "Tensor", "Dense", "HistogramLayer", "HistogramLayerParams", "Pooling",
    "histogram_forward", "init_histogram_params", "pooling_forward", "NetworkConfig",
    "QuantNetwork", "network_forward", "AdamW", "EmptyDataset", "NonFiniteLoss", "PRESETS",
    "TrainConfig", "TrainHistory", "backward_and_step", "compute_loss", "preset", "train",
    "GradCheckReport", "gradient_check",
]
