"""Sketched empirical natural gradient (SENG) optimization on a small numpy network core."""

from .kernels import BACKEND
from .net import GradientFactors, Network, loss_and_grad, materialize_gradient, mlp
from .optimizer import SENG, SGD, MetricsRecord, TrainConfig, schedule_eval

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "GradientFactors",
    "MetricsRecord",
    "Network",
    "SENG",
    "SGD",
    "TrainConfig",
    "loss_and_grad",
    "materialize_gradient",
    "mlp",
    "schedule_eval",
]
