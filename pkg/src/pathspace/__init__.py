"""Horizontal path space on model foliations: transports, gradients, functional inequalities."""

from .geometry import build_euclidean_degenerate, build_heisenberg, get_model, list_models
from .sde import TimeGrid, integrate_horizontal_bm, integrate_transport, sample_brownian

__version__ = "0.1.0"

__all__ = [
    "build_heisenberg",
    "build_euclidean_degenerate",
    "get_model",
    "list_models",
    "TimeGrid",
    "sample_brownian",
    "integrate_horizontal_bm",
    "integrate_transport",
]
