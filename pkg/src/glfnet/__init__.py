"""Frequency-domain global/local filter segmentation network in numpy.

Everything runs on a small reverse-mode autodiff engine (:mod:`.autodiff`)
and a radix-2 FFT (:mod:`.spectral`); no deep learning framework is used.
"""

from .autodiff import Tensor, backward, grad_check, no_grad, parameter
from .blocks import WIRINGS, glf_module, local_filter_branch, global_filter_branch, wide_focus
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    FormatError,
    GLFNetError,
    NumericsError,
    ShapeError,
)
from .estimator import GLFNetSegmenter
from .flops import count_flops
from .network import ModelConfig, ModelParams, build_model, forward, predict_logits
from .spectral import Spectrum, fft, irfft2, rfft2, spectral_multiply
from .training import MetricsReport, TrainConfig, dice_coefficient, evaluate, fit, train_step

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ContractError",
    "DataError",
    "FormatError",
    "GLFNetError",
    "GLFNetSegmenter",
    "MetricsReport",
    "ModelConfig",
    "ModelParams",
    "NumericsError",
    "ShapeError",
    "Spectrum",
    "Tensor",
    "TrainConfig",
    "WIRINGS",
    "backward",
    "build_model",
    "count_flops",
    "dice_coefficient",
    "evaluate",
    "fft",
    "fit",
    "forward",
    "glf_module",
    "global_filter_branch",
    "grad_check",
    "irfft2",
    "local_filter_branch",
    "no_grad",
    "parameter",
    "predict_logits",
    "rfft2",
    "spectral_multiply",
    "train_step",
    "wide_focus",
]
