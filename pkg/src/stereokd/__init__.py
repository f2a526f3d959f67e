"""Iterative stereo disparity estimation with selective multi-teacher transfer.

A small numpy implementation of a recurrent stereo matcher whose context
encoder absorbs features from several synthetic foundation-model teachers
through gated fusion and feature distillation.  Hot kernels are jitted with
numba, with a pure-numpy fallback selected by the STEREOKD_BACKEND env var.
"""

__version__ = "0.1.0"

from .backend import backend_name, set_backend
from .errors import (ConfigError, ContractError, DimensionError,
                     EmptyReductionError, FormatError, GraphError,
                     NumericsError, StereoKdError)
from .tensor import Tensor, no_grad

__all__ = [
    "Tensor", "no_grad", "backend_name", "set_backend",
    "StereoKdError", "ConfigError", "ContractError", "DimensionError",
    "EmptyReductionError", "FormatError", "GraphError", "NumericsError",
    "__version__",
]
