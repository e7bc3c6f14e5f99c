"""Invertible U-Nets with learnable orthogonal resampling (CPU, float64).

The package implements fully invertible multiscale networks whose down- and
upsampling operators are orthogonal convolutions parametrized by matrix
exponentials of skew-symmetric matrices, two interchangeable backpropagation
engines (activation-storing and activation-reconstructing), and exact
normalizing-flow likelihoods on top of the same networks.
"""

from .errors import (
    CheckpointError,
    ConfigurationError,
    GenerationError,
    NumericsError,
    ShapeError,
    UsageError,
)
from .net import GradReport, IUNet, IUNetConfig, build, channel_ladder
from .resample import ResampleOp
from .tensor import StrideSpec

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "ConfigurationError",
    "GenerationError",
    "GradReport",
    "IUNet",
    "IUNetConfig",
    "NumericsError",
    "ResampleOp",
    "ShapeError",
    "StrideSpec",
    "UsageError",
    "build",
    "channel_ladder",
    "__version__",
]
