"""Toy panoramic depth estimation with geometry-aligned guidance.

A small numpy reverse-mode autodiff engine, ERP <-> cubemap resampling,
guidance-conditioned AdaLN-Zero transformer blocks, losses, metrics, a
synthetic box-room renderer and the CLI that ties them together.
"""

from .config import ModelConfig, read_config
from .errors import (
    ConfigError,
    ContractError,
    DimensionError,
    DomainError,
    FormatError,
    GeometryError,
    PanomodError,
    TrainingError,
    ValidationError,
)

__version__ = "0.1.0"

__all__ = [
    "ModelConfig",
    "read_config",
    "PanomodError",
    "ValidationError",
    "DimensionError",
    "DomainError",
    "GeometryError",
    "ConfigError",
    "FormatError",
    "ContractError",
    "TrainingError",
    "__version__",
]
