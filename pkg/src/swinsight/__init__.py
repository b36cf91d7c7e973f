"""Swin-Transformer CGI detection on a small numpy autodiff engine."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    CheckpointError,
    ConfigError,
    DataError,
    NumericError,
    ShapeError,
    SwinsightError,
)
from .estimator import TSNE, ImagePreprocessor, SwinClassifier  # noqa: E402

__all__ = [
    "__version__",
    "CheckpointError",
    "ConfigError",
    "DataError",
    "NumericError",
    "ShapeError",
    "SwinsightError",
    "ImagePreprocessor",
    "SwinClassifier",
    "TSNE",
]
