"""Blind source separation with directly optimized latent trajectories.

Each latent source carries its own Gaussian-process energy with a learnable
RBF length-scale; a linear map or small MLP explains the observations and a
correlation penalty keeps the latents apart.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    InvalidArgumentError,
    NotPositiveDefiniteError,
    NumericalInstabilityError,
    StrEBMError,
    TrainingDivergedError,
    UndefinedCorrelationError,
    UnsupportedSizeError,
)
from .evaluation import MatchReport, permutation_match  # noqa: E402
from .trainer import EpochRecord, TrainConfig, TrainState, train  # noqa: E402

__all__ = [
    "EpochRecord",
    "InvalidArgumentError",
    "MatchReport",
    "NotPositiveDefiniteError",
    "NumericalInstabilityError",
    "StrEBMError",
    "TrainConfig",
    "TrainState",
    "TrainingDivergedError",
    "UndefinedCorrelationError",
    "UnsupportedSizeError",
    "permutation_match",
    "train",
]
