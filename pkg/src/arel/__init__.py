"""Attention-based episodic reward redistribution for cooperative multi-agent RL, in plain numpy."""

__version__ = "0.1.0"

from .attention import ConfigError
from .config import RunConfig
from .model import ArelConfig, ArelModel
from .ndtensor import ContractError, DimensionError, Tensor
from .redistribution import (CreditTrainer, ExperienceBuffer, NumericalDivergence, Trajectory, TrajectoryError,
                             mix_rewards)

__all__ = ["ArelConfig", "ArelModel", "ConfigError", "ContractError", "CreditTrainer", "DimensionError",
           "ExperienceBuffer", "NumericalDivergence", "RunConfig", "Tensor", "Trajectory", "TrajectoryError",
           "mix_rewards", "__version__"]
