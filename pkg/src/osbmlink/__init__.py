"""Link prediction with a sparse graph transformer encoder and an overlapping-SBM posterior."""

from .autodiff import ContractError, DimensionError
from .config import RunConfig, TrainConfig, parse_config
from .encoder import ConfigError
from .training import load_checkpoint, save_checkpoint, score_pairs, train

__version__ = "0.1.0"

__all__ = ["ConfigError", "ContractError", "DimensionError", "RunConfig", "TrainConfig",
           "load_checkpoint", "parse_config", "save_checkpoint", "score_pairs", "train"]
