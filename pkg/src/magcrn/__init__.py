"""Meta-attentive graph convolutional recurrent network for traffic forecasting, on numpy."""
from .model import ModelConfig, forward, init, pemsd4_config, tiny_config
from .trainer import TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = ["ModelConfig", "TrainConfig", "evaluate", "forward", "init", "pemsd4_config", "tiny_config", "train"]
