"""Light-head two-stage detector operators on a small numpy autograd engine."""
from .config import DetectorConfig, load_config, full_config, toy_config
from .tensor import Tensor

__all__ = ["DetectorConfig", "Tensor", "load_config", "full_config", "toy_config"]
