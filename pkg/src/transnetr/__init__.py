"""TransNetR polyp segmentation on a numpy autodiff core."""

from .model import ModelConfig, TransNetR, build_model
from .tensor import Tensor, no_grad

__all__ = ["ModelConfig", "TransNetR", "Tensor", "build_model", "no_grad"]
__version__ = "0.1.0"
