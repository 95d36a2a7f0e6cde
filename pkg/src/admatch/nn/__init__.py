from . import autodiff, checkpoint, layers, optim
from .autodiff import Tensor, no_grad

__all__ = ["autodiff", "checkpoint", "layers", "optim", "Tensor", "no_grad"]
