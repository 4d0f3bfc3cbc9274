"""Autodiff tensors and the 3D V-Net."""

from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import GradCheckReport, gradient_check
from .tensor import Tensor, concat, conv3d, conv_transpose3d, mse_loss, prelu, relu
from .vnet import VNetConfig, VNetModel, down_block, up_block, vnet_forward

__all__ = [
    "Tensor", "conv3d", "conv_transpose3d", "concat", "prelu", "relu", "mse_loss",
    "VNetConfig", "VNetModel", "vnet_forward", "down_block", "up_block",
    "gradient_check", "GradCheckReport", "save_checkpoint", "load_checkpoint",
]
