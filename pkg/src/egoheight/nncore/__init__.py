"""Small numpy neural-network engine: layers, backprop, optimizers."""

from . import layers
from .gradcheck import GradcheckReport, gradcheck
from .layers import LayerSpec, softmax_fn
from .losses import mse_loss, softmax_cross_entropy
from .network import Network, infer_shapes
from .ops import (
    ShapeError,
    conv2d_backward,
    conv2d_forward,
    conv3d_backward,
    conv3d_forward,
    maxpool_backward,
    maxpool_forward,
)
from .optim import SGD, Adam, make_optimizer
from .serialize import ModelFileError, load_model, save_model

__all__ = [
    "Adam",
    "GradcheckReport",
    "LayerSpec",
    "ModelFileError",
    "Network",
    "SGD",
    "ShapeError",
    "conv2d_backward",
    "conv2d_forward",
    "conv3d_backward",
    "conv3d_forward",
    "gradcheck",
    "infer_shapes",
    "layers",
    "load_model",
    "make_optimizer",
    "maxpool_backward",
    "maxpool_forward",
    "mse_loss",
    "save_model",
    "softmax_cross_entropy",
    "softmax_fn",
]
