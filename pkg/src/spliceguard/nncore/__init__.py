"""Minimal reverse-mode autodiff with the layers, optimizer and schedule the detector needs."""

from .autograd import Parameter, Tensor, as_tensor, concat, no_grad, relu, sigmoid, softmax, tanh
from .gradcheck import finite_difference_check
from .layers import (
    affine,
    bce_with_logits,
    bilstm,
    conv1d,
    layer_norm,
    lstm,
    multi_head_self_attention,
    sinusoidal_positions,
    transformer_encoder_layer,
)
from .optim import OptimizerState, adam_step, noam_lr
from .serialization import decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint

__all__ = [
    "OptimizerState",
    "Parameter",
    "Tensor",
    "adam_step",
    "affine",
    "as_tensor",
    "bce_with_logits",
    "bilstm",
    "concat",
    "conv1d",
    "decode_checkpoint",
    "encode_checkpoint",
    "finite_difference_check",
    "layer_norm",
    "load_checkpoint",
    "lstm",
    "multi_head_self_attention",
    "no_grad",
    "noam_lr",
    "relu",
    "save_checkpoint",
    "sigmoid",
    "sinusoidal_positions",
    "softmax",
    "tanh",
    "transformer_encoder_layer",
]
