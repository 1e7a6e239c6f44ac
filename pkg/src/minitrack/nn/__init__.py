from .adam import AdamSet, AdamState, adam_step
from .ops import (
    conv2d_valid,
    conv2d_valid_batch,
    conv2d_backward,
    conv2d_backward_batch,
    conv_output_extent,
    cross_correlate,
    cross_correlate_backward,
    softmax,
    softmax_xent,
    sigmoid,
    relu,
    leaky_relu,
    upsample2,
    upsample2_backward,
    ensure_finite,
)
from .weights import load_weights, save_weights

__all__ = [
    "AdamSet",
    "AdamState",
    "adam_step",
    "conv2d_valid",
    "conv2d_valid_batch",
    "conv2d_backward",
    "conv2d_backward_batch",
    "conv_output_extent",
    "cross_correlate",
    "cross_correlate_backward",
    "softmax",
    "softmax_xent",
    "sigmoid",
    "relu",
    "leaky_relu",
    "upsample2",
    "upsample2_backward",
    "ensure_finite",
    "load_weights",
    "save_weights",
]
