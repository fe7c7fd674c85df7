"""Minimal differentiable substrate for 1-D convolutional networks."""
from .gradcheck import GradCheckReport, grad_check
from .ops import (
    batch_norm1d_backward,
    batch_norm1d_forward,
    conv1d_backward,
    conv1d_forward,
    conv_transpose1d_backward,
    conv_transpose1d_forward,
    depthwise_conv1d_backward,
    depthwise_conv1d_forward,
    dropout_backward,
    dropout_forward,
    global_avg_pool_backward,
    global_avg_pool_forward,
    linear_backward,
    linear_forward,
    max_pool1d_backward,
    max_pool1d_forward,
    relu_backward,
    relu_forward,
    sigmoid_backward,
    sigmoid_forward,
    softmax_backward,
    softmax_forward,
    weighted_sum_backward,
    weighted_sum_forward,
)
from .store import Param, ParameterStore, adam_step
from .trace import Trace
