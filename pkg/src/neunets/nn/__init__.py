"""Dense-tensor numeric substrate: layer ops, LSTM, initializers, optimizers.

Conventions used throughout:
  * float32 everywhere, row-major, activations shaped (batch, height, width, channels)
  * convolution weights shaped (k1, k2, in_channels, out_channels)
  * every op comes as a forward returning (output, cache) and a backward
    consuming (cache, upstream_grad)
"""

from neunets.nn.init import he_normal_init, uniform_init, zeros_init
from neunets.nn.optim import OptimizerConfig, SGDMomentum, RMSProp, make_optimizer
from neunets.nn.ops import (
    as_f32,
    check_finite,
    conv_forward,
    conv_backward,
    separable_conv_forward,
    separable_conv_backward,
    dense_forward,
    dense_backward,
    relu_forward,
    relu_backward,
    softmax_forward,
    softmax_backward,
    maxpool_forward,
    maxpool_backward,
    avgpool_forward,
    avgpool_backward,
    global_avgpool_forward,
    global_avgpool_backward,
    batchnorm_forward,
    batchnorm_backward,
    dropout_forward,
    dropout_backward,
    embedding_forward,
    embedding_backward,
    conv_output_dim,
)
from neunets.nn.lstm import lstm_step, lstm_sequence_forward, lstm_sequence_backward

__all__ = [
    "as_f32",
    "check_finite",
    "conv_forward",
    "conv_backward",
    "separable_conv_forward",
    "separable_conv_backward",
    "dense_forward",
    "dense_backward",
    "relu_forward",
    "relu_backward",
    "softmax_forward",
    "softmax_backward",
    "maxpool_forward",
    "maxpool_backward",
    "avgpool_forward",
    "avgpool_backward",
    "global_avgpool_forward",
    "global_avgpool_backward",
    "batchnorm_forward",
    "batchnorm_backward",
    "dropout_forward",
    "dropout_backward",
    "embedding_forward",
    "embedding_backward",
    "conv_output_dim",
    "lstm_step",
    "lstm_sequence_forward",
    "lstm_sequence_backward",
    "he_normal_init",
    "uniform_init",
    "zeros_init",
    "OptimizerConfig",
    "SGDMomentum",
    "RMSProp",
    "make_optimizer",
]
