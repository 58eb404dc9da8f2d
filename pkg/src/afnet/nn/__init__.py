"""Minimal numpy layers with hand-written backward passes."""
from .functional import (
    batchnorm, batchnorm_backward, bigru, bigru_backward, conv1d, conv1d_backward, dense,
    dense_backward, dropout, dropout_backward, gru, gru_backward, lrelu, lrelu_backward,
    maxpool1d, maxpool1d_backward, relu, relu_backward, sigmoid, sigmoid_backward, tanh,
    tanh_backward,
)
from .layers import (
    BatchNorm, BiGRU, Conv1d, Dense, Dropout, Flatten, LeakyReLU, MaxPool1d, Module, ReLU,
    Sequential, Sigmoid, Tanh,
)
from .losses import balanced_pos_weight, weighted_bce, weighted_bce_with_logits
from .optim import Adam, AdamState, adam_step
