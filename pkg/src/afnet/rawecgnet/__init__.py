"""Two-step raw-ECG AF detector: window encoder plus BiGRU context head."""
from .model import ContextHead, Encoder, ModelSpec, RawECGNet, ResBlock, zscore
from .training import (
    History, TrainConfig, context_indices, encode, fit, fit_head, group_sequences, head_probs,
    predict_recording, select_threshold, sequence_dataset, train_step1, train_step2,
    window_arrays, window_probabilities,
)

# compact configuration for desk-scale runs and tests
TINY_SPEC = dict(base_channels=4, kernel_size=7, dense_units=64, gru_hidden=16)
