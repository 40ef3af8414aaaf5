from .checkpoint import load_checkpoint, restore, save_checkpoint, state_digest
from .gradcheck import numerical_grad, relative_error
from .gru import GRU, GRULayer
from .layers import (
    Conv1d, Dropout, LayerNorm, Linear, Module, Parameter, ReLU, ShapeError, sigmoid, softmax, softplus,
)
from .losses import bce_with_logits, hard_sum, pos_weight_for, uncertainty_loss
from .optim import AdamW, NonFiniteGradient, adamw_step, check_finite, clip_grad_norm, global_norm

__all__ = [
    "AdamW", "Conv1d", "Dropout", "GRU", "GRULayer", "LayerNorm", "Linear", "Module", "NonFiniteGradient",
    "Parameter", "ReLU", "ShapeError", "adamw_step", "bce_with_logits", "check_finite", "clip_grad_norm",
    "global_norm", "hard_sum", "load_checkpoint", "numerical_grad", "pos_weight_for", "relative_error",
    "restore", "save_checkpoint", "sigmoid", "softmax", "softplus", "state_digest", "uncertainty_loss",
]
