"""Small reverse-mode autodiff core: tensors, GRUs, Adam, gradient checks."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import UnreliableCheckError, gradient_check
from .gru import GruCellParams, bigru, gru_cell, gru_sequence
from .optim import Adam, OptimizerState, adam_step, clip_gradients, global_norm
from .tensor import (
    ShapeError,
    Tensor,
    add,
    backward,
    concat,
    cross_entropy,
    dropout,
    embedding_lookup,
    linear,
    log_softmax,
    matmul,
    mul,
    no_grad,
    sigmoid,
    softmax,
    tanh,
)

__all__ = [
    "Adam", "CheckpointError", "GruCellParams", "OptimizerState", "ShapeError", "Tensor",
    "UnreliableCheckError", "adam_step", "add", "backward", "bigru", "clip_gradients",
    "concat", "cross_entropy", "dropout", "embedding_lookup", "global_norm", "gradient_check",
    "gru_cell", "gru_sequence", "linear", "load_checkpoint", "log_softmax", "matmul", "mul",
    "no_grad", "save_checkpoint", "sigmoid", "softmax", "tanh",
]
