"""Float64 tensor ops with reverse-mode autodiff, Adam, and checkpoint I/O."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .optim import AdamState, adam_step
from .tensor import (
    ContractError,
    ShapeError,
    Tape,
    Tensor,
    add,
    backward,
    concat,
    constant,
    cross_entropy,
    embedding_lookup,
    gelu,
    layer_norm,
    matmul,
    mul,
    reshape,
    slice_axis,
    softmax,
    transpose,
)

__all__ = [
    "AdamState",
    "CheckpointError",
    "ContractError",
    "ShapeError",
    "Tape",
    "Tensor",
    "adam_step",
    "add",
    "backward",
    "concat",
    "constant",
    "cross_entropy",
    "embedding_lookup",
    "gelu",
    "layer_norm",
    "load_checkpoint",
    "matmul",
    "mul",
    "reshape",
    "save_checkpoint",
    "slice_axis",
    "softmax",
    "transpose",
]
