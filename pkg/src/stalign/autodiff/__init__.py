from .adam import AdamState, adam_step
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .tensor import (
    BackwardError,
    DiffTensor,
    ShapeError,
    add,
    concat,
    div,
    embedding,
    exp,
    expand,
    gelu,
    getitem,
    is_grad_enabled,
    l2_normalize,
    layer_norm,
    linear,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    no_grad,
    reshape,
    softmax,
    sub,
    sum,
    swapaxes,
    tanh,
    tensor,
    transpose,
)

__all__ = [
    "AdamState", "adam_step", "CheckpointError", "load_checkpoint", "save_checkpoint",
    "BackwardError", "DiffTensor", "ShapeError", "add", "concat", "div", "embedding", "exp",
    "expand", "gelu", "getitem", "is_grad_enabled", "l2_normalize", "layer_norm", "linear",
    "log", "log_softmax", "matmul", "mean", "mul", "no_grad", "reshape", "softmax", "sub",
    "sum", "swapaxes", "tanh", "tensor", "transpose",
]
