"""
numcore - minimal dense tensor library with reverse-mode autodiff

Tensor/Tape live in tensor.py, differentiable primitives in ops.py, layers in
nn.py, the finite-difference oracle in gradcheck.py and AdamW in optim.py.
"""

from core.numcore.tensor import (
    Tape,
    Tensor,
    as_tensor,
    backward,
    current_tape,
    default_dtype,
    detect_anomaly,
    get_default_dtype,
    is_grad_enabled,
    new_tape,
    no_grad,
    record,
    resolve_dtype,
    set_default_dtype,
)
from core.numcore import ops
from core.numcore.gradcheck import check_gradients, finite_diff_grad, relative_error
from core.numcore.optim import AdamW

__all__ = [
    "Tape",
    "Tensor",
    "AdamW",
    "as_tensor",
    "backward",
    "check_gradients",
    "current_tape",
    "default_dtype",
    "detect_anomaly",
    "finite_diff_grad",
    "get_default_dtype",
    "is_grad_enabled",
    "new_tape",
    "no_grad",
    "ops",
    "record",
    "relative_error",
    "resolve_dtype",
    "set_default_dtype",
]
