# ============================================================================
# core/numcore/tensor.py - Tensor and Gradient Tape
# ============================================================================

"""
Dense tensors with define-by-run reverse-mode differentiation.

Operations on tensors that require gradients are appended to the calling
thread's current Tape. backward() walks that tape in reverse once and then
marks it consumed; a consumed tape cannot be replayed.
"""

import logging
import threading
from contextlib import contextmanager
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from core.errors import ContractError, NumericalError, TapeError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_DTYPES = {"float32": np.float32, "float64": np.float64}


class _ThreadState(threading.local):
    def __init__(self) -> None:
        self.dtype = np.float32
        self.grad_enabled = True
        self.detect_anomaly = False
        self.tape: Optional["Tape"] = None


_state = _ThreadState()


# ---------------------------------------------------------------------------
# Precision and modes
# ---------------------------------------------------------------------------

def resolve_dtype(dtype) -> np.dtype:
    if isinstance(dtype, str):
        if dtype not in _DTYPES:
            raise ContractError(f"unsupported precision {dtype!r}; use one of {sorted(_DTYPES)}")
        return np.dtype(_DTYPES[dtype])
    return np.dtype(dtype)


def get_default_dtype() -> np.dtype:
    return np.dtype(_state.dtype)


def set_default_dtype(dtype) -> None:
    _state.dtype = resolve_dtype(dtype).type


@contextmanager
def default_dtype(dtype) -> Iterator[None]:
    previous = _state.dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = previous


def is_grad_enabled() -> bool:
    return _state.grad_enabled


@contextmanager
def no_grad() -> Iterator[None]:
    previous = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


def is_anomaly_enabled() -> bool:
    return _state.detect_anomaly


@contextmanager
def detect_anomaly(enabled: bool = True) -> Iterator[None]:
    """Raise NumericalError as soon as any operation produces NaN/Inf"""
    previous = _state.detect_anomaly
    _state.detect_anomaly = enabled
    try:
        yield
    finally:
        _state.detect_anomaly = previous


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------

class _Node:
    __slots__ = ("output", "inputs", "backward", "name", "index")

    def __init__(self, output: "Tensor", inputs: Tuple["Tensor", ...], backward: BackwardFn, name: str):
        self.output = output
        self.inputs = inputs
        self.backward = backward
        self.name = name
        self.index = -1


class Tape:
    """Ordered record of executed operations; inputs always precede their consumers"""

    def __init__(self) -> None:
        self._nodes: List[_Node] = []
        self.consumed = False

    def __len__(self) -> int:
        return len(self._nodes)

    @property
    def op_names(self) -> List[str]:
        return [node.name for node in self._nodes]

    def record(self, node: _Node) -> None:
        if self.consumed:
            raise TapeError("cannot record on a consumed tape; start a new tape first")
        node.index = len(self._nodes)
        self._nodes.append(node)

    def reset(self) -> None:
        self._nodes.clear()
        self.consumed = False


def current_tape() -> Tape:
    if _state.tape is None or _state.tape.consumed:
        _state.tape = Tape()
    return _state.tape


def new_tape() -> Tape:
    """Replace the calling thread's tape with a fresh one"""
    _state.tape = Tape()
    return _state.tape


# ---------------------------------------------------------------------------
# Tensor
# ---------------------------------------------------------------------------

class Tensor:
    """Dense n-dimensional array with optional gradient participation"""

    __array_priority__ = 100

    def __init__(self, data: ArrayLike, requires_grad: bool = False, dtype=None):
        target = resolve_dtype(dtype) if dtype is not None else get_default_dtype()
        self.data: np.ndarray = np.array(data, dtype=target)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.retains_grad = False
        self._node: Optional[_Node] = None
        self._tape: Optional[Tape] = None

    @classmethod
    def _wrap(cls, data: np.ndarray, requires_grad: bool) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = requires_grad
        out.grad = None
        out.retains_grad = False
        out._node = None
        out._tape = None
        return out

    # -- properties ---------------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.shape[0]

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, requires_grad=False)

    def retain_grad(self) -> "Tensor":
        """Keep dLoss/dSelf on this intermediate tensor after backward"""
        self.retains_grad = True
        return self

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    # -- operators (implemented in ops) --------------------------------------

    def __add__(self, other): return _ops.add(self, other)
    def __radd__(self, other): return _ops.add(other, self)
    def __sub__(self, other): return _ops.sub(self, other)
    def __rsub__(self, other): return _ops.sub(other, self)
    def __mul__(self, other): return _ops.mul(self, other)
    def __rmul__(self, other): return _ops.mul(other, self)
    def __truediv__(self, other): return _ops.div(self, other)
    def __rtruediv__(self, other): return _ops.div(other, self)
    def __neg__(self): return _ops.neg(self)
    def __pow__(self, exponent: float): return _ops.pow(self, exponent)
    def __matmul__(self, other): return _ops.matmul(self, other)
    def __getitem__(self, index): return _ops.getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False): return _ops.sum(self, axis, keepdims)
    def mean(self, axis=None, keepdims: bool = False): return _ops.mean(self, axis, keepdims)
    def max(self, axis=None, keepdims: bool = False): return _ops.max(self, axis, keepdims)
    def reshape(self, *shape): return _ops.reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)
    def transpose(self, *axes): return _ops.transpose(self, axes or None)
    def swapaxes(self, a: int, b: int): return _ops.swapaxes(self, a, b)
    def exp(self): return _ops.exp(self)
    def log(self): return _ops.log(self)
    def sqrt(self): return _ops.sqrt(self)


def as_tensor(value: Union["Tensor", ArrayLike], dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, requires_grad=False, dtype=dtype)


def record(
    data: np.ndarray,
    inputs: Sequence[Tensor],
    backward_fn: BackwardFn,
    name: str,
) -> Tensor:
    """Wrap an operation result and put it on the tape when any input needs grad"""
    inputs = tuple(inputs)
    dtype = inputs[0].dtype if inputs else get_default_dtype()
    data = np.asarray(data, dtype=dtype)

    if _state.detect_anomaly and not np.all(np.isfinite(data)):
        raise NumericalError(f"operation '{name}' produced a non-finite value", term=name)

    needs_grad = _state.grad_enabled and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(data, requires_grad=needs_grad)
    if needs_grad:
        tape = current_tape()
        node = _Node(out, inputs, backward_fn, name)
        tape.record(node)
        out._node = node
        out._tape = tape
    return out


def backward(loss: Tensor) -> None:
    """Populate .grad on every requires_grad leaf (and retained intermediate)"""
    if loss.size != 1:
        raise TapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if loss._node is None or loss._tape is None:
        raise TapeError("loss is not on a gradient tape (no input requires grad)")

    tape = loss._tape
    if tape.consumed:
        raise TapeError("tape already consumed by an earlier backward(); rerun the forward pass")

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape._nodes[: loss._node.index + 1]):
        grad = grads.pop(id(node.output), None)
        if grad is None:
            continue
        if node.output.retains_grad:
            node.output.grad = grad if node.output.grad is None else node.output.grad + grad

        input_grads = node.backward(grad)
        for inp, inp_grad in zip(node.inputs, input_grads):
            if inp_grad is None or not inp.requires_grad:
                continue
            inp_grad = np.asarray(inp_grad, dtype=inp.dtype)
            if inp_grad.shape != inp.shape:
                raise TapeError(
                    f"gradient shape {inp_grad.shape} does not match input shape {inp.shape} "
                    f"in operation '{node.name}'"
                )
            if inp._node is None:
                inp.grad = inp_grad.copy() if inp.grad is None else inp.grad + inp_grad
            else:
                key = id(inp)
                grads[key] = inp_grad if key not in grads else grads[key] + inp_grad

    tape.consumed = True
    tape._nodes.clear()
    logger.debug("backward pass complete")


from core.numcore import ops as _ops  # noqa: E402  (operator methods resolve at call time)
