# ============================================================================
# core/numcore/ops.py - Differentiable Operations
# ============================================================================

"""
Primitive operations. Each computes its forward value with numpy and, when
an input requires grad, records a closure returning one gradient per input.
"""

import math
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import erf

from core.errors import ContractError
from core.numcore.tensor import Tensor, as_tensor, record

Operand = Union[Tensor, np.ndarray, float, int]

_SQRT_2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`"""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, dim in enumerate(shape) if dim == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _pair(a: Operand, b: Operand) -> Tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, dtype=a.dtype)
    if isinstance(b, Tensor):
        return as_tensor(a, dtype=b.dtype), b
    return as_tensor(a), as_tensor(b)


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a: Operand, b: Operand) -> Tensor:
    a, b = _pair(a, b)

    def grad_fn(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return record(a.data + b.data, (a, b), grad_fn, "add")


def sub(a: Operand, b: Operand) -> Tensor:
    a, b = _pair(a, b)

    def grad_fn(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return record(a.data - b.data, (a, b), grad_fn, "sub")


def mul(a: Operand, b: Operand) -> Tensor:
    a, b = _pair(a, b)

    def grad_fn(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    return record(a.data * b.data, (a, b), grad_fn, "mul")


def div(a: Operand, b: Operand) -> Tensor:
    a, b = _pair(a, b)

    def grad_fn(g):
        return (
            unbroadcast(g / b.data, a.shape),
            unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return record(a.data / b.data, (a, b), grad_fn, "div")


def neg(a: Tensor) -> Tensor:
    return record(-a.data, (a,), lambda g: (-g,), "neg")


def pow(a: Tensor, exponent: float) -> Tensor:
    exponent = float(exponent)

    def grad_fn(g):
        return (g * exponent * np.power(a.data, exponent - 1.0),)

    return record(np.power(a.data, exponent), (a,), grad_fn, "pow")


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)
    return record(out_data, (a,), lambda g: (g * out_data,), "exp")


def log(a: Tensor) -> Tensor:
    return record(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)
    return record(out_data, (a,), lambda g: (g * 0.5 / out_data,), "sqrt")


def sigmoid(a: Tensor) -> Tensor:
    out_data = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return record(out_data, (a,), lambda g: (g * out_data * (1.0 - out_data),), "sigmoid")


def softplus(a: Tensor) -> Tensor:
    """log(1 + e^x), stable for large |x|"""
    x = a.data
    out_data = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

    def grad_fn(g):
        return (g * 0.5 * (1.0 + np.tanh(0.5 * x)),)

    return record(out_data, (a,), grad_fn, "softplus")


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------

def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return record(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def gelu(a: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x)"""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / _SQRT_2))

    def grad_fn(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        return (g * (cdf + x * pdf),)

    return record(x * cdf, (a,), grad_fn, "gelu")


def silu(a: Tensor) -> Tensor:
    x = a.data
    sig = 0.5 * (1.0 + np.tanh(0.5 * x))

    def grad_fn(g):
        return (g * sig * (1.0 + x * (1.0 - sig)),)

    return record(x * sig, (a,), grad_fn, "silu")


_ACTIVATIONS = {"gelu": gelu, "silu": silu, "relu": relu}


def activation(a: Tensor, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ContractError(f"unknown activation {kind!r}; choose from {sorted(_ACTIVATIONS)}")
    return fn(a)


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Operand, b: Operand) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast"""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ContractError(f"matmul needs rank >= 2 operands, got shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ContractError(
            f"matmul inner dimensions disagree: {a.shape} x {b.shape} "
            f"({a.shape[-1]} != {b.shape[-2]})"
        )

    def grad_fn(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return record(np.matmul(a.data, b.data), (a, b), grad_fn, "matmul")


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------

def _normalize_axes(axis, ndim: int) -> Optional[Tuple[int, ...]]:
    if axis is None:
        return None
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    return tuple(ax % ndim for ax in axes)


def _expand_reduced(g: np.ndarray, axes: Optional[Tuple[int, ...]], keepdims: bool, ndim: int) -> np.ndarray:
    if keepdims or axes is None and g.ndim == ndim:
        return g
    if axes is None:
        return np.reshape(g, (1,) * ndim)
    for ax in sorted(axes):
        g = np.expand_dims(g, ax)
    return g


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, a.ndim)

    def grad_fn(g):
        return (np.broadcast_to(_expand_reduced(g, axes, keepdims, a.ndim), a.shape).copy(),)

    return record(np.sum(a.data, axis=axes, keepdims=keepdims), (a,), grad_fn, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, a.ndim)
    count = a.size if axes is None else int(np.prod([a.shape[ax] for ax in axes]))

    def grad_fn(g):
        expanded = _expand_reduced(g, axes, keepdims, a.ndim) / count
        return (np.broadcast_to(expanded, a.shape).copy(),)

    return record(np.mean(a.data, axis=axes, keepdims=keepdims), (a,), grad_fn, "mean")


def max(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    """Maximum along one axis; the gradient goes to the first maximal entry"""
    if axis is None:
        flat = reshape(a, (a.size,))
        return max(flat, axis=0, keepdims=False)
    axis = axis % a.ndim
    idx = np.argmax(a.data, axis=axis)
    out_data = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis)
    if not keepdims:
        out_data = np.squeeze(out_data, axis=axis)

    def grad_fn(g):
        g_exp = g if keepdims else np.expand_dims(g, axis)
        grad = np.zeros_like(a.data)
        np.put_along_axis(grad, np.expand_dims(idx, axis), g_exp, axis=axis)
        return (grad,)

    return record(out_data, (a,), grad_fn, "max")


# ---------------------------------------------------------------------------
# Shape manipulation
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    return record(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return record(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),), "transpose")


def swapaxes(a: Tensor, axis1: int, axis2: int) -> Tensor:
    return record(
        np.swapaxes(a.data, axis1, axis2), (a,), lambda g: (np.swapaxes(g, axis1, axis2),), "swapaxes"
    )


def _is_basic_index(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (slice, int, type(None), type(Ellipsis))) for p in parts)


def getitem(a: Tensor, index) -> Tensor:
    if isinstance(index, Tensor):
        raise ContractError("index with numpy arrays or slices, not Tensors")
    basic = _is_basic_index(index)

    def grad_fn(g):
        grad = np.zeros_like(a.data)
        if basic:
            grad[index] = g
        else:
            np.add.at(grad, index, g)
        return (grad,)

    return record(a.data[index], (a,), grad_fn, "getitem")


def concat(tensors: Sequence[Operand], axis: int = 0) -> Tensor:
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    first = next((t for t in tensors if isinstance(t, Tensor)), None)
    dtype = first.dtype if first is not None else None
    parts = [as_tensor(t, dtype=dtype) for t in tensors]
    axis = axis % parts[0].ndim
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.split(g, splits, axis=axis))

    return record(np.concatenate([p.data for p in parts], axis=axis), parts, grad_fn, "concat")


def masked_fill(a: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where `mask` is True with a constant (no gradient there)"""
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    out_data = np.where(mask, value, a.data)
    return record(out_data, (a,), lambda g: (np.where(mask, 0.0, g),), "masked_fill")


def embedding(weight: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup weight[ids]"""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise ContractError(f"ids out of range for embedding table of {weight.shape[0]} rows")

    def grad_fn(g):
        grad = np.zeros_like(weight.data)
        np.add.at(grad, ids, g)
        return (grad,)

    return record(weight.data[ids], (weight,), grad_fn, "embedding")


# ---------------------------------------------------------------------------
# Normalizations
# ---------------------------------------------------------------------------

def softmax(a: Tensor, axis: int = -1) -> Tensor:
    if not -a.ndim <= axis < a.ndim:
        raise ContractError(f"softmax axis {axis} out of range for rank {a.ndim}")
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / np.sum(e, axis=axis, keepdims=True)

    def grad_fn(g):
        return (out_data * (g - np.sum(g * out_data, axis=axis, keepdims=True)),)

    return record(out_data, (a,), grad_fn, "softmax")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    out_data = shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))

    def grad_fn(g):
        return (g - np.exp(out_data) * np.sum(g, axis=axis, keepdims=True),)

    return record(out_data, (a,), grad_fn, "log_softmax")


def layer_norm(
    a: Tensor,
    gain: Optional[Tensor] = None,
    bias: Optional[Tensor] = None,
    eps: float = 1e-5,
) -> Tensor:
    """Normalize the last axis to mean 0 / variance 1, then scale and shift"""
    if a.ndim == 0 or a.shape[-1] < 1:
        raise ContractError(f"layer_norm needs a non-empty last axis, got shape {a.shape}")
    x = a.data
    mu = np.mean(x, axis=-1, keepdims=True)
    centered = x - mu
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std

    out_data = xhat
    if gain is not None:
        out_data = out_data * gain.data
    if bias is not None:
        out_data = out_data + bias.data

    inputs: List[Tensor] = [a]
    if gain is not None:
        inputs.append(gain)
    if bias is not None:
        inputs.append(bias)

    def grad_fn(g):
        gxhat = g * gain.data if gain is not None else g
        gx = inv_std * (
            gxhat
            - np.mean(gxhat, axis=-1, keepdims=True)
            - xhat * np.mean(gxhat * xhat, axis=-1, keepdims=True)
        )
        grads: List[np.ndarray] = [gx]
        if gain is not None:
            grads.append(unbroadcast(g * xhat, gain.shape))
        if bias is not None:
            grads.append(unbroadcast(g, bias.shape))
        return tuple(grads)

    return record(out_data, inputs, grad_fn, "layer_norm")


def l2_normalize(a: Tensor, axis: int = -1, eps: float = 0.0) -> Tensor:
    norm = sqrt(sum(a * a, axis=axis, keepdims=True) + eps)
    return a / norm


# ---------------------------------------------------------------------------
# Losses built from primitives
# ---------------------------------------------------------------------------

def cross_entropy(logits: Tensor, targets: np.ndarray, weights: Optional[np.ndarray] = None) -> Tensor:
    """Mean negative log-likelihood over positions (optionally weighted, e.g. a PAD mask)"""
    targets = np.asarray(targets, dtype=np.int64)
    log_probs = log_softmax(logits, axis=-1)
    flat = reshape(log_probs, (-1, logits.shape[-1]))
    picked = getitem(flat, (np.arange(flat.shape[0]), targets.reshape(-1)))
    if weights is None:
        return -mean(picked)
    w = np.asarray(weights, dtype=logits.dtype).reshape(-1)
    total = float(w.sum())
    if total == 0:
        return as_tensor(0.0, dtype=logits.dtype)
    return -(sum(picked * w) / total)


def binary_cross_entropy_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Elementwise sigmoid BCE, mean over all entries"""
    y = np.asarray(targets, dtype=logits.dtype)
    return mean(softplus(logits) - logits * y)
