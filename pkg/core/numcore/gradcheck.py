# ============================================================================
# core/numcore/gradcheck.py - Finite-Difference Gradient Oracle
# ============================================================================

import logging
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from core.errors import ContractError
from core.numcore.tensor import Tensor, backward, new_tape, no_grad

logger = logging.getLogger(__name__)

DENOMINATOR_FLOOR = 1e-8


def finite_diff_grad(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central differences (f(x + h e) - f(x - h e)) / 2h for every element of x"""
    if h <= 0:
        raise ContractError(f"finite-difference step must be positive, got {h}")
    grad = np.zeros_like(x.data)
    with no_grad():
        for i in np.ndindex(*x.shape):
            original = x.data[i]
            x.data[i] = original + h
            plus = f(x).item()
            x.data[i] = original - h
            minus = f(x).item()
            x.data[i] = original
            grad[i] = (plus - minus) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = DENOMINATOR_FLOOR) -> float:
    """max |a - n| / max(|a|, |n|, floor) over all entries"""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def sample_indices(shape: Tuple[int, ...], count: Optional[int], rng: np.random.Generator) -> List[Tuple[int, ...]]:
    size = int(np.prod(shape)) if shape else 1
    if count is None or count >= size:
        flat = np.arange(size)
    else:
        flat = rng.choice(size, size=count, replace=False)
    return [tuple(int(i) for i in np.unravel_index(j, shape)) for j in sorted(flat)]


def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: Dict[str, Tensor],
    h: float = 1e-5,
    samples_per_param: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> Dict[str, float]:
    """
    Compare autodiff gradients of the scalar loss_fn() with central differences
    on (a sample of) every parameter entry. Returns max relative error per parameter.
    """
    rng = rng or np.random.default_rng(0)
    for p in params.values():
        p.grad = None

    new_tape()
    loss = loss_fn()
    backward(loss)
    analytic = {name: (p.grad if p.grad is not None else np.zeros_like(p.data)) for name, p in params.items()}

    errors: Dict[str, float] = {}
    with no_grad():
        for name, p in params.items():
            idx = sample_indices(p.shape, samples_per_param, rng)
            numeric = np.empty(len(idx))
            for k, i in enumerate(idx):
                original = p.data[i]
                p.data[i] = original + h
                plus = loss_fn().item()
                p.data[i] = original - h
                minus = loss_fn().item()
                p.data[i] = original
                numeric[k] = (plus - minus) / (2.0 * h)
            picked = np.array([analytic[name][i] for i in idx])
            errors[name] = relative_error(picked, numeric)
    worst = max(errors.values()) if errors else 0.0
    logger.debug(f"gradient check over {len(params)} tensors, worst relative error {worst:.3e}")
    return errors
