# ============================================================================
# core/heads/losses.py - Losses and Prediction
# ============================================================================

import logging
from dataclasses import asdict, dataclass
from typing import Dict, Optional

import numpy as np

from core.errors import ContractError
from core.numcore import Tensor, ops

logger = logging.getLogger(__name__)


def one_hot(targets: np.ndarray, num_classes: int, dtype) -> np.ndarray:
    targets = np.asarray(targets, dtype=np.int64)
    if targets.size and (targets.min() < 0 or targets.max() >= num_classes):
        bad = targets[(targets < 0) | (targets >= num_classes)][0]
        raise ContractError(f"answer class {int(bad)} outside [0, {num_classes})")
    encoded = np.zeros(targets.shape + (num_classes,), dtype=dtype)
    if targets.size:
        np.put_along_axis(encoded, targets[..., None], 1.0, axis=-1)
    return encoded


def cls_loss(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Sigmoid binary cross-entropy against one-hot targets, mean over B*C"""
    return ops.binary_cross_entropy_with_logits(logits, one_hot(targets, logits.shape[-1], logits.dtype))


def predict_answer(logits) -> np.ndarray:
    """Argmax per row; ties go to the lowest class id"""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return np.argmax(data, axis=-1)


@dataclass
class LossBreakdown:
    l_cls: float
    l_vtc: float
    l_aux: float
    alpha: float
    beta: float
    total: float

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def combine_losses(l_cls: Tensor, l_vtc: Tensor, l_aux: Tensor, alpha: float, beta: float) -> Tensor:
    return l_cls + l_vtc * alpha + l_aux * beta


def total_loss(
    l_cls: float,
    l_vtc: float,
    l_aux: float,
    alpha: float,
    beta: float,
) -> LossBreakdown:
    """Record the three terms; total = l_cls + alpha*l_vtc + beta*l_aux over the stored floats"""
    if alpha < 0 or beta < 0:
        raise ContractError(f"loss weights must be non-negative, got alpha={alpha} beta={beta}")
    l_cls, l_vtc, l_aux = float(l_cls), float(l_vtc), float(l_aux)
    return LossBreakdown(
        l_cls=l_cls,
        l_vtc=l_vtc,
        l_aux=l_aux,
        alpha=alpha,
        beta=beta,
        total=l_cls + alpha * l_vtc + beta * l_aux,
    )


def first_non_finite(breakdown: LossBreakdown) -> Optional[str]:
    for term in ("l_cls", "l_vtc", "l_aux", "total"):
        if not np.isfinite(getattr(breakdown, term)):
            return term
    return None
