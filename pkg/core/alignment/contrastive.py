# ============================================================================
# core/alignment/contrastive.py - Visual-Text Contrastive Loss
# ============================================================================

"""
In-batch InfoNCE in both directions. The similarity of sample i's queries to
text j is the maximum cosine similarity over the K query tokens:

    s_ij = max_k cos(z_ik, t_j)
    L_v2t = -(1/B) sum_i log softmax_j(s_ij / tau)[i]
    L_t2v = -(1/B) sum_i log softmax_j(s_ji / tau)[i]
"""

import logging
from dataclasses import dataclass

import numpy as np

from core.errors import ContractError
from core.numcore import Tensor, ops

logger = logging.getLogger(__name__)


@dataclass
class VtcLoss:
    total: Tensor
    v2t: Tensor
    t2v: Tensor


def _check_nonzero(data: np.ndarray, what: str) -> None:
    norms = np.linalg.norm(data, axis=-1)
    zero = np.argwhere(norms == 0)
    if zero.size:
        raise ContractError(f"zero-norm {what} vector at sample index {int(zero[0][0])}")


def similarity_matrix(z: Tensor, t: Tensor) -> Tensor:
    """(B, K, d) queries x (B, d) texts -> (B, B) max-over-queries cosine similarity"""
    if z.ndim != 3 or t.ndim != 2 or z.shape[0] != t.shape[0] or z.shape[-1] != t.shape[-1]:
        raise ContractError(f"vtc expects z (B, K, d) and t (B, d), got {z.shape} and {t.shape}")
    _check_nonzero(z.data, "query")
    _check_nonzero(t.data, "text")
    zn = ops.l2_normalize(z, axis=-1)
    tn = ops.l2_normalize(t, axis=-1)
    sims = ops.matmul(zn, ops.transpose(tn, (1, 0)))  # (B, K, B)
    return ops.max(sims, axis=1)


def vtc_loss(z: Tensor, t: Tensor, tau: float = 0.07) -> VtcLoss:
    if tau <= 0:
        raise ContractError(f"temperature must be positive, got {tau}")
    batch = z.shape[0]
    if batch < 1:
        raise ContractError("vtc needs at least one sample")
    logits = similarity_matrix(z, t) * (1.0 / tau)
    diag = (np.arange(batch), np.arange(batch))
    v2t = -ops.mean(ops.getitem(ops.log_softmax(logits, axis=1), diag))
    t2v = -ops.mean(ops.getitem(ops.log_softmax(logits, axis=0), diag))
    return VtcLoss(total=v2t + t2v, v2t=v2t, t2v=t2v)
