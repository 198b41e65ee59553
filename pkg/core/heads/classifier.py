# ============================================================================
# core/heads/classifier.py - Answer Classifier
# ============================================================================

import logging

import numpy as np

from core.errors import ContractError
from core.numcore import Tensor, ops
from core.numcore.nn import LayerNorm, Linear, Module

logger = logging.getLogger(__name__)


class Classifier(Module):
    """Linear(2d -> d) -> LayerNorm -> GELU -> Linear(d -> C)

    The output layer starts at zero so an untrained model scores every class
    equally and picks class 0.
    """

    def __init__(self, dim: int, num_classes: int, rng: np.random.Generator, eps: float = 1e-5):
        if num_classes < 1:
            raise ContractError(f"classifier needs at least one class, got {num_classes}")
        self.dim = dim
        self.num_classes = num_classes
        self.hidden = Linear(2 * dim, dim, rng)
        self.norm = LayerNorm(dim, eps)
        self.out = Linear(dim, num_classes, rng)
        self.out.zero_()

    def forward(self, x_f: Tensor) -> Tensor:
        if x_f.shape[-1] != 2 * self.dim:
            raise ContractError(f"classifier expects a {2 * self.dim}-wide feature, got {x_f.shape}")
        return self.out(ops.gelu(self.norm(self.hidden(x_f))))


def classify(x_f: Tensor, head: Classifier) -> Tensor:
    return head(x_f)
