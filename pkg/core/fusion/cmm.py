# ============================================================================
# core/fusion/cmm.py - Cross-Modal Mamba Interaction
# ============================================================================

"""
Two token streams (aligned queries z and question tokens t) updated in
parallel. Each stream's Mamba block keeps its own tokens on the SSM branch
and gates with its tokens modulated by a pooled summary of the partner:

    z'' = Fus(Mamba(z', z' * pool(t'))) + z'
    t'' = Fus(Mamba(t', t' * pool(z'))) + t'

The stack LayerNorms each stream once on entry and then applies the blocks.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from core.config import ModelConfig
from core.errors import ContractError
from core.fusion.mamba import MambaBlock
from core.numcore import Tensor, ops
from core.numcore.nn import LayerNorm, Linear, Module, masked_mean, module_rng

logger = logging.getLogger(__name__)


@dataclass
class FusedFeature:
    """x_f (B, 2d) for the classifier; memory (B, K+L, d) for the auxiliary decoder"""

    x_f: Tensor
    memory: Tensor
    memory_mask: np.ndarray
    query_tokens: Tensor
    text_tokens: Tensor


def partner_summary(tokens: Tensor, mask: Optional[np.ndarray], pooling: str, partner_len: int) -> Tensor:
    """Value each token of the other stream is multiplied by"""
    if pooling == "identity":
        if tokens.shape[1] != partner_len:
            raise ContractError(
                f"identity pooling needs equal stream lengths, got {tokens.shape[1]} and {partner_len}"
            )
        return tokens
    pooled = masked_mean(tokens, mask)
    return ops.reshape(pooled, (pooled.shape[0], 1, pooled.shape[1]))


class CmmBlock(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.pooling = config.partner_pooling
        self.query_mamba = MambaBlock(config, rng)
        self.text_mamba = MambaBlock(config, rng)
        self.query_fus = Linear(config.d_model, config.d_model, rng)
        self.text_fus = Linear(config.d_model, config.d_model, rng)

    def forward(self, z: Tensor, t: Tensor, t_mask: Optional[np.ndarray] = None):
        if z.ndim != 3 or t.ndim != 3 or z.shape[0] != t.shape[0] or z.shape[-1] != t.shape[-1]:
            raise ContractError(f"CMM streams must be (B, K, d) and (B, L, d), got {z.shape} and {t.shape}")
        text_summary = partner_summary(t, t_mask, self.pooling, z.shape[1])
        query_summary = partner_summary(z, None, self.pooling, t.shape[1])
        z_next = self.query_fus(self.query_mamba(z, z * text_summary)) + z
        t_next = self.text_fus(self.text_mamba(t, t * query_summary)) + t
        return z_next, t_next


def cmm_block(z: Tensor, t: Tensor, block: CmmBlock, t_mask: Optional[np.ndarray] = None):
    return block(z, t, t_mask)


class CmmStack(Module):
    """Entry LayerNorms, `num_blocks` CMM blocks, then pooled and concatenated outputs"""

    def __init__(self, config: ModelConfig, seed: int, num_blocks: Optional[int] = None):
        rng = module_rng(seed, "cmm")
        count = config.cmm_blocks if num_blocks is None else num_blocks
        self.query_norm = LayerNorm(config.d_model, config.ln_eps)
        self.text_norm = LayerNorm(config.d_model, config.ln_eps)
        self.blocks: List[CmmBlock] = [CmmBlock(config, rng) for _ in range(count)]

    def forward(self, z: Tensor, t: Tensor, t_mask: Optional[np.ndarray] = None) -> FusedFeature:
        batch = z.shape[0]
        if t_mask is None:
            t_mask = np.ones(t.shape[:2], dtype=bool)
        z = self.query_norm(z)
        t = self.text_norm(t)
        for block in self.blocks:
            z, t = block(z, t, t_mask)
        x_f = ops.concat([ops.mean(z, axis=1), masked_mean(t, t_mask)], axis=-1)
        memory = ops.concat([z, t], axis=1)
        memory_mask = np.concatenate([np.ones((batch, z.shape[1]), dtype=bool), np.asarray(t_mask, dtype=bool)], axis=1)
        return FusedFeature(x_f=x_f, memory=memory, memory_mask=memory_mask, query_tokens=z, text_tokens=t)


def cifr_forward(z: Tensor, t: Tensor, stack: CmmStack, t_mask: Optional[np.ndarray] = None) -> FusedFeature:
    return stack(z, t, t_mask)
