# ============================================================================
# core/alignment/qqformer.py - Question-Aware Query Transformer
# ============================================================================

"""
Learnable queries refined by self-attention (over the queries plus the
question tokens), cross-attention to the visual tokens and a feed-forward
network. Every sublayer is pre-norm with a residual, so zeroed output
projections leave the queries unchanged.
"""

import logging
from typing import Optional

import numpy as np

from core.config import ModelConfig
from core.encoders.image_encoder import EncoderOutput
from core.errors import ContractError
from core.numcore import Tensor, ops
from core.numcore.nn import FeedForward, LayerNorm, Module, MultiHeadAttention, parameter

logger = logging.getLogger(__name__)


class QueryBank(Module):
    """K learnable query embeddings of width d"""

    def __init__(self, num_queries: int, dim: int, rng: np.random.Generator):
        if num_queries < 1:
            raise ContractError(f"query count must be >= 1, got {num_queries}")
        self.embeddings = parameter(rng.normal(0.0, 1.0, size=(num_queries, dim)))

    @property
    def num_queries(self) -> int:
        return self.embeddings.shape[0]

    def expand(self, batch: int) -> Tensor:
        zeros = np.zeros((batch, 1, 1), dtype=self.embeddings.dtype)
        return ops.add(ops.reshape(self.embeddings, (1,) + self.embeddings.shape), zeros)


class QQFormerLayer(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        dim = config.d_model
        self.norm_self = LayerNorm(dim, config.ln_eps)
        self.self_attn = MultiHeadAttention(dim, config.num_heads, rng)
        self.norm_cross = LayerNorm(dim, config.ln_eps)
        self.cross_attn = MultiHeadAttention(dim, config.num_heads, rng)
        self.norm_ffn = LayerNorm(dim, config.ln_eps)
        self.ffn = FeedForward(dim, dim * config.ffn_mult, rng)

    def output_projections(self):
        return [self.self_attn.o_proj, self.cross_attn.o_proj, self.ffn.fc2]

    def forward(
        self,
        z: Tensor,
        visual_tokens: Tensor,
        text_tokens: Optional[Tensor] = None,
        text_mask: Optional[np.ndarray] = None,
    ) -> Tensor:
        batch, num_queries, _ = z.shape
        normed = self.norm_self(z)
        if text_tokens is None:
            z = z + self.self_attn(normed)
        else:
            # Queries attend to [queries ; question tokens]; the question tokens are not updated
            context = ops.concat([normed, text_tokens], axis=1)
            key_mask = None
            if text_mask is not None:
                key_mask = np.concatenate(
                    [np.ones((batch, num_queries), dtype=bool), np.asarray(text_mask, dtype=bool)], axis=1
                )
            z = z + self.self_attn(normed, context=context, key_mask=key_mask)
        z = z + self.cross_attn(self.norm_cross(z), context=visual_tokens)
        return z + self.ffn(self.norm_ffn(z))


class QQFormer(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.dim = config.d_model
        self.queries = QueryBank(config.num_queries, config.d_model, rng)
        self.layers = [QQFormerLayer(config, rng) for _ in range(config.qformer_layers)]

    def forward(self, visual: EncoderOutput, text: Optional[EncoderOutput] = None) -> Tensor:
        """Aligned queries z of shape (B, K, d)"""
        visual_tokens = visual.tokens
        if visual_tokens.ndim != 3 or visual_tokens.shape[1] == 0:
            raise ContractError(f"visual tokens must be a non-empty (B, N, d) tensor, got {visual_tokens.shape}")
        if visual_tokens.shape[-1] != self.dim:
            raise ContractError(
                f"visual width {visual_tokens.shape[-1]} does not match query width {self.dim}"
            )
        z = self.queries.expand(visual_tokens.shape[0])
        text_tokens = text.tokens if text is not None else None
        text_mask = text.mask if text is not None else None
        for layer in self.layers:
            z = layer(z, visual_tokens, text_tokens, text_mask)
        return z


def qqformer_forward(queries: QueryBank, visual: EncoderOutput, former: QQFormer,
                     text: Optional[EncoderOutput] = None) -> Tensor:
    """Run `former` with an explicit query bank"""
    if queries.embeddings.shape[-1] != former.dim:
        raise ContractError(
            f"query width {queries.embeddings.shape[-1]} does not match projection width {former.dim}"
        )
    original = former.queries
    former.queries = queries
    try:
        return former(visual, text)
    finally:
        former.queries = original
