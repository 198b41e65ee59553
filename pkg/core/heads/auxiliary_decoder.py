# ============================================================================
# core/heads/auxiliary_decoder.py - Masked Auxiliary Answer Decoder
# ============================================================================

"""
Autoregressive decoder over the fused memory, trained with teacher forcing
on open-ended answers only. A learnable mask m (one scalar per memory
position) adds

    log(softplus(m) + eps) - log(softplus(1) + eps)

to every cross-attention score, so positions can be down-weighted smoothly.
m starts at 1, where the added term is exactly zero.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from core.config import ModelConfig
from core.encoders.vocabulary import BOS, EOS, PAD
from core.errors import ContractError
from core.numcore import Tensor, no_grad, ops
from core.numcore.nn import (
    Embedding,
    FeedForward,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    parameter,
    sinusoidal_positions,
)

logger = logging.getLogger(__name__)


class LearnableMask(Module):
    def __init__(self, memory_len: int, eps: float = 1e-6):
        self.eps = eps
        self.m = parameter(np.ones(memory_len))

    def __len__(self) -> int:
        return self.m.shape[0]

    def score_bias(self) -> Tensor:
        bias = ops.log(ops.softplus(self.m) + self.eps)
        with no_grad():
            # same ops on the init value so the offset is bit-for-bit zero at m = 1
            reference = ops.log(ops.softplus(Tensor(np.ones_like(self.m.data), dtype=self.m.dtype)) + self.eps)
        return bias - reference

    def weights(self) -> np.ndarray:
        """softplus(m), the multiplicative weight each memory position gets"""
        with no_grad():
            return ops.softplus(self.m).data.copy()


class DecoderLayer(Module):
    """Pre-norm causal self-attention, masked cross-attention to memory, FFN"""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        dim = config.d_model
        self.norm_self = LayerNorm(dim, config.ln_eps)
        self.self_attn = MultiHeadAttention(dim, config.num_heads, rng)
        self.norm_cross = LayerNorm(dim, config.ln_eps)
        self.cross_attn = MultiHeadAttention(dim, config.num_heads, rng)
        self.norm_ffn = LayerNorm(dim, config.ln_eps)
        self.ffn = FeedForward(dim, dim * config.ffn_mult, rng)

    def forward(self, x: Tensor, memory: Tensor, memory_mask: Optional[np.ndarray],
                token_mask: np.ndarray, score_bias: Optional[Tensor]) -> Tensor:
        x = x + self.self_attn(self.norm_self(x), key_mask=token_mask, causal=True)
        x = x + self.cross_attn(self.norm_cross(x), context=memory, key_mask=memory_mask, score_bias=score_bias)
        return x + self.ffn(self.norm_ffn(x))


class AuxiliaryDecoder(Module):
    def __init__(self, config: ModelConfig, vocab_size: int, memory_len: int, rng: np.random.Generator):
        self.dim = config.d_model
        self.vocab_size = vocab_size
        self.memory_len = memory_len
        self.max_answer_len = config.max_answer_len
        self.token_embedding = Embedding(vocab_size, config.d_model, rng)
        self.layers = [DecoderLayer(config, rng) for _ in range(config.decoder_layers)]
        self.final_norm = LayerNorm(config.d_model, config.ln_eps)
        self.out_proj = Linear(config.d_model, vocab_size, rng)
        self.mask = LearnableMask(memory_len, config.mask_eps)

    def forward(
        self,
        input_ids: np.ndarray,
        memory: Tensor,
        memory_mask: Optional[np.ndarray] = None,
        use_mask: bool = True,
    ) -> Tensor:
        """input_ids (O, La) -> next-token logits (O, La, V)"""
        input_ids = np.asarray(input_ids, dtype=np.int64)
        if memory.shape[1] != self.memory_len:
            raise ContractError(
                f"decoder built for memory length {self.memory_len}, got memory {memory.shape}"
            )
        if input_ids.shape[0] != memory.shape[0]:
            raise ContractError(f"{input_ids.shape[0]} answer rows for {memory.shape[0]} memory rows")
        x = self.token_embedding(input_ids)
        x = x + sinusoidal_positions(input_ids.shape[1], self.dim).astype(x.dtype)
        token_mask = input_ids != PAD
        score_bias = self.mask.score_bias() if use_mask else None
        for layer in self.layers:
            x = layer(x, memory, memory_mask, token_mask, score_bias)
        return self.out_proj(self.final_norm(x))


@dataclass
class AuxOutput:
    loss: Tensor
    logits: Optional[Tensor]
    rows: np.ndarray


def aux_decode_loss(
    memory: Tensor,
    memory_mask: Optional[np.ndarray],
    answer_ids: np.ndarray,
    is_open: np.ndarray,
    decoder: AuxiliaryDecoder,
    use_mask: bool = True,
) -> AuxOutput:
    """
    Token cross-entropy over the open-ended rows (mean over real target
    tokens); exactly 0 when the batch has no open-ended sample.
    answer_ids (B, La) hold BOS answer EOS PAD...
    """
    is_open = np.asarray(is_open, dtype=bool)
    rows = np.flatnonzero(is_open)
    if rows.size == 0:
        return AuxOutput(loss=Tensor(0.0, dtype=memory.dtype), logits=None, rows=rows)
    answer_ids = np.asarray(answer_ids, dtype=np.int64)[rows]
    selected = ops.getitem(memory, rows)
    mask = None if memory_mask is None else np.asarray(memory_mask, dtype=bool)[rows]
    inputs, targets = answer_ids[:, :-1], answer_ids[:, 1:]
    logits = decoder(inputs, selected, mask, use_mask=use_mask)
    loss = ops.cross_entropy(logits, targets, weights=targets != PAD)
    return AuxOutput(loss=loss, logits=logits, rows=rows)


def generate_answers(
    decoder: AuxiliaryDecoder,
    memory: Tensor,
    memory_mask: Optional[np.ndarray] = None,
    max_len: Optional[int] = None,
) -> List[List[int]]:
    """Greedy decoding from BOS until EOS or max_len tokens; returns ids without BOS/EOS"""
    max_len = max_len or decoder.max_answer_len
    batch = memory.shape[0]
    ids = np.full((batch, 1), BOS, dtype=np.int64)
    finished = np.zeros(batch, dtype=bool)
    with no_grad():
        for _ in range(max_len - 1):
            logits = decoder(ids, memory, memory_mask)
            next_ids = np.argmax(logits.data[:, -1], axis=-1)
            next_ids = np.where(finished, PAD, next_ids)
            ids = np.concatenate([ids, next_ids[:, None]], axis=1)
            finished |= next_ids == EOS
            if finished.all():
                break
    answers = []
    for row in ids[:, 1:]:
        tokens = []
        for token in row:
            if token in (EOS, PAD):
                break
            tokens.append(int(token))
        answers.append(tokens)
    return answers
