# ============================================================================
# core/encoders/text_encoder.py - Token-Embedding Text Encoder
# ============================================================================

import logging
from typing import Sequence, Union

import numpy as np

from core.config import ModelConfig
from core.encoders.image_encoder import EncoderOutput
from core.encoders.vocabulary import PAD, TokenSeq, pad_batch
from core.errors import ContractError
from core.numcore import Tensor
from core.numcore.nn import Embedding, LayerNorm, Module, TransformerLayer, masked_mean, sinusoidal_positions

logger = logging.getLogger(__name__)


class TextEncoder(Module):
    """Token embedding + sinusoidal positions + masked self-attention stack"""

    def __init__(self, config: ModelConfig, vocab_size: int, rng: np.random.Generator):
        self.dim = config.d_model
        self.vocab_size = vocab_size
        self.token_embedding = Embedding(vocab_size, config.d_model, rng)
        self.layers = [
            TransformerLayer(config.d_model, config.num_heads, config.ffn_mult, rng, config.ln_eps)
            for _ in range(config.encoder_layers)
        ]
        self.final_norm = LayerNorm(config.d_model, config.ln_eps)

    def forward(self, ids: np.ndarray) -> EncoderOutput:
        """ids: (B, L) with PAD suffixes; PAD positions are masked from attention and pooling"""
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim != 2 or ids.shape[1] == 0:
            raise ContractError(f"text ids must be a non-empty (B, L) array, got shape {ids.shape}")
        mask = ids != PAD
        empty = np.flatnonzero(~mask.any(axis=1))
        if empty.size:
            raise ContractError(f"empty token sequence at batch index {int(empty[0])}")

        x = self.token_embedding(ids)
        x = x + sinusoidal_positions(ids.shape[1], self.dim).astype(x.dtype)
        for layer in self.layers:
            x = layer(x, key_mask=mask)
        tokens = self.final_norm(x)
        return EncoderOutput(tokens=tokens, pooled=masked_mean(tokens, mask), mask=mask)


def encode_text(seq: Union[TokenSeq, Sequence[int]], encoder: TextEncoder) -> EncoderOutput:
    seq = seq if isinstance(seq, TokenSeq) else TokenSeq(list(seq))
    if len(seq) == 0:
        raise ContractError("cannot encode an empty token sequence")
    seq.validate(encoder.vocab_size)
    return encoder(pad_batch([seq], len(seq)))
