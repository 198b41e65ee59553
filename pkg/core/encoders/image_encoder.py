# ============================================================================
# core/encoders/image_encoder.py - Patch-Embedding Image Encoder
# ============================================================================

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from core.config import ModelConfig
from core.errors import ContractError
from core.numcore import Tensor, ops
from core.numcore.nn import LayerNorm, Linear, Module, TransformerLayer, masked_mean, sinusoidal_positions

logger = logging.getLogger(__name__)


@dataclass
class EncoderOutput:
    """tokens (B, N, d); pooled (B, d) = mean of tokens over valid positions"""

    tokens: Tensor
    pooled: Tensor
    mask: Optional[np.ndarray] = None


def validate_images(images: np.ndarray, patch_size: int) -> np.ndarray:
    images = np.asarray(images)
    if images.ndim == 3:
        images = images[None]
    if images.ndim != 4:
        raise ContractError(f"images must be (B, H, W, C) or (H, W, C), got shape {images.shape}")
    _, height, width, _ = images.shape
    if height % patch_size or width % patch_size:
        raise ContractError(
            f"image {height}x{width} is not divisible by patch size {patch_size}"
        )
    if images.size and (images.min() < 0.0 or images.max() > 1.0):
        raise ContractError("pixel values must lie in [0, 1]")
    return images


def patchify(images: np.ndarray, patch_size: int) -> np.ndarray:
    """(B, H, W, C) -> (B, (H/P)(W/P), P*P*C), patches in row-major grid order"""
    images = validate_images(images, patch_size)
    batch, height, width, channels = images.shape
    gh, gw = height // patch_size, width // patch_size
    grid = images.reshape(batch, gh, patch_size, gw, patch_size, channels)
    grid = grid.transpose(0, 1, 3, 2, 4, 5)
    return grid.reshape(batch, gh * gw, patch_size * patch_size * channels)


class ImageEncoder(Module):
    """Patch projection + sinusoidal positions + self-attention stack"""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.patch_size = config.patch_size
        self.channels = config.channels
        self.dim = config.d_model
        self.patch_proj = Linear(config.patch_size * config.patch_size * config.channels, config.d_model, rng)
        self.layers = [
            TransformerLayer(config.d_model, config.num_heads, config.ffn_mult, rng, config.ln_eps)
            for _ in range(config.encoder_layers)
        ]
        self.final_norm = LayerNorm(config.d_model, config.ln_eps)

    def project_patches(self, images: np.ndarray) -> Tensor:
        """Per-patch linear projection, before positions are added"""
        patches = patchify(images, self.patch_size)
        return self.patch_proj(Tensor(patches, dtype=self.patch_proj.weight.dtype))

    def embed(self, images: np.ndarray) -> Tensor:
        projected = self.project_patches(images)
        positions = sinusoidal_positions(projected.shape[1], self.dim)
        return projected + positions.astype(projected.dtype)

    def forward(self, images: np.ndarray) -> EncoderOutput:
        x = self.embed(images)
        for layer in self.layers:
            x = layer(x)
        tokens = self.final_norm(x)
        return EncoderOutput(tokens=tokens, pooled=masked_mean(tokens, None), mask=None)


def encode_image(image: np.ndarray, encoder: ImageEncoder) -> EncoderOutput:
    """Single (H, W, C) image -> tokens of shape (1, N, d)"""
    return encoder(validate_images(image, encoder.patch_size))
