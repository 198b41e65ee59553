# ============================================================================
# core/numcore/nn.py - Layers
# ============================================================================

import logging
import math
import zlib
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from core.errors import ContractError
from core.numcore import ops
from core.numcore.tensor import Tensor, get_default_dtype

logger = logging.getLogger(__name__)

# Additive score for masked attention keys; exp() of it underflows to exactly 0
MASK_SCORE = -1e9


def module_rng(seed: int, name: str) -> np.random.Generator:
    """Independent generator per (seed, module name); toggling one module leaves the others' init unchanged"""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode("utf-8"))]))


def parameter(data: np.ndarray) -> Tensor:
    return Tensor(data, requires_grad=True)


def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    """Fixed sin/cos position table of shape (length, dim)"""
    positions = np.arange(length, dtype=np.float64)[:, None]
    rates = np.exp(-math.log(10000.0) * (2 * (np.arange(dim) // 2)) / dim)[None, :]
    angles = positions * rates
    table = np.where(np.arange(dim)[None, :] % 2 == 0, np.sin(angles), np.cos(angles))
    return table.astype(get_default_dtype())


class Module:
    """Parameter container; attributes that are parameters, modules or lists of modules are discovered"""

    training = True

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{full}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise ContractError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for name, p in own.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ContractError(f"parameter {name}: expected shape {p.shape}, got {value.shape}")
            p.data = value.astype(p.dtype, copy=True)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


class Linear(Module):
    """y = x @ W + b with W of shape (in, out)"""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        self.in_features = in_features
        self.out_features = out_features
        scale = 1.0 / math.sqrt(in_features)
        self.weight = parameter(rng.normal(0.0, scale, size=(in_features, out_features)))
        self.bias = parameter(np.zeros(out_features)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise ContractError(
                f"Linear expects last axis {self.in_features}, got input shape {x.shape}"
            )
        out = ops.matmul(x, self.weight)
        if self.bias is not None:
            out = out + self.bias
        return out

    def zero_(self) -> None:
        self.weight.data[...] = 0.0
        if self.bias is not None:
            self.bias.data[...] = 0.0


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.eps = eps
        self.gain = parameter(np.ones(dim))
        self.bias = parameter(np.zeros(dim))

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gain, self.bias, self.eps)


class Embedding(Module):
    def __init__(self, num_embeddings: int, dim: int, rng: np.random.Generator):
        self.weight = parameter(rng.normal(0.0, 1.0, size=(num_embeddings, dim)))

    def forward(self, ids: np.ndarray) -> Tensor:
        return ops.embedding(self.weight, ids)


class FeedForward(Module):
    """fc1 -> GELU -> fc2"""

    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(ops.gelu(self.fc1(x)))


def key_padding_scores(key_mask: Optional[np.ndarray]) -> Optional[np.ndarray]:
    """(B, Tk) validity mask -> additive (B, 1, 1, Tk) score offsets"""
    if key_mask is None:
        return None
    key_mask = np.asarray(key_mask, dtype=bool)
    return np.where(key_mask, 0.0, MASK_SCORE)[:, None, None, :]


class MultiHeadAttention(Module):
    """Scaled dot-product attention with separate q/k/v/o projections"""

    def __init__(self, dim: int, num_heads: int, rng: np.random.Generator):
        if dim % num_heads != 0:
            raise ContractError(f"width {dim} is not divisible by {num_heads} heads")
        self.dim = dim
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.q_proj = Linear(dim, dim, rng)
        # a key bias only shifts every score of a query equally, which softmax ignores
        self.k_proj = Linear(dim, dim, rng, bias=False)
        self.v_proj = Linear(dim, dim, rng)
        self.o_proj = Linear(dim, dim, rng)

    def _split_heads(self, x: Tensor) -> Tensor:
        batch, length, _ = x.shape
        return ops.transpose(ops.reshape(x, (batch, length, self.num_heads, self.head_dim)), (0, 2, 1, 3))

    def forward(
        self,
        x: Tensor,
        context: Optional[Tensor] = None,
        key_mask: Optional[np.ndarray] = None,
        causal: bool = False,
        score_bias: Optional[Tensor] = None,
    ) -> Tensor:
        """
        x: (B, Tq, d) queries; context: (B, Tk, d) keys/values (defaults to x)
        key_mask: (B, Tk) True where the key may be attended
        score_bias: (B, Tk) or (Tk,) additive per-key score term
        """
        context = x if context is None else context
        if x.shape[-1] != self.dim or context.shape[-1] != self.dim:
            raise ContractError(
                f"attention width {self.dim} does not match inputs {x.shape} / {context.shape}"
            )
        batch, q_len, _ = x.shape
        k_len = context.shape[1]

        q = self._split_heads(self.q_proj(x))
        k = self._split_heads(self.k_proj(context))
        v = self._split_heads(self.v_proj(context))

        scores = ops.matmul(q, ops.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(self.head_dim))
        if score_bias is not None:
            scores = scores + ops.reshape(score_bias, (-1, 1, 1, k_len))

        offsets = key_padding_scores(key_mask)
        if causal:
            future = np.triu(np.ones((q_len, k_len), dtype=bool), k=1)
            causal_offsets = np.where(future, MASK_SCORE, 0.0)[None, None, :, :]
            offsets = causal_offsets if offsets is None else offsets + causal_offsets
        if offsets is not None:
            scores = scores + offsets

        weights = ops.softmax(scores, axis=-1)
        mixed = ops.matmul(weights, v)
        merged = ops.reshape(ops.transpose(mixed, (0, 2, 1, 3)), (batch, q_len, self.dim))
        return self.o_proj(merged)


class TransformerLayer(Module):
    """Pre-norm self-attention + feed-forward, residual around both"""

    def __init__(self, dim: int, num_heads: int, ffn_mult: int, rng: np.random.Generator, eps: float = 1e-5):
        self.norm1 = LayerNorm(dim, eps)
        self.attn = MultiHeadAttention(dim, num_heads, rng)
        self.norm2 = LayerNorm(dim, eps)
        self.ffn = FeedForward(dim, dim * ffn_mult, rng)

    def forward(self, x: Tensor, key_mask: Optional[np.ndarray] = None) -> Tensor:
        x = x + self.attn(self.norm1(x), key_mask=key_mask)
        return x + self.ffn(self.norm2(x))


def masked_mean(tokens: Tensor, mask: Optional[np.ndarray]) -> Tensor:
    """Mean over axis 1 counting only positions where mask is True"""
    if mask is None:
        return ops.mean(tokens, axis=1)
    weights = np.asarray(mask, dtype=tokens.dtype)
    counts = weights.sum(axis=1, keepdims=True)
    if np.any(counts == 0):
        raise ContractError("masked_mean over a sequence with no valid positions")
    summed = ops.sum(tokens * weights[:, :, None], axis=1)
    return summed / counts
