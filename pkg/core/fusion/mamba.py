# ============================================================================
# core/fusion/mamba.py - Mamba Block
# ============================================================================

import logging
from typing import Optional

import numpy as np

from core.config import ModelConfig
from core.errors import ContractError
from core.fusion.selective_scan import SsmParams, selective_scan
from core.numcore import Tensor, ops
from core.numcore.nn import Linear, Module, parameter

logger = logging.getLogger(__name__)


def causal_depthwise_conv(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x (B, T, D), weight (D, W): out_t = sum_k weight[:, k] * x_{t-W+1+k}, zero left padding"""
    batch, steps, channels = x.shape
    width = weight.shape[1]
    padded = ops.concat([Tensor(np.zeros((batch, width - 1, channels), dtype=x.dtype)), x], axis=1)
    out = None
    for k in range(width):
        term = padded[:, k:k + steps, :] * weight[:, k]
        out = term if out is None else out + term
    return out + bias


class MambaBlock(Module):
    """
    Gated selective-SSM block. The two-argument form takes the SSM branch from
    `primary` and the gate from `gate_source`:

        x = conv(primary @ W_x) -> SiLU -> selective_scan
        out = out_proj(x * SiLU(gate_source @ W_z))

    `forward(p)` with no gate source is the ordinary single-input block.
    """

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.dim = config.d_model
        self.d_inner = config.d_inner
        self.in_proj = Linear(config.d_model, 2 * config.d_inner, rng, bias=False)
        self.conv_weight = parameter(rng.normal(0.0, config.conv_width ** -0.5, size=(config.d_inner, config.conv_width)))
        self.conv_bias = parameter(np.zeros(config.d_inner))
        self.ssm = SsmParams(config.d_inner, config.d_state, config.resolved_dt_rank, rng)
        self.out_proj = Linear(config.d_inner, config.d_model, rng)

    def forward(self, primary: Tensor, gate_source: Optional[Tensor] = None) -> Tensor:
        if gate_source is None:
            gate_source = primary
        if primary.shape != gate_source.shape:
            raise ContractError(
                f"Mamba inputs must share a shape, got {primary.shape} and {gate_source.shape}"
            )
        if primary.shape[-1] != self.dim:
            raise ContractError(f"Mamba block width {self.dim} does not match input {primary.shape}")

        weight = self.in_proj.weight
        x = ops.matmul(primary, weight[:, : self.d_inner])
        z = ops.matmul(gate_source, weight[:, self.d_inner:])
        x = ops.silu(causal_depthwise_conv(x, self.conv_weight, self.conv_bias))
        y = selective_scan(x, self.ssm)
        return self.out_proj(y * ops.silu(z))

    def forward_fused_projection(self, primary: Tensor) -> Tensor:
        """Single-input block computing both branches from one in_proj product"""
        xz = self.in_proj(primary)
        x = ops.silu(causal_depthwise_conv(xz[..., : self.d_inner], self.conv_weight, self.conv_bias))
        y = selective_scan(x, self.ssm)
        return self.out_proj(y * ops.silu(xz[..., self.d_inner:]))


def mamba_block(primary: Tensor, block: MambaBlock, gate_source: Optional[Tensor] = None) -> Tensor:
    return block(primary, gate_source)
