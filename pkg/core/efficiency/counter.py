# ============================================================================
# core/efficiency/counter.py - Analytic Parameter and FLOP Counts
# ============================================================================

"""
Exact integers derived from the configuration alone. Conventions:

- a (m x k) @ (k x n) product costs 2*m*k*n FLOPs
- the selective scan costs 8 FLOPs per (step, channel, state) element
  (discretize 2, drive 2, update 2, readout 2) plus 2 per (step, channel)
  for the D skip
- elementwise work is counted where it is proportional to a stream length
  (gating, residuals); LayerNorm, softmax and activations are not counted
- FLOPs are for one sample (batch 1) in the forward pass
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict

from core.config import ModelConfig, TrainConfig

logger = logging.getLogger(__name__)

BYTES_PER_VALUE = 4
# parameter + gradient + two Adam moments
TRAINING_COPIES = 4


@dataclass
class EfficiencyReport:
    param_count: int
    flops: int
    peak_bytes: int
    params_by_module: Dict[str, int] = field(default_factory=dict)
    flops_by_module: Dict[str, int] = field(default_factory=dict)

    def to_key_values(self):
        lines = [f"param_count={self.param_count}", f"flops={self.flops}", f"peak_bytes={self.peak_bytes}"]
        lines += [f"params.{name}={value}" for name, value in self.params_by_module.items()]
        lines += [f"flops.{name}={value}" for name, value in self.flops_by_module.items()]
        return lines


# ---------------------------------------------------------------------------
# Parameter counts
# ---------------------------------------------------------------------------

def linear_params(fan_in: int, fan_out: int, bias: bool = True) -> int:
    return fan_in * fan_out + (fan_out if bias else 0)


def layer_norm_params(dim: int) -> int:
    return 2 * dim


def attention_params(dim: int) -> int:
    return 3 * linear_params(dim, dim) + linear_params(dim, dim, bias=False)


def ffn_params(dim: int, mult: int) -> int:
    return linear_params(dim, dim * mult) + linear_params(dim * mult, dim)


def transformer_layer_params(m: ModelConfig) -> int:
    return 2 * layer_norm_params(m.d_model) + attention_params(m.d_model) + ffn_params(m.d_model, m.ffn_mult)


def cross_layer_params(m: ModelConfig) -> int:
    """Self-attention + cross-attention + FFN, each pre-normed"""
    return 3 * layer_norm_params(m.d_model) + 2 * attention_params(m.d_model) + ffn_params(m.d_model, m.ffn_mult)


def mamba_params(m: ModelConfig) -> int:
    d, di, n, r = m.d_model, m.d_inner, m.d_state, m.resolved_dt_rank
    return (
        linear_params(d, 2 * di, bias=False)
        + di * m.conv_width + di
        + linear_params(di, r + 2 * n, bias=False)
        + linear_params(r, di)
        + di * n + di
        + linear_params(di, d)
    )


def module_params(config: TrainConfig, vocab_size: int, num_classes: int) -> Dict[str, int]:
    m = config.model
    d = m.d_model
    query_len = m.num_queries if config.use_qqformer else m.num_patches
    counts: Dict[str, int] = OrderedDict()
    counts["image_encoder"] = (
        linear_params(m.patch_size * m.patch_size * m.channels, d)
        + m.encoder_layers * transformer_layer_params(m)
        + layer_norm_params(d)
    )
    counts["text_encoder"] = vocab_size * d + m.encoder_layers * transformer_layer_params(m) + layer_norm_params(d)
    counts["qqformer"] = m.num_queries * d + m.qformer_layers * cross_layer_params(m) if config.use_qqformer else 0
    blocks = m.cmm_blocks if config.use_cmm else 0
    counts["cmm"] = 2 * layer_norm_params(d) + blocks * 2 * (mamba_params(m) + linear_params(d, d))
    counts["classifier"] = linear_params(2 * d, d) + layer_norm_params(d) + linear_params(d, num_classes)
    counts["auxiliary_decoder"] = (
        vocab_size * d
        + m.decoder_layers * cross_layer_params(m)
        + layer_norm_params(d)
        + linear_params(d, vocab_size)
        + query_len + m.max_question_len
    ) if config.use_ahead else 0
    return counts


# ---------------------------------------------------------------------------
# FLOP counts
# ---------------------------------------------------------------------------

def matmul_flops(m: int, k: int, n: int) -> int:
    return 2 * m * k * n


def attention_flops(q_len: int, k_len: int, dim: int) -> int:
    """Projections, scores, mixing and output projection"""
    projections = matmul_flops(q_len, dim, dim) + 2 * matmul_flops(k_len, dim, dim) + matmul_flops(q_len, dim, dim)
    return projections + attention_score_flops(q_len, k_len, dim) + matmul_flops(q_len, k_len, dim)


def attention_score_flops(q_len: int, k_len: int, dim: int) -> int:
    """Q @ K^T for all heads"""
    return matmul_flops(q_len, dim, k_len)


def ffn_flops(length: int, dim: int, mult: int) -> int:
    return matmul_flops(length, dim, dim * mult) + matmul_flops(length, dim * mult, dim)


def scan_flops(length: int, d_inner: int, d_state: int) -> int:
    return 8 * length * d_inner * d_state + 2 * length * d_inner


def mamba_flops(m: ModelConfig, length: int) -> int:
    d, di, n, r = m.d_model, m.d_inner, m.d_state, m.resolved_dt_rank
    return (
        2 * matmul_flops(length, d, di)            # SSM branch and gate branch of in_proj
        + 2 * length * di * m.conv_width            # causal depthwise conv
        + matmul_flops(length, di, r + 2 * n)       # x_proj
        + matmul_flops(length, r, di)               # dt_proj
        + scan_flops(length, di, n)
        + length * di                               # gating product
        + matmul_flops(length, di, d)               # out_proj
    )


def cmm_stream_flops(m: ModelConfig, length: int) -> int:
    """One stream through every CMM block: partner modulation, Mamba, Fus and residual"""
    per_block = length * m.d_model + mamba_flops(m, length) + matmul_flops(length, m.d_model, m.d_model) + length * m.d_model
    return m.cmm_blocks * per_block


def cmm_pooling_flops(m: ModelConfig, query_len: int, text_len: int) -> int:
    return m.cmm_blocks * (query_len + text_len) * m.d_model


def module_flops(config: TrainConfig, vocab_size: int, num_classes: int) -> Dict[str, int]:
    m = config.model
    d, n_patch, text_len = m.d_model, m.num_patches, m.max_question_len
    query_len = m.num_queries if config.use_qqformer else n_patch
    encoder_layer = lambda length: attention_flops(length, length, d) + ffn_flops(length, d, m.ffn_mult)  # noqa: E731
    flops: Dict[str, int] = OrderedDict()
    flops["image_encoder"] = matmul_flops(n_patch, m.patch_size * m.patch_size * m.channels, d) + m.encoder_layers * encoder_layer(n_patch)
    flops["text_encoder"] = m.encoder_layers * encoder_layer(text_len)
    flops["qqformer"] = m.qformer_layers * (
        attention_flops(m.num_queries, m.num_queries + text_len, d)
        + attention_flops(m.num_queries, n_patch, d)
        + ffn_flops(m.num_queries, d, m.ffn_mult)
    ) if config.use_qqformer else 0
    if config.use_cmm:
        flops["cmm.query_stream"] = cmm_stream_flops(m, query_len)
        flops["cmm.text_stream"] = cmm_stream_flops(m, text_len)
        flops["cmm.pooling"] = cmm_pooling_flops(m, query_len, text_len)
    flops["classifier"] = matmul_flops(1, 2 * d, d) + matmul_flops(1, d, num_classes)
    answer_len = m.max_answer_len - 1
    flops["auxiliary_decoder"] = m.decoder_layers * (
        attention_flops(answer_len, answer_len, d)
        + attention_flops(answer_len, query_len + text_len, d)
        + ffn_flops(answer_len, d, m.ffn_mult)
    ) + matmul_flops(answer_len, d, vocab_size) if config.use_ahead else 0
    return flops


# ---------------------------------------------------------------------------
# Reference cross-attention fusion of equal width
# ---------------------------------------------------------------------------

def reference_fusion_flops(m: ModelConfig, query_len: int, text_len: int) -> Dict[str, int]:
    """
    A co-attention stack with the same block count and width: per block and
    stream, self-attention over the own stream, cross-attention to the
    partner and a 4x FFN.
    """
    d = m.d_model

    def stream(own: int, partner: int) -> int:
        return m.cmm_blocks * (attention_flops(own, own, d) + attention_flops(own, partner, d) + ffn_flops(own, d, 4))

    return {
        "reference.query_stream": stream(query_len, text_len),
        "reference.text_stream": stream(text_len, query_len),
        "reference.text_self_scores": m.cmm_blocks * attention_score_flops(text_len, text_len, d),
    }


def reference_fusion_params(m: ModelConfig) -> int:
    d = m.d_model
    per_stream = 3 * layer_norm_params(d) + 2 * attention_params(d) + ffn_params(d, 4)
    return m.cmm_blocks * 2 * per_stream


# ---------------------------------------------------------------------------

def count_params_flops(config: TrainConfig, vocab_size: int, num_classes: int, batch_size: int = 1) -> EfficiencyReport:
    params = module_params(config, vocab_size, num_classes)
    flops = module_flops(config, vocab_size, num_classes)
    m = config.model
    param_count = sum(params.values())
    # largest live activation set: every stream token kept for backward, approximated by
    # per-layer outputs of width d (and d_inner inside Mamba blocks)
    query_len = m.num_queries if config.use_qqformer else m.num_patches
    activation_values = batch_size * (
        m.num_patches * m.d_model * (m.encoder_layers * 6 + 2)
        + m.max_question_len * m.d_model * (m.encoder_layers * 6 + 2)
        + ((query_len + m.max_question_len) * m.d_inner * m.d_state * m.cmm_blocks * 2 if config.use_cmm else 0)
    )
    peak_bytes = BYTES_PER_VALUE * (TRAINING_COPIES * param_count + activation_values)
    return EfficiencyReport(
        param_count=param_count,
        flops=sum(flops.values()) * batch_size,
        peak_bytes=peak_bytes,
        params_by_module=dict(params),
        flops_by_module=dict(flops),
    )
