# ============================================================================
# core/validation/validator.py - Gradient Validation Suite
# ============================================================================

"""
Checks every differentiable component against central finite differences
at float64 on tiny shapes. Each case reduces its output with a random
readout of unit scale so all gradient entries are exercised.
"""

import logging
from typing import Any, Callable, Dict, Iterable, List, Optional, Tuple

import numpy as np

from core.alignment import QQFormer, vtc_loss
from core.config import ModelConfig
from core.encoders import ImageEncoder, TextEncoder
from core.encoders.vocabulary import BOS, EOS, PAD
from core.errors import ConfigError
from core.fusion import CmmStack, MambaBlock, scan_kernel
from core.heads import AuxiliaryDecoder, Classifier, aux_decode_loss, cls_loss
from core.numcore import Tensor, check_gradients, default_dtype, ops
from core.numcore.nn import Module, parameter

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-4
VOCAB_SIZE = 9

TINY_MODEL = ModelConfig(
    image_size=8,
    patch_size=4,
    channels=3,
    d_model=8,
    num_heads=2,
    ffn_mult=2,
    encoder_layers=1,
    max_question_len=5,
    num_queries=3,
    qformer_layers=1,
    d_state=3,
    expand=2,
    conv_width=3,
    cmm_blocks=1,
    decoder_layers=1,
    max_answer_len=4,
)

LossFn = Callable[[], Tensor]
Case = Callable[[np.random.Generator], Tuple[LossFn, Dict[str, Tensor]]]


def _params(module: Module, prefix: str) -> Dict[str, Tensor]:
    return {f"{prefix}.{name}": p for name, p in module.named_parameters()}


def _token_ids(rng: np.random.Generator, batch: int, length: int) -> np.ndarray:
    """BOS w... EOS PAD... with at least one word per row"""
    ids = np.full((batch, length), PAD, dtype=np.int64)
    for row in range(batch):
        words = int(rng.integers(1, length - 1))
        ids[row, 0] = BOS
        ids[row, 1:words + 1] = rng.integers(4, VOCAB_SIZE, size=words)
        ids[row, words + 1] = EOS
    return ids


# ---------------------------------------------------------------------------
# Cases
# ---------------------------------------------------------------------------

def case_elementwise(rng):
    x = parameter(rng.normal(size=(2, 3)))
    y = parameter(rng.uniform(0.5, 2.0, size=(3,)))
    weights = rng.normal(size=(2, 3))

    def loss():
        out = (
            ops.gelu(x) + ops.silu(x) * ops.sigmoid(x) + ops.softplus(x) + ops.relu(x * 0.5 + 0.3)
            + ops.exp(x * 0.1) / y + ops.log(y) - ops.sqrt(y) + (x * x + 1.0) ** 1.5 - x
        )
        return ops.sum(out * weights)

    return loss, {"x": x, "y": y}


def _fixed_readout(rng: np.random.Generator, fn: Callable[[], Tensor]) -> LossFn:
    """Freeze the readout weights on the first call so every evaluation uses the same ones"""
    cache: Dict[str, np.ndarray] = {}

    def loss():
        out = fn()
        if "w" not in cache:
            cache["w"] = rng.normal(0.0, 1.0, size=out.shape) / np.sqrt(max(out.size, 1))
        return ops.sum(out * cache["w"])

    return loss


def case_reductions(rng):
    x = parameter(rng.normal(size=(2, 3, 4)))
    gain = parameter(rng.normal(1.0, 0.1, size=(4,)))
    bias = parameter(rng.normal(0.0, 0.1, size=(4,)))
    w = parameter(rng.normal(size=(4, 5)))

    def out():
        mixed = ops.matmul(ops.layer_norm(x, gain, bias, 1e-5), w)
        parts = ops.concat([
            ops.softmax(mixed, axis=-1),
            ops.log_softmax(mixed, axis=1),
            ops.l2_normalize(mixed, axis=-1),
        ], axis=-1)
        return ops.concat([ops.mean(parts, axis=1), ops.max(mixed, axis=1)], axis=-1)

    return _fixed_readout(rng, out), {"x": x, "gain": gain, "bias": bias, "w": w}


def case_image_encoder(rng):
    encoder = ImageEncoder(TINY_MODEL, rng)
    images = rng.uniform(0.0, 1.0, size=(2, 8, 8, 3))
    return _fixed_readout(rng, lambda: encoder(images).tokens), _params(encoder, "image_encoder")


def case_text_encoder(rng):
    encoder = TextEncoder(TINY_MODEL, VOCAB_SIZE, rng)
    ids = _token_ids(rng, 2, TINY_MODEL.max_question_len)
    return _fixed_readout(rng, lambda: encoder(ids).pooled), _params(encoder, "text_encoder")


def case_qqformer(rng):
    image_encoder = ImageEncoder(TINY_MODEL, rng)
    text_encoder = TextEncoder(TINY_MODEL, VOCAB_SIZE, rng)
    former = QQFormer(TINY_MODEL, rng)
    images = rng.uniform(0.0, 1.0, size=(2, 8, 8, 3))
    ids = _token_ids(rng, 2, TINY_MODEL.max_question_len)

    def out():
        return former(image_encoder(images), text_encoder(ids))

    params = _params(former, "qqformer")
    params.update({k: v for k, v in _params(text_encoder, "text_encoder").items() if "token_embedding" in k})
    return _fixed_readout(rng, out), params


def case_vtc(rng):
    z = parameter(rng.normal(size=(3, 2, 4)))
    t = parameter(rng.normal(size=(3, 4)))
    return (lambda: vtc_loss(z, t, tau=0.5).total), {"z": z, "t": t}


def case_selective_scan(rng):
    batch, steps, channels, state = 2, 4, 3, 2
    x = parameter(rng.normal(size=(batch, steps, channels)))
    raw_delta = parameter(rng.normal(size=(batch, steps, channels)))
    a_log = parameter(rng.normal(0.0, 0.5, size=(channels, state)))
    b = parameter(rng.normal(size=(batch, steps, state)))
    c = parameter(rng.normal(size=(batch, steps, state)))
    d = parameter(rng.normal(size=(channels,)))

    def out():
        return scan_kernel(x, ops.softplus(raw_delta), -ops.exp(a_log), b, c, d)

    params = {"x": x, "delta": raw_delta, "a_log": a_log, "B": b, "C": c, "D": d}
    return _fixed_readout(rng, out), params


def case_mamba_block(rng):
    block = MambaBlock(TINY_MODEL, rng)
    primary = parameter(rng.normal(size=(2, 4, TINY_MODEL.d_model)))
    gate = parameter(rng.normal(size=(2, 4, TINY_MODEL.d_model)))
    params = _params(block, "mamba")
    params.update({"primary": primary, "gate": gate})
    return _fixed_readout(rng, lambda: block(primary, gate)), params


def case_cmm(rng):
    stack = CmmStack(TINY_MODEL, seed=int(rng.integers(1 << 31)))
    z = parameter(rng.normal(size=(2, 3, TINY_MODEL.d_model)))
    t = parameter(rng.normal(size=(2, 5, TINY_MODEL.d_model)))
    mask = np.array([[True] * 5, [True, True, True, False, False]])

    def out():
        fused = stack(z, t, mask)
        return ops.concat([fused.x_f, ops.reshape(fused.memory, (2, -1))], axis=-1)

    params = _params(stack, "cmm")
    params.update({"z": z, "t": t})
    return _fixed_readout(rng, out), params


def case_classifier(rng):
    head = Classifier(TINY_MODEL.d_model, 4, rng)
    # the output layer starts at zero, which would hide every upstream gradient
    head.out.weight.data[...] = rng.normal(0.0, 0.5, size=head.out.weight.shape)
    x_f = parameter(rng.normal(size=(3, 2 * TINY_MODEL.d_model)))
    targets = rng.integers(0, 4, size=3)
    params = _params(head, "classifier")
    params["x_f"] = x_f
    return (lambda: cls_loss(head(x_f), targets)), params


def case_aux_decoder(rng):
    memory_len = 3 + TINY_MODEL.max_question_len
    decoder = AuxiliaryDecoder(TINY_MODEL, VOCAB_SIZE, memory_len, rng)
    decoder.mask.m.data[...] = rng.uniform(0.2, 2.0, size=memory_len)
    memory = parameter(rng.normal(size=(3, memory_len, TINY_MODEL.d_model)))
    memory_mask = np.ones((3, memory_len), dtype=bool)
    memory_mask[1, -2:] = False
    answers = _token_ids(rng, 3, TINY_MODEL.max_answer_len)
    is_open = np.array([True, True, False])
    params = _params(decoder, "decoder")
    params["memory"] = memory
    return (lambda: aux_decode_loss(memory, memory_mask, answers, is_open, decoder).loss), params


CASES: Dict[str, Case] = {
    "elementwise": case_elementwise,
    "reductions": case_reductions,
    "image_encoder": case_image_encoder,
    "text_encoder": case_text_encoder,
    "qqformer": case_qqformer,
    "vtc_loss": case_vtc,
    "selective_scan": case_selective_scan,
    "mamba_block": case_mamba_block,
    "cmm": case_cmm,
    "classifier": case_classifier,
    "aux_decoder": case_aux_decoder,
}


# ---------------------------------------------------------------------------
# Gradient Validator (MAIN CLASS)
# ---------------------------------------------------------------------------

class GradientValidator:
    """Runs the finite-difference cases over many seeds"""

    def __init__(self, tolerance: float = DEFAULT_TOLERANCE, samples_per_param: Optional[int] = 4, h: float = 1e-5):
        self.tolerance = tolerance
        self.samples_per_param = samples_per_param
        self.h = h

    def validate_case(self, name: str, seed: int) -> Dict[str, Any]:
        """
        Returns:
            dict: {
                "valid": bool,
                "errors": List[str],
                "max_relative_error": float,
            }
        """
        if name not in CASES:
            raise ConfigError(f"unknown gradient case {name!r}; choose from {sorted(CASES)}")
        rng = np.random.default_rng([seed, sorted(CASES).index(name)])
        with default_dtype("float64"):
            loss_fn, params = CASES[name](rng)
            errors = check_gradients(loss_fn, params, h=self.h, samples_per_param=self.samples_per_param, rng=rng)
        failures = [
            f"{param}: relative error {err:.3e} > {self.tolerance:g}"
            for param, err in errors.items() if not err <= self.tolerance
        ]
        worst = max(errors.values()) if errors else 0.0
        return {"valid": not failures, "errors": failures, "max_relative_error": worst}

    def run(self, seeds: Iterable[int], cases: Optional[List[str]] = None) -> Dict[str, Dict[str, Any]]:
        """Worst error per case over all seeds"""
        names = cases or list(CASES)
        report: Dict[str, Dict[str, Any]] = {}
        seeds = list(seeds)
        for name in names:
            worst, failures = 0.0, []
            for seed in seeds:
                result = self.validate_case(name, seed)
                worst = max(worst, result["max_relative_error"])
                failures.extend(f"seed {seed}: {e}" for e in result["errors"])
            report[name] = {"valid": not failures, "errors": failures, "max_relative_error": worst, "seeds": len(seeds)}
            level = logging.INFO if not failures else logging.ERROR
            logger.log(level, f"Gradient case {name}: worst relative error {worst:.3e} over {len(seeds)} seeds")
        return report
