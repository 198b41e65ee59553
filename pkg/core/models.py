# ============================================================================
# core/models.py - VQA Model
# ============================================================================

"""
Full pipeline: image and question encoders, question-aware query
alignment, cross-modal Mamba fusion, answer classifier and the masked
auxiliary decoder. Each sub-module draws its initial weights from its own
(seed, name) stream so switching one module off leaves the others'
initialization unchanged.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from core.alignment import QQFormer, VtcLoss, vtc_loss
from core.config import TrainConfig
from core.encoders import EncoderOutput, ImageEncoder, TextEncoder
from core.errors import ContractError
from core.fusion import CmmStack, FusedFeature
from core.heads import (
    AuxiliaryDecoder,
    Classifier,
    LossBreakdown,
    aux_decode_loss,
    cls_loss,
    combine_losses,
    generate_answers,
    predict_answer,
    total_loss,
)
from core.numcore import Tensor, no_grad
from core.numcore.nn import Module, module_rng

logger = logging.getLogger(__name__)


@dataclass
class Batch:
    """One collated mini-batch"""

    images: np.ndarray          # (B, H, W, C) in [0, 1]
    question_ids: np.ndarray    # (B, L) PAD-suffixed
    answer_ids: np.ndarray      # (B, La) BOS answer EOS PAD...
    answer_classes: np.ndarray  # (B,) class id or OUT_OF_SET
    is_open: np.ndarray         # (B,) bool
    sample_ids: List[str] = field(default_factory=list)

    def __len__(self) -> int:
        return int(self.images.shape[0])


@dataclass
class ModelOutput:
    logits: Tensor
    visual: EncoderOutput
    text: EncoderOutput
    queries: Tensor
    fused: FusedFeature


@dataclass
class StepLosses:
    total: Tensor
    cls: Tensor
    breakdown: LossBreakdown
    vtc: VtcLoss
    aux: Tensor


class VqaModel(Module):
    def __init__(self, config: TrainConfig, vocab_size: int, num_classes: int):
        model = config.model
        seed = config.seed
        self.config = config
        self.image_encoder = ImageEncoder(model, module_rng(seed, "image_encoder"))
        self.text_encoder = TextEncoder(model, vocab_size, module_rng(seed, "text_encoder"))
        self.qqformer: Optional[QQFormer] = (
            QQFormer(model, module_rng(seed, "qqformer")) if config.use_qqformer else None
        )
        self.cmm = CmmStack(model, seed, num_blocks=None if config.use_cmm else 0)
        self.classifier = Classifier(model.d_model, num_classes, module_rng(seed, "classifier"), model.ln_eps)
        self.decoder: Optional[AuxiliaryDecoder] = None
        if config.use_ahead:
            self.decoder = AuxiliaryDecoder(
                model, vocab_size, self.memory_len, module_rng(seed, "auxiliary_decoder")
            )

    @property
    def query_len(self) -> int:
        model = self.config.model
        return model.num_queries if self.config.use_qqformer else model.num_patches

    @property
    def memory_len(self) -> int:
        return self.query_len + self.config.model.max_question_len

    @property
    def num_classes(self) -> int:
        return self.classifier.num_classes

    def forward(self, images: np.ndarray, question_ids: np.ndarray) -> ModelOutput:
        question_ids = np.asarray(question_ids, dtype=np.int64)
        if question_ids.shape[1] != self.config.model.max_question_len:
            raise ContractError(
                f"questions must be padded to {self.config.model.max_question_len} ids, "
                f"got shape {question_ids.shape}"
            )
        visual = self.image_encoder(images)
        if visual.tokens.shape[0] != question_ids.shape[0]:
            raise ContractError(f"{visual.tokens.shape[0]} images for {question_ids.shape[0]} questions")
        text = self.text_encoder(question_ids)
        queries = self.qqformer(visual, text) if self.qqformer is not None else visual.tokens
        fused = self.cmm(queries, text.tokens, text.mask)
        logits = self.classifier(fused.x_f)
        return ModelOutput(logits=logits, visual=visual, text=text, queries=queries, fused=fused)

    def forward_with_capture(self, images: np.ndarray, question_ids: np.ndarray) -> Tuple[Tensor, Tensor]:
        """Logits plus the final image-encoder patch tokens, kept for gradient capture"""
        output = self.forward(images, question_ids)
        return output.logits, output.visual.tokens

    def losses(self, batch: Batch, output: ModelOutput) -> StepLosses:
        config = self.config
        l_cls = cls_loss(output.logits, batch.answer_classes)
        vtc = vtc_loss(output.queries, output.text.pooled, config.tau)
        if self.decoder is not None:
            aux = aux_decode_loss(
                output.fused.memory, output.fused.memory_mask, batch.answer_ids, batch.is_open, self.decoder
            ).loss
        else:
            aux = Tensor(0.0, dtype=l_cls.dtype)
        alpha, beta = config.effective_alpha, config.effective_beta
        total = combine_losses(l_cls, vtc.total, aux, alpha, beta)
        breakdown = total_loss(l_cls.item(), vtc.total.item(), aux.item(), alpha, beta)
        return StepLosses(total=total, cls=l_cls, breakdown=breakdown, vtc=vtc, aux=aux)

    def predict(self, images: np.ndarray, question_ids: np.ndarray) -> np.ndarray:
        with no_grad():
            return predict_answer(self.forward(images, question_ids).logits)

    def generate(self, images: np.ndarray, question_ids: np.ndarray) -> List[List[int]]:
        """Greedy decoder answers (token ids); empty lists when the decoder is disabled"""
        if self.decoder is None:
            return [[] for _ in range(len(question_ids))]
        with no_grad():
            fused = self.forward(images, question_ids).fused
            return generate_answers(self.decoder, fused.memory, fused.memory_mask)
