from core.heads.answers import OUT_OF_SET, AnswerVocab, normalize_answer
from core.heads.auxiliary_decoder import (
    AuxiliaryDecoder,
    AuxOutput,
    DecoderLayer,
    LearnableMask,
    aux_decode_loss,
    generate_answers,
)
from core.heads.classifier import Classifier, classify
from core.heads.losses import (
    LossBreakdown,
    cls_loss,
    combine_losses,
    first_non_finite,
    one_hot,
    predict_answer,
    total_loss,
)

__all__ = [
    "OUT_OF_SET",
    "AnswerVocab",
    "AuxOutput",
    "AuxiliaryDecoder",
    "Classifier",
    "DecoderLayer",
    "LearnableMask",
    "LossBreakdown",
    "aux_decode_loss",
    "classify",
    "cls_loss",
    "combine_losses",
    "first_non_finite",
    "generate_answers",
    "normalize_answer",
    "one_hot",
    "predict_answer",
    "total_loss",
]
