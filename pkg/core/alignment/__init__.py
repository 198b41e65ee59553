from core.alignment.contrastive import VtcLoss, similarity_matrix, vtc_loss
from core.alignment.qqformer import QQFormer, QQFormerLayer, QueryBank, qqformer_forward

__all__ = ["QQFormer", "QQFormerLayer", "QueryBank", "VtcLoss", "qqformer_forward", "similarity_matrix", "vtc_loss"]
