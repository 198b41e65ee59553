from core.encoders.image_encoder import EncoderOutput, ImageEncoder, encode_image, patchify
from core.encoders.text_encoder import TextEncoder, encode_text
from core.encoders.vocabulary import BOS, EOS, PAD, UNK, TokenSeq, Vocabulary, pad_batch

__all__ = [
    "BOS", "EOS", "PAD", "UNK",
    "EncoderOutput", "ImageEncoder", "TextEncoder", "TokenSeq", "Vocabulary",
    "encode_image", "encode_text", "pad_batch", "patchify",
]
