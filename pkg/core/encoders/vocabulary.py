# ============================================================================
# core/encoders/vocabulary.py - Word Vocabulary and Token Sequences
# ============================================================================

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np

from core.errors import ContractError

logger = logging.getLogger(__name__)

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIAL_TOKENS = ["<pad>", "<bos>", "<eos>", "<unk>"]


@dataclass(frozen=True)
class TokenSeq:
    """Vocabulary ids; PAD may only appear as a suffix"""

    ids: List[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def length(self) -> int:
        """Number of non-PAD ids"""
        return sum(1 for i in self.ids if i != PAD)

    def validate(self, vocab_size: int) -> None:
        for pos, i in enumerate(self.ids):
            if not 0 <= i < vocab_size:
                raise ContractError(f"token id {i} at position {pos} outside vocabulary of {vocab_size}")
        seen_pad = False
        for i in self.ids:
            if i == PAD:
                seen_pad = True
            elif seen_pad:
                raise ContractError(f"PAD must only appear as a suffix: {self.ids}")

    def padded(self, length: int) -> "TokenSeq":
        if len(self.ids) > length:
            raise ContractError(f"sequence of {len(self.ids)} ids does not fit length {length}")
        return TokenSeq(list(self.ids) + [PAD] * (length - len(self.ids)))


def pad_batch(seqs: Sequence[TokenSeq], length: int) -> np.ndarray:
    """(B, length) int array, PAD-filled"""
    return np.array([seq.padded(length).ids for seq in seqs], dtype=np.int64).reshape(len(seqs), length)


class Vocabulary:
    """Whitespace word vocabulary; ids 0-3 are PAD/BOS/EOS/UNK"""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tokens[: len(SPECIAL_TOKENS)] != SPECIAL_TOKENS:
            raise ContractError(f"vocabulary must start with {SPECIAL_TOKENS}")
        if len(set(tokens)) != len(tokens):
            raise ContractError("vocabulary contains duplicate tokens")
        self.tokens = tokens
        self.index = {tok: i for i, tok in enumerate(tokens)}
        self.unk_count = 0

    @classmethod
    def from_words(cls, words: Iterable[str]) -> "Vocabulary":
        ordered: List[str] = []
        seen = set(SPECIAL_TOKENS)
        for word in words:
            if word not in seen:
                seen.add(word)
                ordered.append(word)
        return cls(SPECIAL_TOKENS + ordered)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, word: str) -> bool:
        return word in self.index

    def tokenize(self, text: str, max_len: Optional[int] = None) -> TokenSeq:
        ids = [BOS]
        for word in text.lower().split():
            token_id = self.index.get(word)
            if token_id is None:
                self.unk_count += 1
                logger.warning(f"Unknown word {word!r} mapped to UNK (total UNKs: {self.unk_count})")
                token_id = UNK
            ids.append(token_id)
        ids.append(EOS)
        if max_len is not None and len(ids) > max_len:
            raise ContractError(f"{text!r} needs {len(ids)} tokens, more than max length {max_len}")
        return TokenSeq(ids)

    def detokenize(self, seq: Union[TokenSeq, Sequence[int]]) -> str:
        ids = seq.ids if isinstance(seq, TokenSeq) else list(seq)
        words = []
        for i in ids:
            if i == EOS:
                break
            if i in (PAD, BOS):
                continue
            words.append(self.tokens[i])
        return " ".join(words)

    def sha256(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([line for line in lines if line])
