# ============================================================================
# core/heads/answers.py - Closed Answer Set
# ============================================================================

import logging
from typing import Dict, Iterable, List

from core.errors import ContractError

logger = logging.getLogger(__name__)

# Class id for answers that never appeared in training; such samples are
# always scored incorrect by the classifier
OUT_OF_SET = -1


def normalize_answer(text: str) -> str:
    return " ".join(text.lower().split())


class AnswerVocab:
    """Answer string <-> class id, ids in first-appearance order"""

    def __init__(self, classes: Iterable[str]):
        self.classes: List[str] = []
        self.index: Dict[str, int] = {}
        for answer in (normalize_answer(c) for c in classes):
            if answer not in self.index:
                self.index[answer] = len(self.classes)
                self.classes.append(answer)

    @classmethod
    def from_answers(cls, answers: Iterable[str]) -> "AnswerVocab":
        """Classes in first-appearance order over the training answers"""
        return cls(answers)

    def __len__(self) -> int:
        return len(self.classes)

    def __contains__(self, answer: str) -> bool:
        return normalize_answer(answer) in self.index

    def encode(self, answer: str) -> int:
        return self.index.get(normalize_answer(answer), OUT_OF_SET)

    def decode(self, class_id: int) -> str:
        if not 0 <= class_id < len(self.classes):
            raise ContractError(f"class id {class_id} outside [0, {len(self.classes)})")
        return self.classes[class_id]
