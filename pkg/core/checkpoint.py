# ============================================================================
# core/checkpoint.py - Versioned Binary Checkpoints
# ============================================================================

"""
Layout (little-endian):

    magic      8 bytes  b"MVQACKPT"
    version    uint32
    header     uint32 byte length + UTF-8 JSON (config, vocabularies, metadata)
    count      uint32 number of tensors
    tensors    count x [uint16 name length, name, uint8 rank,
                        rank x uint32 extents, float32 data]

Tensors are always stored as float32 whatever the run precision. A float64
model is rounded on save and is rebuilt at its configured precision on load,
so reloaded weights match the saved ones only to float32 accuracy.
"""

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, BinaryIO, Dict, Optional, Union

import numpy as np
from pydantic import ValidationError

from core.config import TrainConfig
from core.encoders.vocabulary import Vocabulary
from core.errors import CheckpointError, ContractError
from core.heads.answers import AnswerVocab
from core.models import VqaModel
from core.numcore import default_dtype

logger = logging.getLogger(__name__)

MAGIC = b"MVQACKPT"
FORMAT_VERSION = 1
SUPPORTED_VERSIONS = (1,)


@dataclass
class LoadedCheckpoint:
    model: VqaModel
    config: TrainConfig
    vocab: Vocabulary
    answers: AnswerVocab
    version: int
    metadata: Dict[str, Any] = field(default_factory=dict)


def _write_tensor(stream: BinaryIO, name: str, data: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    stream.write(struct.pack("<H", len(encoded)))
    stream.write(encoded)
    stream.write(struct.pack("<B", data.ndim))
    stream.write(struct.pack(f"<{data.ndim}I", *data.shape))
    stream.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def save_checkpoint(
    path: Union[str, Path],
    model: VqaModel,
    vocab: Vocabulary,
    answers: AnswerVocab,
    metadata: Optional[Dict[str, Any]] = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "config": model.config.model_dump(mode="json"),
        "vocab": vocab.tokens,
        "answer_classes": answers.classes,
        "metadata": metadata or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    state = model.state_dict()
    with path.open("wb") as stream:
        stream.write(MAGIC)
        stream.write(struct.pack("<I", FORMAT_VERSION))
        stream.write(struct.pack("<I", len(header_bytes)))
        stream.write(header_bytes)
        stream.write(struct.pack("<I", len(state)))
        for name in sorted(state):
            _write_tensor(stream, name, state[name])
    logger.info(f"Saved checkpoint with {len(state)} tensors to {path}")
    return path


class _Reader:
    def __init__(self, payload: bytes, version: Optional[int] = None):
        self.payload = payload
        self.offset = 0
        self.version = version

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.payload):
            raise CheckpointError("checkpoint is truncated", self.version)
        chunk = self.payload[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: Union[str, Path]) -> LoadedCheckpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    reader = _Reader(path.read_bytes())
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path} is not an MVQA checkpoint")
    (version,) = reader.unpack("<I")
    reader.version = version
    if version not in SUPPORTED_VERSIONS:
        raise CheckpointError(f"unsupported checkpoint version {version}", version)

    (header_len,) = reader.unpack("<I")
    try:
        header = json.loads(reader.take(header_len).decode("utf-8"))
        config = TrainConfig.model_validate(header["config"])
        vocab = Vocabulary(header["vocab"])
        answers = AnswerVocab(header["answer_classes"])
    except (ValueError, KeyError, ValidationError, ContractError) as e:
        raise CheckpointError(f"malformed checkpoint header: {e}", version) from e

    (count,) = reader.unpack("<I")
    state: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (rank,) = reader.unpack("<B")
        shape = reader.unpack(f"<{rank}I") if rank else ()
        size = int(np.prod(shape)) if rank else 1
        state[name] = np.frombuffer(reader.take(4 * size), dtype="<f4").reshape(shape)
    if reader.offset != len(reader.payload):
        raise CheckpointError("trailing bytes after the last tensor", version)

    with default_dtype(config.precision):
        model = VqaModel(config, vocab_size=len(vocab), num_classes=len(answers))
    expected = {name: p.shape for name, p in model.named_parameters()}
    for name, shape in expected.items():
        if name not in state:
            raise CheckpointError(f"tensor {name} missing from checkpoint", version)
        if tuple(state[name].shape) != tuple(shape):
            raise CheckpointError(
                f"tensor {name} has shape {tuple(state[name].shape)}, configuration expects {tuple(shape)}",
                version,
            )
    unexpected = sorted(set(state) - set(expected))
    if unexpected:
        raise CheckpointError(f"checkpoint holds tensors the configuration does not: {unexpected[:3]}", version)
    model.load_state_dict(state)
    logger.info(f"Loaded checkpoint v{version} from {path}")
    return LoadedCheckpoint(
        model=model, config=config, vocab=vocab, answers=answers, version=version,
        metadata=header.get("metadata", {}),
    )
