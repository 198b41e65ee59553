# ============================================================================
# ingestion/dataset_loader/loader.py - Dataset Loading and Batching
# ============================================================================

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Union

import numpy as np

from core.config import ModelConfig
from core.encoders.vocabulary import Vocabulary, pad_batch
from core.errors import DataCorruptionError
from core.heads.answers import AnswerVocab
from core.models import Batch
from ingestion.image_io import read_pixmap
from ingestion.scene_generator.generator import SPLITS, Scene, images_digest, sha256_file

logger = logging.getLogger(__name__)

REQUIRED_MANIFEST_KEYS = ("split", "count", "open_count", "seed", "vocab_sha", "samples_sha", "images_sha")


@dataclass
class VqaSample:
    sample_id: str
    image: np.ndarray
    question: str
    answer: str
    is_open: bool
    template: str = ""
    scene: Scene = field(default_factory=Scene)


@dataclass
class VqaDataset:
    root: Path
    vocab: Vocabulary
    splits: Dict[str, List[VqaSample]]
    manifests: Dict[str, Dict[str, str]]

    def split(self, name: str) -> List[VqaSample]:
        if name not in self.splits:
            raise DataCorruptionError(f"split {name!r} not loaded from {self.root}")
        return self.splits[name]

    def answer_vocab(self) -> AnswerVocab:
        """Closed answer set: every answer seen in training"""
        return AnswerVocab.from_answers(s.answer for s in self.split("train"))


def read_manifest(path: Path) -> Dict[str, str]:
    if not path.is_file():
        raise DataCorruptionError(f"manifest missing: {path}")
    manifest = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        if "=" not in line:
            raise DataCorruptionError(f"malformed manifest line in {path}: {line!r}")
        key, value = line.split("=", 1)
        manifest[key.strip()] = value.strip()
    missing = [k for k in REQUIRED_MANIFEST_KEYS if k not in manifest]
    if missing:
        raise DataCorruptionError(f"manifest {path} lacks keys {missing}")
    return manifest


def _scene_fields(record: Dict, where: str) -> Scene:
    try:
        return Scene.from_fields(record)
    except (KeyError, ValueError) as e:
        raise DataCorruptionError(f"{where}: malformed scene fields ({e})") from e


def load_split(root: Union[str, Path], split: str, vocab: Vocabulary) -> List[VqaSample]:
    """Load one split, verifying every hash the manifest records"""
    split_dir = Path(root) / split
    manifest = read_manifest(split_dir / "manifest.txt")
    if manifest["vocab_sha"] != vocab.sha256():
        raise DataCorruptionError(f"{split}: vocabulary hash does not match vocab.txt")

    samples_file = split_dir / "samples.jsonl"
    if not samples_file.is_file():
        raise DataCorruptionError(f"{split}: samples file missing: {samples_file}")
    if sha256_file(samples_file) != manifest["samples_sha"]:
        raise DataCorruptionError(f"{split}: samples.jsonl hash does not match manifest")

    records = []
    for lineno, line in enumerate(samples_file.read_text(encoding="utf-8").splitlines(), start=1):
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as e:
            raise DataCorruptionError(f"{samples_file}:{lineno}: {e}") from e
        if not isinstance(records[-1], dict):
            raise DataCorruptionError(f"{samples_file}:{lineno}: record is not a key-value object")
        nested = [k for k, v in records[-1].items() if isinstance(v, (dict, list))]
        if nested:
            raise DataCorruptionError(f"{samples_file}:{lineno}: record fields must be flat, got nested {nested}")
    if len(records) != int(manifest["count"]):
        raise DataCorruptionError(f"{split}: manifest promises {manifest['count']} samples, found {len(records)}")

    image_paths = [split_dir / record["image"] for record in records]
    missing = [str(p) for p in image_paths if not p.is_file()]
    if missing:
        raise DataCorruptionError(f"{split}: image files missing: {missing[:3]}")
    if images_digest(image_paths) != manifest["images_sha"]:
        raise DataCorruptionError(f"{split}: image bytes do not match manifest hash")

    samples = [
        VqaSample(
            sample_id=record["id"],
            image=read_pixmap(path),
            question=record["question"],
            answer=record["answer"],
            is_open=bool(record["is_open"]),
            template=record.get("template", ""),
            scene=_scene_fields(record, f"{samples_file}:{lineno}"),
        )
        for lineno, (record, path) in enumerate(zip(records, image_paths), start=1)
    ]
    logger.debug(f"Loaded {len(samples)} {split} samples from {split_dir}")
    return samples


def load_dataset(root: Union[str, Path], splits: Sequence[str] = SPLITS) -> VqaDataset:
    root = Path(root)
    vocab_file = root / "vocab.txt"
    if not vocab_file.is_file():
        raise DataCorruptionError(f"vocabulary missing: {vocab_file}")
    vocab = Vocabulary.load(vocab_file)
    loaded = {split: load_split(root, split, vocab) for split in splits}
    manifests = {split: read_manifest(root / split / "manifest.txt") for split in splits}
    logger.info(
        f"Loaded dataset {root}: " + ", ".join(f"{name}={len(items)}" for name, items in loaded.items())
    )
    return VqaDataset(root=root, vocab=vocab, splits=loaded, manifests=manifests)


def batch_iter(
    samples: Sequence,
    batch_size: int,
    seed: int = 0,
    epoch: int = 0,
    shuffle: bool = True,
) -> Iterator[List]:
    """Mini-batches; the order depends only on (seed, epoch)"""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = np.arange(len(samples))
    if shuffle:
        order = np.random.default_rng([int(seed), int(epoch)]).permutation(len(samples))
    for start in range(0, len(samples), batch_size):
        yield [samples[i] for i in order[start:start + batch_size]]


def collate(
    samples: Sequence[VqaSample],
    vocab: Vocabulary,
    answers: AnswerVocab,
    config: ModelConfig,
    dtype: Optional[np.dtype] = None,
) -> Batch:
    question_seqs = [vocab.tokenize(s.question, config.max_question_len) for s in samples]
    answer_seqs = [vocab.tokenize(s.answer, config.max_answer_len) for s in samples]
    images = np.stack([s.image for s in samples])
    if dtype is not None:
        images = images.astype(dtype)
    return Batch(
        images=images,
        question_ids=pad_batch(question_seqs, config.max_question_len),
        answer_ids=pad_batch(answer_seqs, config.max_answer_len),
        answer_classes=np.array([answers.encode(s.answer) for s in samples], dtype=np.int64),
        is_open=np.array([s.is_open for s in samples], dtype=bool),
        sample_ids=[s.sample_id for s in samples],
    )
