"""
Tests for dataset loading: manifest hash checks, the closed answer set,
deterministic batching and collation.
"""

import json
import shutil

import numpy as np
import pytest

from core.encoders import BOS, EOS, PAD
from core.errors import DataCorruptionError
from core.heads import OUT_OF_SET
from ingestion.dataset_loader import VqaSample, batch_iter, collate, load_dataset, read_manifest
from ingestion.scene_generator import answer_question, generate_dataset
from ingestion.scene_generator.generator import sha256_file

pytestmark = pytest.mark.unit


@pytest.fixture
def dataset_copy(dataset_root, tmp_path):
    target = tmp_path / "copy"
    shutil.copytree(dataset_root, target)
    return target


def _rehash_samples(split_dir):
    manifest = split_dir / "manifest.txt"
    lines = [
        f"samples_sha={sha256_file(split_dir / 'samples.jsonl')}" if line.startswith("samples_sha=") else line
        for line in manifest.read_text(encoding="utf-8").splitlines()
    ]
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")


# =============================================================================
# Loading
# =============================================================================

class TestLoadDataset:

    def test_split_sizes(self, dataset_root):
        dataset = load_dataset(dataset_root)
        assert [len(dataset.split(s)) for s in ("train", "val", "test")] == [24, 8, 8]

    def test_images_in_unit_range(self, dataset_root):
        sample = load_dataset(dataset_root, splits=["val"]).split("val")[0]
        assert sample.image.shape == (16, 16, 3)
        assert 0.0 <= sample.image.min() and sample.image.max() <= 1.0

    def test_unloaded_split(self, dataset_root):
        with pytest.raises(DataCorruptionError, match="not loaded"):
            load_dataset(dataset_root, splits=["val"]).split("train")

    def test_answer_vocab_comes_from_train(self, dataset_root):
        dataset = load_dataset(dataset_root)
        answers = dataset.answer_vocab()
        train_answers = [s.answer for s in dataset.split("train")]
        assert answers.classes == list(dict.fromkeys(train_answers))
        assert answers.encode(train_answers[0]) == 0

    def test_open_only_train_split_has_no_unused_classes(self, generator_config, tmp_path):
        config = generator_config.model_copy(update={"open_fraction": 1.0, "val_count": 0, "test_count": 0})
        generate_dataset(config, seed=2, out_dir=tmp_path)
        dataset = load_dataset(tmp_path, splits=["train"])
        answers = dataset.answer_vocab()
        assert "yes" not in answers and "no" not in answers
        assert len(answers) == len({s.answer for s in dataset.split("train")})

    def test_records_are_flat_and_carry_the_scene(self, dataset_root):
        lines = (dataset_root / "train" / "samples.jsonl").read_text(encoding="utf-8").splitlines()
        records = [json.loads(line) for line in lines]
        assert all(not isinstance(v, (dict, list)) for record in records for v in record.values())
        samples = load_dataset(dataset_root, splits=["train"]).split("train")
        for record, sample in zip(records, samples):
            assert len(sample.scene.objects) == record["object_count"] >= 1
            if sample.template == "object_count":
                assert answer_question(sample.scene, "object_count", {}) == sample.answer

    def test_nested_record_rejected(self, dataset_copy):
        path = dataset_copy / "val" / "samples.jsonl"
        lines = path.read_text(encoding="utf-8").splitlines()
        record = json.loads(lines[0])
        record["scene"] = [{"shape": "square"}]
        lines[0] = json.dumps(record, sort_keys=True)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        _rehash_samples(dataset_copy / "val")
        with pytest.raises(DataCorruptionError, match="flat"):
            load_dataset(dataset_copy, splits=["val"])

    def test_missing_scene_field_rejected(self, dataset_copy):
        path = dataset_copy / "val" / "samples.jsonl"
        lines = path.read_text(encoding="utf-8").splitlines()
        record = json.loads(lines[0])
        del record["object_0_shape"]
        lines[0] = json.dumps(record, sort_keys=True)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        _rehash_samples(dataset_copy / "val")
        with pytest.raises(DataCorruptionError, match="scene fields"):
            load_dataset(dataset_copy, splits=["val"])

    def test_edited_samples_detected(self, dataset_copy):
        path = dataset_copy / "train" / "samples.jsonl"
        path.write_text(path.read_text(encoding="utf-8").replace('"question": "', '"question": "so ', 1), encoding="utf-8")
        with pytest.raises(DataCorruptionError, match="samples.jsonl"):
            load_dataset(dataset_copy)

    def test_edited_image_detected(self, dataset_copy):
        path = dataset_copy / "val" / "images" / "val-000003.ppm"
        data = bytearray(path.read_bytes())
        data[-1] ^= 0xFF
        path.write_bytes(bytes(data))
        with pytest.raises(DataCorruptionError, match="image bytes"):
            load_dataset(dataset_copy)

    def test_missing_image_detected(self, dataset_copy):
        (dataset_copy / "test" / "images" / "test-000000.ppm").unlink()
        with pytest.raises(DataCorruptionError, match="missing"):
            load_dataset(dataset_copy)

    def test_vocabulary_mismatch_detected(self, dataset_copy):
        with open(dataset_copy / "vocab.txt", "a", encoding="utf-8") as handle:
            handle.write("hexagon\n")
        with pytest.raises(DataCorruptionError, match="vocabulary"):
            load_dataset(dataset_copy)

    def test_missing_vocabulary(self, dataset_copy):
        (dataset_copy / "vocab.txt").unlink()
        with pytest.raises(DataCorruptionError):
            load_dataset(dataset_copy)

    def test_manifest_keys_required(self, dataset_copy):
        path = dataset_copy / "train" / "manifest.txt"
        kept = [line for line in path.read_text(encoding="utf-8").splitlines() if not line.startswith("images_sha")]
        path.write_text("\n".join(kept) + "\n", encoding="utf-8")
        with pytest.raises(DataCorruptionError, match="images_sha"):
            read_manifest(path)


# =============================================================================
# Batching
# =============================================================================

class TestBatching:

    def test_order_depends_on_seed_and_epoch(self):
        items = list(range(20))
        first = [x for batch in batch_iter(items, 6, seed=1, epoch=0) for x in batch]
        again = [x for batch in batch_iter(items, 6, seed=1, epoch=0) for x in batch]
        later = [x for batch in batch_iter(items, 6, seed=1, epoch=1) for x in batch]
        assert first == again
        assert first != later
        assert sorted(first) == items

    def test_last_batch_is_partial(self):
        sizes = [len(batch) for batch in batch_iter(list(range(10)), 4, shuffle=False)]
        assert sizes == [4, 4, 2]

    def test_unshuffled_keeps_order(self):
        assert next(batch_iter(list("abcde"), 3, shuffle=False)) == ["a", "b", "c"]

    def test_batch_size_checked(self):
        with pytest.raises(ValueError):
            next(batch_iter([1, 2], 0))

    def test_collate(self, dataset_root, small_model_config):
        dataset = load_dataset(dataset_root)
        answers = dataset.answer_vocab()
        samples = dataset.split("train")[:5]
        batch = collate(samples, dataset.vocab, answers, small_model_config, dtype=np.float32)
        assert batch.images.shape == (5, 16, 16, 3) and batch.images.dtype == np.float32
        assert batch.question_ids.shape == (5, small_model_config.max_question_len)
        assert batch.answer_ids.shape == (5, small_model_config.max_answer_len)
        assert np.all(batch.question_ids[:, 0] == BOS)
        assert np.all(batch.answer_classes >= 0)
        assert batch.sample_ids == [s.sample_id for s in samples]
        first = batch.answer_ids[0]
        assert dataset.vocab.detokenize(first.tolist()) == samples[0].answer
        assert EOS in first.tolist() and first.tolist()[-1] in (EOS, PAD)

    def test_unseen_answer_is_out_of_set(self, dataset_root, small_model_config):
        dataset = load_dataset(dataset_root)
        stranger = VqaSample("x-0", np.zeros((16, 16, 3)), "what is in the upper left", "purple circle", True)
        batch = collate([stranger], dataset.vocab, dataset.answer_vocab(), small_model_config)
        assert batch.answer_classes.tolist() == [OUT_OF_SET]
