"""
Shared fixtures: small model configurations and a generated dataset small
enough to train on in seconds.
"""

import numpy as np
import pytest

from core.config import GeneratorConfig, ModelConfig, TrainConfig
from core.numcore import default_dtype, new_tape
from ingestion.scene_generator import build_vocabulary, generate_dataset

SMALL_IMAGE = 16


@pytest.fixture(autouse=True)
def fresh_tape():
    """Every test starts on an empty gradient tape"""
    new_tape()
    yield


@pytest.fixture
def f64():
    with default_dtype("float64"):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_model() -> ModelConfig:
    return ModelConfig(
        image_size=8,
        patch_size=4,
        d_model=8,
        num_heads=2,
        encoder_layers=1,
        max_question_len=6,
        num_queries=3,
        qformer_layers=1,
        d_state=3,
        conv_width=3,
        cmm_blocks=2,
        decoder_layers=1,
        max_answer_len=4,
    )


@pytest.fixture(scope="session")
def generator_config() -> GeneratorConfig:
    return GeneratorConfig(
        image_size=SMALL_IMAGE,
        train_count=24,
        val_count=8,
        test_count=8,
        noise_level=0.02,
        position_jitter=0,
    )


@pytest.fixture(scope="session")
def dataset_root(tmp_path_factory, generator_config):
    root = tmp_path_factory.mktemp("shapes")
    generate_dataset(generator_config, seed=7, out_dir=root)
    return root


@pytest.fixture(scope="session")
def small_model_config() -> ModelConfig:
    return ModelConfig(
        image_size=SMALL_IMAGE,
        patch_size=4,
        d_model=8,
        num_heads=2,
        encoder_layers=1,
        max_question_len=12,
        num_queries=4,
        qformer_layers=1,
        d_state=4,
        conv_width=3,
        cmm_blocks=1,
        decoder_layers=1,
        max_answer_len=5,
    )


@pytest.fixture
def small_train_config(small_model_config) -> TrainConfig:
    return TrainConfig(
        epochs=2,
        batch_size=8,
        learning_rate=3e-3,
        seed=3,
        precision="float64",
        model=small_model_config,
    )


@pytest.fixture(scope="session")
def small_vocab(generator_config):
    return build_vocabulary(generator_config)
