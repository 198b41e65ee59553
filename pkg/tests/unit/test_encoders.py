"""
Tests for the vocabulary, the patch-embedding image encoder and the text
encoder, checked against a straight numpy forward pass.
"""

import numpy as np
import pytest
from scipy.special import erf

from core.encoders import (
    BOS,
    EOS,
    PAD,
    UNK,
    ImageEncoder,
    TextEncoder,
    TokenSeq,
    Vocabulary,
    encode_image,
    encode_text,
    pad_batch,
    patchify,
)
from core.errors import ContractError
from core.numcore import Tensor

pytestmark = pytest.mark.unit


@pytest.fixture
def vocab():
    return Vocabulary.from_words("is there a red square in the upper left".split())


# =============================================================================
# Vocabulary
# =============================================================================

class TestVocabulary:

    def test_reserved_ids(self, vocab):
        assert vocab.tokens[:4] == ["<pad>", "<bos>", "<eos>", "<unk>"]
        assert (PAD, BOS, EOS, UNK) == (0, 1, 2, 3)

    def test_round_trip(self, vocab):
        seq = vocab.tokenize("is there a square")
        assert seq.ids[0] == BOS and seq.ids[-1] == EOS
        assert vocab.detokenize(seq) == "is there a square"

    def test_empty_text(self, vocab):
        assert vocab.tokenize("").ids == [BOS, EOS]

    def test_unknown_word_counts(self, vocab):
        seq = vocab.tokenize("is there a hexagon")
        assert seq.ids[4] == UNK
        assert vocab.unk_count == 1

    def test_max_len_enforced(self, vocab):
        with pytest.raises(ContractError):
            vocab.tokenize("is there a red square", max_len=4)

    def test_duplicates_rejected(self):
        with pytest.raises(ContractError):
            Vocabulary(["<pad>", "<bos>", "<eos>", "<unk>", "a", "a"])

    def test_save_load(self, vocab, tmp_path):
        vocab.save(tmp_path / "vocab.txt")
        loaded = Vocabulary.load(tmp_path / "vocab.txt")
        assert loaded.tokens == vocab.tokens
        assert loaded.sha256() == vocab.sha256()

    def test_pad_only_as_suffix(self):
        with pytest.raises(ContractError):
            TokenSeq([BOS, PAD, 5]).validate(10)

    def test_pad_batch(self):
        ids = pad_batch([TokenSeq([BOS, 5, EOS]), TokenSeq([BOS, EOS])], 4)
        np.testing.assert_array_equal(ids, [[BOS, 5, EOS, PAD], [BOS, EOS, PAD, PAD]])


# =============================================================================
# Image encoder
# =============================================================================

class TestImageEncoder:

    def test_token_count(self, f64, tiny_model, rng):
        encoder = ImageEncoder(tiny_model, rng)
        out = encoder(rng.uniform(size=(2, 8, 8, 3)))
        assert out.tokens.shape == (2, 4, tiny_model.d_model)
        assert out.pooled.shape == (2, tiny_model.d_model)

    @pytest.mark.parametrize("size,patch", [(8, 4), (12, 4), (16, 8), (6, 3)])
    def test_patch_count_formula(self, size, patch):
        patches = patchify(np.zeros((1, size, size, 3)), patch)
        assert patches.shape == (1, (size // patch) ** 2, patch * patch * 3)

    def test_one_patch_image(self, f64, tiny_model, rng):
        config = tiny_model.model_copy(update={"image_size": 4})
        out = encode_image(rng.uniform(size=(4, 4, 3)), ImageEncoder(config, rng))
        assert out.tokens.shape[1] == 1

    def test_indivisible_size_rejected(self, f64, tiny_model, rng):
        with pytest.raises(ContractError, match="divisible"):
            ImageEncoder(tiny_model, rng)(np.zeros((1, 10, 8, 3)))

    def test_pixel_range_checked(self, f64, tiny_model, rng):
        with pytest.raises(ContractError):
            ImageEncoder(tiny_model, rng)(np.full((1, 8, 8, 3), 2.0))

    def test_patch_permutation_permutes_projections(self, f64, tiny_model, rng):
        encoder = ImageEncoder(tiny_model, rng)
        image = rng.uniform(size=(1, 8, 8, 3))
        swapped = image.copy()
        swapped[0, :4, :4], swapped[0, :4, 4:] = image[0, :4, 4:], image[0, :4, :4]
        a = encoder.project_patches(image).data
        b = encoder.project_patches(swapped).data
        np.testing.assert_allclose(b[0, [1, 0, 2, 3]], a[0], atol=1e-12)

    def test_projection_matches_per_patch_oracle(self, f64, tiny_model, rng):
        encoder = ImageEncoder(tiny_model, rng)
        image = rng.uniform(size=(1, 8, 8, 3))
        projected = encoder.project_patches(image).data
        weight, bias = encoder.patch_proj.weight.data, encoder.patch_proj.bias.data
        for index, (r, c) in enumerate([(0, 0), (0, 4), (4, 0), (4, 4)]):
            flat = image[0, r:r + 4, c:c + 4].reshape(-1)
            np.testing.assert_allclose(projected[0, index], flat @ weight + bias, atol=1e-12)


# =============================================================================
# Text encoder
# =============================================================================

class TestTextEncoder:

    def test_single_token(self, f64, tiny_model, rng):
        out = encode_text([BOS], TextEncoder(tiny_model, 10, rng))
        assert out.tokens.shape == (1, 1, tiny_model.d_model)
        np.testing.assert_allclose(out.pooled.data[0], out.tokens.data[0, 0])

    def test_pad_suffix_invariance(self, f64, tiny_model, rng):
        encoder = TextEncoder(tiny_model, 10, rng)
        seq = TokenSeq([BOS, 5, 6, EOS])
        short = encoder(pad_batch([seq], 4)).pooled.data
        long = encoder(pad_batch([seq], 9)).pooled.data
        np.testing.assert_allclose(short, long, atol=1e-10)

    def test_empty_sequence_rejected(self, f64, tiny_model, rng):
        encoder = TextEncoder(tiny_model, 10, rng)
        with pytest.raises(ContractError):
            encode_text([], encoder)
        with pytest.raises(ContractError, match="batch index 1"):
            encoder(np.array([[BOS, EOS], [PAD, PAD]]))

    def test_out_of_vocabulary_id_rejected(self, f64, tiny_model, rng):
        with pytest.raises(ContractError):
            encode_text([BOS, 42], TextEncoder(tiny_model, 10, rng))

    def test_mask_marks_pad(self, f64, tiny_model, rng):
        out = TextEncoder(tiny_model, 10, rng)(np.array([[BOS, 5, EOS, PAD]]))
        np.testing.assert_array_equal(out.mask, [[True, True, True, False]])
        assert isinstance(out.tokens, Tensor)

    def test_forward_matches_numpy_oracle(self, f64, tiny_model, rng):
        encoder = TextEncoder(tiny_model, 10, rng)
        ids = np.array([[BOS, 5, 6, EOS, PAD], [BOS, 7, EOS, PAD, PAD]])
        out = encoder(ids)
        mask = ids != PAD

        length, dim = ids.shape[1], tiny_model.d_model
        angles = np.arange(length)[:, None] / 10000.0 ** (2 * (np.arange(dim) // 2) / dim)
        positions = np.where(np.arange(dim) % 2 == 0, np.sin(angles), np.cos(angles))

        x = encoder.token_embedding.weight.data[ids] + positions
        for layer in encoder.layers:
            x = x + _np_attention(_np_layer_norm(x, layer.norm1), layer.attn, mask)
            hidden = _np_linear(_np_layer_norm(x, layer.norm2), layer.ffn.fc1)
            x = x + _np_linear(0.5 * hidden * (1.0 + erf(hidden / np.sqrt(2.0))), layer.ffn.fc2)
        tokens = _np_layer_norm(x, encoder.final_norm)
        pooled = (tokens * mask[:, :, None]).sum(axis=1) / mask.sum(axis=1, keepdims=True)

        np.testing.assert_allclose(out.tokens.data, tokens, atol=1e-10)
        np.testing.assert_allclose(out.pooled.data, pooled, atol=1e-10)
        single = encode_text([BOS, 7, EOS], encoder)
        np.testing.assert_allclose(single.pooled.data[0], pooled[1], atol=1e-10)


def _np_linear(x, layer):
    out = x @ layer.weight.data
    return out if layer.bias is None else out + layer.bias.data


def _np_layer_norm(x, norm):
    centered = x - x.mean(axis=-1, keepdims=True)
    var = (centered ** 2).mean(axis=-1, keepdims=True)
    return centered / np.sqrt(var + norm.eps) * norm.gain.data + norm.bias.data


def _np_attention(x, attn, key_mask):
    batch, length, dim = x.shape
    heads, head_dim = attn.num_heads, attn.head_dim

    def split(t):
        return t.reshape(batch, length, heads, head_dim).transpose(0, 2, 1, 3)

    q, k, v = (split(_np_linear(x, proj)) for proj in (attn.q_proj, attn.k_proj, attn.v_proj))
    scores = q @ k.transpose(0, 1, 3, 2) / np.sqrt(head_dim)
    scores = np.where(key_mask[:, None, None, :], scores, -np.inf)
    weights = np.exp(scores - scores.max(axis=-1, keepdims=True))
    weights /= weights.sum(axis=-1, keepdims=True)
    merged = (weights @ v).transpose(0, 2, 1, 3).reshape(batch, length, dim)
    return _np_linear(merged, attn.o_proj)
