"""
Unit tests for the vocabulary and encoder input construction.
"""
import numpy as np
import pytest

from src.config import Variant
from src.corpus import Dataset, Defect, TeamLabelRegistry
from src.tokenizer import (CLS_ID, PAD_ID, SEP_ID, UNK_ID, Vocab, build_vocab, encode,
                           encode_baseline, encode_dataset, encode_fuse_nosep, encode_fuse_sep,
                           tokenize)


@pytest.fixture
def vocab():
    """Reserved ids plus price=4 showing=5 wrong=6 cart=7 checkout=8"""
    return Vocab(("[PAD]", "[UNK]", "[CLS]", "[SEP]", "price", "showing", "wrong", "cart", "checkout"))


@pytest.fixture
def tiny_dataset():
    """Two defects over a two-label registry"""
    registry = TeamLabelRegistry(("cart", "checkout"))
    return Dataset(registry, (Defect("d1", "Price wrong", "price shown twice", frozenset({0})),
                              Defect("d2", "Wrong total", "", frozenset({1}))))


class TestTokenize:
    """Tests for tokenize"""

    def test_lowercase_and_punctuation(self):
        """Test case folding and punctuation removal"""
        assert tokenize("Price WRONG, on the tile!") == ["price", "wrong", "on", "the", "tile"]

    def test_underscores_split(self):
        """Test underscores act as separators"""
        assert tokenize("unit_price") == ["unit", "price"]

    def test_empty(self):
        """Test empty text gives no tokens"""
        assert tokenize("  ... ") == []


class TestVocab:
    """Tests for Vocab and build_vocab"""

    def test_reserved_ids(self, vocab):
        """Test reserved tokens hold ids 0..3 and unknown words map to [UNK]"""
        assert (PAD_ID, UNK_ID, CLS_ID, SEP_ID) == (0, 1, 2, 3)
        assert vocab.id("[CLS]") == CLS_ID
        assert vocab.id("banana") == UNK_ID

    def test_must_start_with_reserved(self):
        """Test a vocab without the reserved prefix is rejected"""
        with pytest.raises(ValueError):
            Vocab(("cart", "[PAD]", "[UNK]", "[CLS]", "[SEP]"))

    def test_frequency_order(self, tiny_dataset):
        """Test tokens are ranked by frequency then lexicographically"""
        built = build_vocab(tiny_dataset)
        assert built.tokens[4:6] == ("price", "wrong")
        assert built.tokens[6:] == tuple(sorted(built.tokens[6:]))

    def test_min_freq_and_max_size(self, tiny_dataset):
        """Test rare tokens are dropped and size is capped"""
        assert build_vocab(tiny_dataset, min_freq=2).tokens[4:] == ("price", "wrong")
        assert len(build_vocab(tiny_dataset, max_size=5)) == 5

    def test_label_names_included(self, tiny_dataset):
        """Test label names are appended for fused inputs"""
        built = build_vocab(tiny_dataset, include_label_names=True)
        assert "cart" in built and "checkout" in built

    def test_file_round_trip(self, vocab, tmp_path):
        """Test save then from_file keeps ids and hash"""
        path = tmp_path / "vocab.json"
        vocab.save(str(path))
        loaded = Vocab.from_file(str(path))
        assert loaded == vocab
        assert loaded.vocab_hash() == vocab.vocab_hash()

    def test_empty_corpus(self):
        """Test building from a corpus without tokens fails"""
        registry = TeamLabelRegistry(("cart", "checkout"))
        with pytest.raises(ValueError):
            build_vocab(Dataset(registry, (Defect("d1", "...", ""),)))


class TestEncode:
    """Tests for the three input variants"""

    def test_fuse_sep_layout(self, vocab):
        """Test label block, separator and defect segment"""
        enc = encode_fuse_sep(["cart", "checkout"], "price showing wrong", vocab, 10)
        np.testing.assert_array_equal(enc.token_ids, [2, 7, 8, 3, 4, 5, 6, 3, 0, 0])
        np.testing.assert_array_equal(enc.segment_ids, [0, 0, 0, 0, 1, 1, 1, 1, 0, 0])
        np.testing.assert_array_equal(enc.attention_mask, [1, 1, 1, 1, 1, 1, 1, 1, 0, 0])

    def test_fuse_nosep_layout(self, vocab):
        """Test labels run straight into the defect tokens"""
        enc = encode_fuse_nosep(["cart", "checkout"], "price showing wrong", vocab, 10)
        np.testing.assert_array_equal(enc.token_ids, [2, 7, 8, 4, 5, 6, 3, 0, 0, 0])
        assert not enc.segment_ids.any()

    def test_baseline_truncates_defect(self, vocab):
        """Test defect tokens are cut from the end to fit"""
        enc = encode_baseline("price wrong price wrong", vocab, 4)
        np.testing.assert_array_equal(enc.token_ids, [2, 4, 6, 3])

    def test_fused_keeps_labels_when_truncating(self, vocab):
        """Test truncation never removes label tokens"""
        enc = encode_fuse_sep(["cart", "checkout"], "price wrong price", vocab, 6)
        np.testing.assert_array_equal(enc.token_ids, [2, 7, 8, 3, 4, 3])

    def test_empty_defect(self, vocab):
        """Test an empty defect still gets the label block"""
        enc = encode_fuse_nosep(["cart", "checkout"], "", vocab, 6)
        np.testing.assert_array_equal(enc.token_ids, [2, 7, 8, 3, 0, 0])

    def test_sep_counts(self, vocab):
        """Test fuse_sep has two [SEP] tokens and the other variants one"""
        for variant, expected in ((Variant.FUSE_SEP, 2), (Variant.FUSE_NOSEP, 1), (Variant.BASELINE, 1)):
            enc = encode(variant, "price wrong", vocab, 12, ["cart", "checkout"])
            assert (enc.token_ids == SEP_ID).sum() == expected

    def test_labels_too_long(self, vocab):
        """Test an error when the label block cannot fit"""
        with pytest.raises(ValueError, match="do not fit"):
            encode_fuse_sep(["cart", "checkout"], "price", vocab, 4)

    def test_fused_needs_label_texts(self, vocab):
        """Test fused variants require the label texts"""
        with pytest.raises(ValueError):
            encode(Variant.FUSE_SEP, "price", vocab, 8)

    def test_unknown_words(self, vocab):
        """Test out-of-vocabulary words become [UNK]"""
        enc = encode_baseline("banana price", vocab, 6)
        np.testing.assert_array_equal(enc.token_ids[:4], [2, 1, 4, 3])


class TestEncodeDataset:
    """Tests for encode_dataset"""

    def test_shapes_and_targets(self, tiny_dataset):
        """Test stacked inputs align with the label matrix"""
        vocab = build_vocab(tiny_dataset, include_label_names=True)
        enc = encode_dataset(tiny_dataset, vocab, Variant.FUSE_SEP, 16)
        assert enc.token_ids.shape == (2, 16)
        np.testing.assert_array_equal(enc.targets, [[1, 0], [0, 1]])
        assert enc.vocab_hash == vocab.vocab_hash()
        assert len(enc.take(np.array([1]))) == 1
