"""
Unit tests for the embedding table.
"""
import json

import numpy as np
import pytest

from src.corpus import DatasetError
from src.embeddings import (EmbeddingTable, build_embedding_table, load_embedding_table,
                            load_synonym_groups, save_embedding_table)


@pytest.fixture
def toy_table():
    """cost, prices and banana in two dimensions"""
    return EmbeddingTable(2, {
        "cost": np.array([1.0, 0.0]),
        "Prices": np.array([0.9, np.sqrt(0.19)]),
        "banana": np.array([0.1, -np.sqrt(0.99)]),
    })


@pytest.fixture
def synonyms_file(tmp_path):
    """Two synonym groups on disk"""
    path = tmp_path / "synonyms.json"
    path.write_text(json.dumps([["cost", "prices", "price"], ["wrong", "incorrect"]]))
    return path


class TestEmbeddingTable:
    """Tests for EmbeddingTable"""

    def test_case_insensitive(self, toy_table):
        """Test keys are lowercased"""
        assert "PRICES" in toy_table
        assert len(toy_table) == 3

    def test_cosine(self, toy_table):
        """Test cosine similarity of stored vectors"""
        assert toy_table.cosine("cost", "prices") == pytest.approx(0.9)
        assert toy_table.cosine("cost", "banana") == pytest.approx(0.1)

    def test_similarities_absent_word(self, toy_table):
        """Test absent words have no similarity row"""
        assert toy_table.similarities("apple") is None

    @pytest.mark.parametrize("vector", [np.zeros(2), np.array([1.0, np.nan]), np.ones(3)])
    def test_bad_vectors(self, vector):
        """Test zero, non-finite and wrong-shaped vectors are refused"""
        with pytest.raises(ValueError):
            EmbeddingTable(2, {"word": vector})


class TestEmbeddingFiles:
    """Tests for embedding table files"""

    def test_round_trip(self, toy_table, tmp_path):
        """Test save then load keeps every vector"""
        path = tmp_path / "emb.txt"
        save_embedding_table(toy_table, str(path))
        loaded = load_embedding_table(str(path))
        assert loaded.dim == 2
        for word in ("cost", "prices", "banana"):
            np.testing.assert_array_equal(loaded.vector(word), toy_table.vector(word))

    def test_bad_header(self, tmp_path):
        """Test a malformed header is reported on line 1"""
        path = tmp_path / "emb.txt"
        path.write_text("two dims\n")
        with pytest.raises(DatasetError) as info:
            load_embedding_table(str(path))
        assert info.value.line == 1

    def test_short_row(self, tmp_path):
        """Test a row with too few values names its line"""
        path = tmp_path / "emb.txt"
        path.write_text("2 2\ncost 1.0 0.0\nprices 0.5\n")
        with pytest.raises(DatasetError) as info:
            load_embedding_table(str(path))
        assert info.value.line == 3

    def test_synonym_groups(self, synonyms_file):
        """Test synonym groups load lowercased"""
        assert load_synonym_groups(str(synonyms_file))[1] == ["wrong", "incorrect"]

    def test_synonym_groups_need_two_words(self, tmp_path):
        """Test singleton groups are refused"""
        path = tmp_path / "synonyms.json"
        path.write_text(json.dumps([["alone"]]))
        with pytest.raises(DatasetError):
            load_synonym_groups(str(path))


class TestBuildEmbeddingTable:
    """Tests for build_embedding_table"""

    def test_synonyms_are_close(self, small_corpus, synonyms_file):
        """Test synonym group members clear the augmentation cosine"""
        table = build_embedding_table(small_corpus, load_synonym_groups(str(synonyms_file)), seed=1)
        assert table.cosine("cost", "prices") == pytest.approx(1 / 1.04)
        assert table.cosine("wrong", "incorrect") == pytest.approx(1 / 1.04)
        assert table.cosine("cost", "wrong") < 0.8

    def test_corpus_words_present(self, small_corpus):
        """Test every corpus word gets a unit vector"""
        table = build_embedding_table(small_corpus, seed=1)
        assert "basket" in table or "subtotal" in table
        for word in ("screen", "page"):
            if word in table:
                assert np.linalg.norm(table.vector(word)) == pytest.approx(1.0)

    def test_deterministic(self, small_corpus, synonyms_file):
        """Test the same corpus and seed give the same table"""
        groups = load_synonym_groups(str(synonyms_file))
        a = build_embedding_table(small_corpus, groups, seed=2)
        b = build_embedding_table(small_corpus, groups, seed=2)
        np.testing.assert_array_equal(a.vector("cost"), b.vector("cost"))
        np.testing.assert_array_equal(a.vector("page"), b.vector("page"))

    def test_group_too_large(self, small_corpus):
        """Test a group must fit in the embedding dimension"""
        with pytest.raises(ValueError):
            build_embedding_table(small_corpus, [["a", "b", "c"]], dim=3)
