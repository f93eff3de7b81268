"""
Unit tests for adversarial augmentation.
"""
import math
import re
from collections import defaultdict
from pathlib import Path

import numpy as np
import pytest

from src.augmentation import (Augmenter, augment_dataset, augment_defect, nearest_neighbors, perturb_defect,
                              scored_neighbors)
from src.config import AugmentConfig
from src.corpus import (Dataset, Defect, Provenance, SyntheticCorpusSpec, TeamLabelRegistry,
                        generate_synthetic_corpus)
from src.embeddings import EmbeddingTable, build_embedding_table, load_synonym_groups

BUNDLED_SYNONYMS = Path(__file__).resolve().parent.parent / "data" / "synonyms.json"
WORD = re.compile(r"[^\W_]+")


@pytest.fixture
def toy_table():
    """cos(cost, prices) = 0.9 and cos(cost, banana) = 0.1"""
    return EmbeddingTable(2, {
        "cost": np.array([1.0, 0.0]),
        "prices": np.array([0.9, np.sqrt(0.19)]),
        "banana": np.array([0.1, -np.sqrt(0.99)]),
    })


@pytest.fixture
def ten_word_defect():
    """A ten-word defect where only 'cost' has a close neighbor"""
    return Defect("d1", "The cost is wrong on the tile for our users", "", frozenset({3}))


@pytest.fixture
def audit_setup(registry):
    """A 1500-defect corpus and a table built from it with the bundled synonyms"""
    corpus = generate_synthetic_corpus(SyntheticCorpusSpec.default(1500, seed=21, registry=registry),
                                       registry)
    table = build_embedding_table(corpus, load_synonym_groups(str(BUNDLED_SYNONYMS)), seed=21)
    return corpus, table


class TestNearestNeighbors:
    """Tests for nearest_neighbors"""

    def test_threshold(self, toy_table):
        """Test only neighbors at or above the cosine floor are returned"""
        assert nearest_neighbors("cost", toy_table, 10, 0.8) == ["prices"]

    def test_ordering_and_k(self, toy_table):
        """Test neighbors come best first and k caps the list"""
        assert nearest_neighbors("cost", toy_table, 10, -1.0) == ["prices", "banana"]
        assert nearest_neighbors("cost", toy_table, 1, -1.0) == ["prices"]

    def test_absent_word(self, toy_table):
        """Test a word outside the table has no neighbors"""
        assert nearest_neighbors("apple", toy_table, 10, 0.8) == []

    def test_excludes_self_and_case(self, toy_table):
        """Test the query never appears among its neighbors"""
        assert "cost" not in nearest_neighbors("COST", toy_table, 10, -1.0)

    def test_invalid_k(self, toy_table):
        """Test k must be positive"""
        with pytest.raises(ValueError):
            scored_neighbors("cost", toy_table, 0, 0.8)


class TestPerturbDefect:
    """Tests for perturb_defect"""

    def test_budget_one_word(self, toy_table, ten_word_defect):
        """Test a ten-word defect at rate 0.1 gets exactly one swap per copy"""
        cfg = AugmentConfig(perturb_rate=0.1, copies_per_defect=2)
        outcome = perturb_defect(ten_word_defect, cfg, toy_table, np.random.default_rng(0))
        assert [c.id for c in outcome.copies] == ["d1-aug1", "d1-aug2"]
        assert all(c.title == "The prices is wrong on the tile for our users" for c in outcome.copies)
        assert len(outcome.swaps) == 2
        assert outcome.swaps[0].original == "cost" and outcome.swaps[0].position == 1
        assert outcome.shortfall == 0

    def test_labels_preserved(self, toy_table, ten_word_defect):
        """Test copies keep the source labels and are marked augmented"""
        outcome = perturb_defect(ten_word_defect, AugmentConfig(), toy_table, np.random.default_rng(0))
        for copy in outcome.copies:
            assert copy.labels == ten_word_defect.labels
            assert copy.provenance is Provenance.AUGMENTED

    def test_shortfall_recorded(self, toy_table, ten_word_defect):
        """Test a budget above the qualifying positions is recorded"""
        outcome = perturb_defect(ten_word_defect, AugmentConfig(perturb_rate=0.25), toy_table,
                                 np.random.default_rng(0))
        assert outcome.shortfall == 2
        assert len(outcome.swaps) == 2

    def test_case_kept(self, toy_table):
        """Test a capitalized word gets a capitalized replacement"""
        d = Defect("d2", "Cost shown twice", "")
        outcome = perturb_defect(d, AugmentConfig(copies_per_defect=1), toy_table, np.random.default_rng(0))
        assert outcome.copies[0].title == "Prices shown twice"

    def test_no_neighbors_skipped(self, toy_table):
        """Test a defect without swappable words yields no copies"""
        d = Defect("d3", "Spinner stuck", "forever")
        outcome = perturb_defect(d, AugmentConfig(), toy_table, np.random.default_rng(0))
        assert outcome.skipped
        assert outcome.copies == []


class TestAugmenter:
    """Tests for Augmenter"""

    def test_sample_size_and_order(self, toy_table):
        """Test floor(fraction * N) defects are sampled and copies follow originals"""
        registry = TeamLabelRegistry(("cart", "pricing"))
        ds = Dataset(registry, tuple(Defect(f"d{i}", f"cost issue {i}", "", frozenset({1}))
                                     for i in range(10)))
        augmented, report = Augmenter(AugmentConfig(sample_fraction=0.35), toy_table).augment(ds)
        assert report["n_sampled"] == 3
        assert report["n_copies"] == 6
        assert augmented.defects[:10] == ds.defects
        assert len(augmented) == 16

    def test_deterministic(self, audit_setup):
        """Test the same seed gives the same copies"""
        corpus, table = audit_setup
        small = corpus.with_defects(corpus.defects[:200])
        a, _ = Augmenter(AugmentConfig(seed=4), table).augment(small)
        b, _ = Augmenter(AugmentConfig(seed=4), table, workers=3).augment(small)
        assert a.defects == b.defects

    def test_seed_changes_sample(self, audit_setup):
        """Test different seeds sample differently"""
        corpus, table = audit_setup
        small = corpus.with_defects(corpus.defects[:200])
        a, _ = Augmenter(AugmentConfig(seed=4), table).augment(small)
        b, _ = Augmenter(AugmentConfig(seed=5), table).augment(small)
        assert a.defects != b.defects

    def test_soundness_audit(self, audit_setup):
        """Test every recorded swap over a large run meets cosine, budget and label rules"""
        corpus, table = audit_setup
        cfg = AugmentConfig(sample_fraction=1.0, copies_per_defect=1, seed=8)
        augmented, report = Augmenter(cfg, table).augment(corpus)
        copies = [d for d in augmented if d.provenance is Provenance.AUGMENTED]
        assert len(copies) >= 1000

        sources = {d.id: d for d in corpus}
        swaps_per_copy = defaultdict(list)
        for swap in report["swaps"]:
            assert swap["cosine"] >= 0.8
            assert table.cosine(swap["original"], swap["replacement"]) >= 0.8
            swaps_per_copy[swap["copy_id"]].append(swap)

        for copy in copies:
            source = sources[copy.id.rsplit("-aug", 1)[0]]
            assert copy.labels == source.labels
            words = WORD.findall(source.title) + WORD.findall(source.description)
            qualifying = sum(1 for w in words if nearest_neighbors(w, table, cfg.neighbor_k, cfg.min_cosine))
            budget = max(1, math.ceil(cfg.perturb_rate * len(words)))
            assert len(swaps_per_copy[copy.id]) == min(budget, qualifying)

    def test_cost_to_prices(self, audit_setup):
        """Test the bundled synonyms make 'prices' a neighbor of 'cost'"""
        _, table = audit_setup
        assert "prices" in nearest_neighbors("cost", table, 10, 0.8)

    def test_statistics(self, toy_table, ten_word_defect):
        """Test worker counters"""
        registry = TeamLabelRegistry(("cart", "checkout", "search", "pricing"))
        ds = Dataset(registry, (ten_word_defect, Defect("d9", "Spinner stuck", "", frozenset({0}))))
        augmenter = Augmenter(AugmentConfig(sample_fraction=1.0), toy_table)
        augmenter.augment(ds)
        stats = augmenter.get_statistics()
        assert stats["defects_sampled"] == 2
        assert stats["defects_skipped"] == 1
        assert stats["copies_emitted"] == 2

    def test_copy_id_collision(self, toy_table, ten_word_defect):
        """Test a copy id already present in the dataset is made unique"""
        registry = TeamLabelRegistry(("cart", "checkout", "search", "pricing"))
        clash = Defect("d1-aug1", "Spinner stuck", "", frozenset({0}))
        ds = Dataset(registry, (ten_word_defect, clash))
        augmented, report = Augmenter(AugmentConfig(sample_fraction=1.0), toy_table).augment(ds)
        ids = [d.id for d in augmented]
        assert ids == ["d1", "d1-aug1", "d1-aug1x", "d1-aug2"]
        assert {s["copy_id"] for s in report["swaps"]} == {"d1-aug1x", "d1-aug2"}


class TestAugmentFunctions:
    """Tests for augment_defect and augment_dataset"""

    def test_augment_defect_copies(self, toy_table, ten_word_defect):
        """Test augment_defect returns the perturbed copies"""
        copies = augment_defect(ten_word_defect, AugmentConfig(), toy_table, np.random.default_rng(0))
        assert [c.id for c in copies] == ["d1-aug1", "d1-aug2"]

    def test_augment_defect_skip(self, toy_table):
        """Test a defect without swappable words gives an empty list"""
        d = Defect("d3", "Spinner stuck", "forever")
        assert augment_defect(d, AugmentConfig(), toy_table, np.random.default_rng(0)) == []

    def test_augment_dataset_matches_worker(self, toy_table):
        """Test augment_dataset grows the dataset like the worker does"""
        registry = TeamLabelRegistry(("cart", "pricing"))
        ds = Dataset(registry, tuple(Defect(f"d{i}", f"cost issue {i}", "", frozenset({1}))
                                     for i in range(10)))
        cfg = AugmentConfig(sample_fraction=0.5, seed=3)
        expected, _ = Augmenter(cfg, toy_table).augment(ds)
        assert augment_dataset(ds, cfg, toy_table).defects == expected.defects
