"""
Unit tests for confusion counts and metrics.
"""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.checkpoint import Checkpoint
from src.config import HeadKind, Precision, Variant
from src.corpus import Dataset, Defect, TeamLabelRegistry
from src.evaluation import accuracy, confusion, evaluate, macro_f1, mean_label_f1, metrics_report
from src.model import DefectClassifier, EncoderConfig, HeadConfig, predict
from src.tokenizer import Vocab, encode_dataset


@pytest.fixture
def three_samples():
    """Two labels over three samples: P = (2/3, 1), R = (1, 1/2)"""
    truths = np.array([[1, 1], [1, 1], [0, 0]])
    preds = np.array([[1, 1], [1, 0], [1, 0]])
    return preds, truths


def oracle(preds, truths):
    """Loop-based accuracy and macro-F1 from summed counts"""
    n, t = len(truths), len(truths[0])
    tp = [0] * t
    fp = [0] * t
    fn = [0] * t
    tn = [0] * t
    for i in range(n):
        for j in range(t):
            p, y = preds[i][j], truths[i][j]
            if p and y:
                tp[j] += 1
            elif p:
                fp[j] += 1
            elif y:
                fn[j] += 1
            else:
                tn[j] += 1
    acc = (sum(tp) + sum(tn)) / (sum(tp) + sum(tn) + sum(fp) + sum(fn))
    precisions = [tp[j] / (tp[j] + fp[j]) if tp[j] + fp[j] else 0.0 for j in range(t)]
    recalls = [tp[j] / (tp[j] + fn[j]) if tp[j] + fn[j] else 0.0 for j in range(t)]
    mp, mr = sum(precisions) / t, sum(recalls) / t
    f1 = 2 * mp * mr / (mp + mr) if mp + mr else 0.0
    return (tp, fp, fn, tn), acc, f1


@st.composite
def prediction_pairs(draw):
    n = draw(st.integers(min_value=1, max_value=20))
    t = draw(st.integers(min_value=1, max_value=15))
    cells = st.lists(st.lists(st.integers(0, 1), min_size=t, max_size=t), min_size=n, max_size=n)
    return draw(cells), draw(cells)


class TestMetrics:
    """Tests for accuracy and macro-F1"""

    def test_worked_example(self, three_samples):
        """Test accuracy 2/3 and macro-F1 of about 0.7895"""
        c = confusion(*three_samples)
        np.testing.assert_array_equal(c.tp, [2, 1])
        np.testing.assert_array_equal(c.fp, [1, 0])
        np.testing.assert_array_equal(c.fn, [0, 1])
        np.testing.assert_array_equal(c.tn, [0, 1])
        assert accuracy(c) == pytest.approx(2 / 3)
        assert macro_f1(c) == pytest.approx(2 * (5 / 6 * 3 / 4) / (5 / 6 + 3 / 4))
        assert macro_f1(c) == pytest.approx(0.7895, abs=1e-4)

    def test_differs_from_mean_label_f1(self, three_samples):
        """Test the harmonic-of-means F1 differs from the mean of per-label F1"""
        c = confusion(*three_samples)
        assert mean_label_f1(c) == pytest.approx((0.8 + 2 / 3) / 2)
        assert mean_label_f1(c) != pytest.approx(macro_f1(c))

    def test_perfect(self):
        """Test perfect predictions score 1.0"""
        truths = np.array([[1, 0, 1], [0, 1, 0]])
        c = confusion(truths, truths)
        assert accuracy(c) == 1.0
        assert macro_f1(c) == 1.0

    def test_complement(self):
        """Test complementary single-label predictions score 0 accuracy"""
        truths = np.array([[1, 0], [0, 1]])
        assert accuracy(confusion(1 - truths, truths)) == 0.0

    def test_nothing_predicted_nothing_true(self):
        """Test the zero-denominator convention gives F1 of 0"""
        zeros = np.zeros((3, 2), dtype=int)
        c = confusion(zeros, zeros)
        assert macro_f1(c) == 0.0
        assert accuracy(c) == 1.0

    def test_shape_mismatch(self):
        """Test predictions and truths must share a 2-D shape"""
        with pytest.raises(ValueError):
            confusion(np.zeros((2, 3)), np.zeros((3, 2)))
        with pytest.raises(ValueError):
            confusion(np.zeros(3), np.zeros(3))

    def test_empty(self):
        """Test metrics refuse empty input"""
        with pytest.raises(ValueError):
            accuracy(confusion(np.zeros((0, 2)), np.zeros((0, 2))))

    @given(prediction_pairs())
    @settings(max_examples=200, deadline=None)
    def test_matches_oracle(self, pair):
        """Test counts, accuracy and macro-F1 agree with a loop-based oracle"""
        preds, truths = pair
        (tp, fp, fn, tn), acc, f1 = oracle(preds, truths)
        c = confusion(np.array(preds), np.array(truths))
        assert c.tp.tolist() == tp and c.fp.tolist() == fp
        assert c.fn.tolist() == fn and c.tn.tolist() == tn
        assert abs(accuracy(c) - acc) <= 1e-12
        assert abs(macro_f1(c) - f1) <= 1e-12


class TestMetricsReport:
    """Tests for the serialized report"""

    def test_report_fields(self, three_samples):
        """Test the report carries per-label counts and the threshold"""
        report = metrics_report(*three_samples, ["cart", "pricing"], 0.55)
        assert report.n_samples == 3
        assert report.threshold == 0.55
        assert report.per_label[1].label == "pricing"
        assert report.per_label[1].recall == 0.5
        data = report.model_dump()
        assert set(data) >= {"accuracy", "macro_f1", "per_label", "threshold", "n_samples"}


@pytest.fixture
def untrained_checkpoint():
    """An untrained three-label checkpoint"""
    vocab = Vocab(("[PAD]", "[UNK]", "[CLS]", "[SEP]", "cart", "pricing", "search",
                   "price", "wrong", "results", "empty"))
    encoder = EncoderConfig(vocab_size=len(vocab), hidden=8, layers=1, heads=2, max_positions=24)
    head = HeadConfig(HeadKind.LINEAR, 3, 8, 4)
    params = DefectClassifier(encoder, head, seed=2).state_dict()
    return Checkpoint(params, encoder, head, Variant.FUSE_SEP, vocab,
                      TeamLabelRegistry(("cart", "pricing", "search")), Precision.FLOAT64,
                      {"seed": 2})


class TestEvaluate:
    """Tests for evaluate"""

    def test_matches_predictions(self, untrained_checkpoint):
        """Test the report scores the checkpoint's own thresholded predictions"""
        ckpt = untrained_checkpoint
        ds = Dataset(ckpt.registry, (
            Defect("t1", "Price wrong", "cart", frozenset({0, 1})),
            Defect("t2", "Search results empty", "", frozenset({2})),
        ))
        report = evaluate(ckpt, ds, 0.5)
        encoded = encode_dataset(ds, ckpt.vocab, ckpt.variant, ckpt.encoder.max_positions)
        preds = predict(ckpt.logits(encoded), 0.5)
        expected = metrics_report(preds, encoded.targets, list(ckpt.registry.labels), 0.5)
        assert report.n_samples == 2
        assert report.threshold == 0.5
        assert report.accuracy == pytest.approx(expected.accuracy)
        assert report.macro_f1 == pytest.approx(expected.macro_f1)

    def test_registry_mismatch(self, untrained_checkpoint):
        """Test a test set under another registry is refused"""
        ds = Dataset(TeamLabelRegistry(("cart", "pricing")), (Defect("t1", "Price wrong", ""),))
        with pytest.raises(ValueError):
            evaluate(untrained_checkpoint, ds, 0.5)
