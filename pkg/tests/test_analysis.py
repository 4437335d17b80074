import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import calinski_harabasz_score as sk_ch

from clxabsa.analysis import (
    CHResult,
    EvalReport,
    PCAPoint,
    SpaceSample,
    calinski_harabasz,
    calinski_harabasz_score,
    micro_f1,
    pca_2d,
    pca_project,
    read_pca_csv,
    sentence_representation,
    sentence_representations,
    write_pca_csv,
)
from clxabsa.corpus import AnnotatedSentence
from clxabsa.tagging import Sentiment, SpanAnnotation
from oracles import ch_oracle, f1_oracle, pca_oracle

POS, NEU, NEG = Sentiment.POS, Sentiment.NEU, Sentiment.NEG


def random_spans(rng, n):
    return [SpanAnnotation(int(a), int(a + rng.integers(0, 3)), rng.choice([POS, NEU, NEG]))
            for a in rng.integers(0, 6, size=n)]


class TestMicroF1:
    def test_perfect(self):
        gold = {"a": [(1, 1, POS)], "b": [(0, 2, NEG), (4, 4, NEU)]}
        assert micro_f1(gold, gold).micro_f1 == 1.0

    def test_sentiment_flip_is_wrong(self):
        rep = micro_f1({"a": [(1, 1, NEG)]}, {"a": [(1, 1, POS)]})
        assert rep.micro_f1 == 0.0
        assert (rep.true_positives, rep.false_positives, rep.false_negatives) == (0, 1, 1)

    def test_boundary_mismatch_is_wrong(self):
        assert micro_f1({"a": [(1, 2, POS)]}, {"a": [(1, 1, POS)]}).micro_f1 == 0.0

    def test_counts(self):
        rep = micro_f1([("a", [(0, 0, POS), (2, 2, POS)]), ("b", [])], [("a", [(0, 0, POS)]), ("b", [(1, 1, NEU)])])
        assert (rep.true_positives, rep.false_positives, rep.false_negatives) == (1, 1, 1)
        assert rep.precision == rep.recall == rep.micro_f1 == 0.5

    def test_no_spans_anywhere(self):
        assert micro_f1({"a": []}, {"a": []}).micro_f1 == 0.0

    def test_misaligned_ids(self):
        with pytest.raises(ValueError, match="align"):
            micro_f1({"a": []}, {"b": []})

    def test_duplicate_ids(self):
        with pytest.raises(ValueError, match="duplicate"):
            micro_f1([("a", []), ("a", [])], [("a", [])])

    def test_per_language(self):
        rep = micro_f1({"a": [(0, 0, POS)], "b": []}, {"a": [(0, 0, POS)], "b": [(0, 0, NEG)]},
                       {"a": "en", "b": "fr"})
        assert rep.per_language["en"]["micro_f1"] == 1.0
        assert rep.per_language["fr"]["false_negatives"] == 1
        assert EvalReport(**{**rep.to_dict()}).to_json() == rep.to_json()

    @settings(max_examples=500, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_matches_bruteforce_oracle(self, seed):
        rng = np.random.default_rng(seed)
        ids = [f"s{i}" for i in range(rng.integers(1, 5))]
        gold = {i: random_spans(rng, rng.integers(0, 4)) for i in ids}
        pred = {i: random_spans(rng, rng.integers(0, 4)) for i in ids}
        for i in ids:
            if gold[i] and rng.random() < 0.5:
                pred[i] = pred[i] + [gold[i][0]]
        assert micro_f1(pred, gold).micro_f1 == f1_oracle(pred, gold)


class TestRepresentations:
    def test_mean_pooling(self, tiny_tagger):
        s = AnnotatedSentence("a", "en", ["the", "pizza", "was", "great"])
        rep = sentence_representation(tiny_tagger, s)
        hidden, _ = tiny_tagger.encode([s.tokens])
        np.testing.assert_allclose(rep.representation, hidden[0].mean(0).detach().double().numpy(), atol=1e-6)

    def test_one_token_and_duplicates(self, tiny_tagger):
        one = AnnotatedSentence("a", "en", ["pizza"])
        sents = [one, AnnotatedSentence("b", "en", ["pizza"]), AnnotatedSentence("c", "xx", ["the", "soup", "."])]
        reps = sentence_representations(tiny_tagger, sents)
        hidden, _ = tiny_tagger.encode([["pizza"]])
        np.testing.assert_allclose(reps[0].representation, hidden[0, 0].detach().numpy(), atol=1e-6)
        np.testing.assert_array_equal(reps[0].representation, reps[1].representation)
        assert [r.language for r in reps] == ["en", "en", "xx"]

    def test_zero_hidden_states(self, tiny_tagger):
        with torch.no_grad():
            for p in tiny_tagger.encoder.parameters():
                p.zero_()
        rep = sentence_representation(tiny_tagger, AnnotatedSentence("a", "en", ["x", "y"]))
        np.testing.assert_array_equal(rep.representation, 0.0)


def clustered(rng, n_clusters=4, per=10, dim=5):
    X = np.concatenate([rng.normal(loc=rng.normal(scale=3, size=dim), size=(per, dim)) for _ in range(n_clusters)])
    labels = np.repeat(np.arange(n_clusters), per)
    return X, labels


class TestCalinskiHarabasz:
    def test_zero_within_scatter_is_infinite(self):
        X = np.array([[0, 0]] * 3 + [[1, 1]] * 3, dtype=float)
        assert calinski_harabasz_score(X, [0, 0, 0, 1, 1, 1]) == CHResult(math.inf, True)

    def test_identical_points_are_zero(self):
        X = np.ones((6, 3))
        assert calinski_harabasz_score(X, [0, 0, 0, 1, 1, 1]) == CHResult(0.0, True)

    def test_forty_points_four_clusters(self):
        X, labels = clustered(np.random.default_rng(0))
        got = calinski_harabasz_score(X, labels)
        assert not got.degenerate
        assert got.value == pytest.approx(ch_oracle(X, list(labels)), rel=1e-9)
        assert got.value == pytest.approx(sk_ch(X, labels), rel=1e-9)

    @pytest.mark.parametrize("seed", range(100))
    def test_random_oracle(self, seed):
        rng = np.random.default_rng(seed)
        X, labels = clustered(rng, rng.integers(2, 5), rng.integers(3, 8), rng.integers(1, 6))
        assert calinski_harabasz_score(X, labels).value == pytest.approx(ch_oracle(X, list(labels)), rel=1e-9)

    @pytest.mark.parametrize("seed", range(20))
    def test_invariances(self, seed):
        rng = np.random.default_rng(100 + seed)
        X, labels = clustered(rng, 3, 6, 4)
        base = calinski_harabasz_score(X, labels).value
        q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
        moved = X @ q + rng.normal(size=4) * 10
        relabeled = np.array(["c", "a", "b"])[labels]
        assert calinski_harabasz_score(moved, labels).value == pytest.approx(base, rel=1e-9)
        assert calinski_harabasz_score(X, relabeled).value == pytest.approx(base, rel=1e-9)

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            calinski_harabasz_score(np.ones((4, 2)), [0, 0, 0, 0])
        with pytest.raises(ValueError):
            calinski_harabasz_score(np.ones((2, 2)), [0, 1])
        with pytest.raises(ValueError):
            calinski_harabasz_score(np.array([[np.nan, 0], [0, 0], [1, 1]]), [0, 1, 1])

    def test_samples_grouped_by_language_or_map(self):
        rng = np.random.default_rng(3)
        X, labels = clustered(rng, 2, 5, 3)
        samples = [SpaceSample(f"s{i}", "en" if l == 0 else "fr", x) for i, (x, l) in enumerate(zip(X, labels))]
        assert calinski_harabasz(samples).value == pytest.approx(sk_ch(X, labels), rel=1e-9)
        flipped = {s.id: ("a" if i % 2 else "b") for i, s in enumerate(samples)}
        assert calinski_harabasz(samples, flipped).value == pytest.approx(
            sk_ch(X, [i % 2 for i in range(10)]), rel=1e-9)


class TestPCA:
    def test_axis_aligned(self):
        rng = np.random.default_rng(0)
        X = np.column_stack([rng.normal(size=200) * 2, rng.normal(size=200)])
        X -= X.mean(0)
        # decorrelate exactly so the axes are the principal directions
        X[:, 1] -= X[:, 0] * (X[:, 0] @ X[:, 1]) / (X[:, 0] @ X[:, 0])
        coords, comps, _ = pca_project(X)
        np.testing.assert_allclose(np.abs(comps), np.eye(2), atol=1e-12)
        np.testing.assert_allclose(np.abs(coords), np.abs(X), atol=1e-12)

    def test_sign_convention(self):
        rng = np.random.default_rng(1)
        _, comps, _ = pca_project(rng.normal(size=(20, 6)))
        for row in comps:
            assert row[np.argmax(np.abs(row))] > 0
        _, comps_neg, _ = pca_project(-rng.normal(size=(20, 6)))
        for row in comps_neg:
            assert row[np.argmax(np.abs(row))] > 0

    def test_duplicated_points(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(6, 4))
        coords, _, _ = pca_project(np.vstack([X, X]))
        np.testing.assert_allclose(coords[:6], coords[6:], atol=1e-12)

    @pytest.mark.parametrize("seed", range(20))
    def test_variance_matches_eigen_oracle(self, seed):
        X = np.random.default_rng(seed).normal(size=(10, 8))
        coords, comps, evals = pca_project(X)
        oracle_vals, oracle_vecs = pca_oracle(X)
        np.testing.assert_allclose(coords.var(axis=0, ddof=1), oracle_vals, rtol=1e-9)
        np.testing.assert_allclose(evals, oracle_vals, rtol=1e-9)
        np.testing.assert_allclose(np.abs(comps @ oracle_vecs.T), np.eye(2), atol=1e-9)

    def test_rank_deficient_warns(self):
        X = np.outer(np.arange(5.0), [1.0, 2.0, 3.0])
        with pytest.warns(UserWarning, match="rank"):
            coords, _, _ = pca_project(X)
        np.testing.assert_array_equal(coords[:, 1], 0.0)

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            pca_project(np.ones((2, 3)))

    def test_csv_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        samples = [SpaceSample(f"s{i},x", "en" if i % 2 else "fr", rng.normal(size=4)) for i in range(6)]
        points = pca_2d(samples)
        write_pca_csv(points, tmp_path / "p.csv")
        assert read_pca_csv(tmp_path / "p.csv") == points
        assert (tmp_path / "p.csv").read_text().splitlines()[0] == "id,language,x,y"
        assert isinstance(points[0], PCAPoint)
