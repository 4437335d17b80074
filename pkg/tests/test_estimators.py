import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from clxabsa.analysis import pca_project
from clxabsa.estimators import PCA2D, ABSATagger, DistilledTagger, check_sentences
from clxabsa.tagging import TAG_NAMES

FAST = dict(hidden_dim=8, embedding_dim=8, max_steps=6, eval_interval=3, selection_window=3,
            learning_rate=1e-2, batch_size=8)


class TestInputValidation:
    def test_token_lists_with_labels(self):
        sents = check_sentences([["good", "pizza"]], [["O", "S-POS"]], require_labels=True)
        assert sents[0].spans == [(1, 1, "POS")]

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            check_sentences([["a"], ["b"]], [["O"]])

    def test_string_sample_rejected(self):
        with pytest.raises(TypeError):
            check_sentences(["a sentence"])

    def test_empty_sentence_rejected(self):
        with pytest.raises(ValueError):
            check_sentences([[]])

    def test_labels_required(self):
        with pytest.raises(ValueError):
            check_sentences([["a"]], require_labels=True)


class TestABSATagger:
    def test_params_and_clone(self):
        est = ABSATagger(level="sentiment", batch_size=64)
        assert est.get_params()["level"] == "sentiment"
        twin = clone(est)
        assert twin.get_params() == est.get_params() and twin is not est
        est.set_params(alpha=0.2)
        assert est.train_config().alpha == 0.2

    def test_unfitted(self):
        with pytest.raises(NotFittedError):
            ABSATagger().predict([["a"]])

    def test_fit_predict_score_transform(self, small_corpus):
        est = ABSATagger(level="token", **FAST).fit(small_corpus.source_train, eval_set=small_corpus.source_dev)
        assert list(est.classes_) == list(TAG_NAMES)
        test = small_corpus.source_test
        pred = est.predict(test)
        assert [len(p) for p in pred] == [len(s.tokens) for s in test]
        assert 0.0 <= est.score(test) <= 1.0
        assert est.transform(test).shape == (len(test), 8)
        proba = est.predict_proba(test)
        np.testing.assert_allclose(proba[0].sum(axis=1), 1.0, atol=1e-5)
        assert est.run_log_.selected is not None

    def test_fit_without_eval_set_warns(self):
        X = [["good", "pizza", "."], ["bad", "soup", "."]]
        y = [["O", "S-POS", "O"], ["O", "S-NEG", "O"]]
        with pytest.warns(UserWarning, match="eval_set"):
            est = ABSATagger(**FAST).fit(X, y)
        assert len(est.predict_spans(X)) == 2

    def test_save_and_reload(self, tmp_path, small_corpus):
        est = ABSATagger(**FAST).fit(small_corpus.source_train, eval_set=small_corpus.source_dev)
        est.save(tmp_path / "m.safetensors")
        back = ABSATagger.from_checkpoint(tmp_path / "m.safetensors")
        assert back.predict(small_corpus.source_test) == est.predict(small_corpus.source_test)

    def test_same_seed_same_predictions(self, small_corpus):
        a = ABSATagger(seed=4, **FAST).fit(small_corpus.source_train, eval_set=small_corpus.source_dev)
        b = ABSATagger(seed=4, **FAST).fit(small_corpus.source_train, eval_set=small_corpus.source_dev)
        assert a.run_log_.to_jsonl() == b.run_log_.to_jsonl()


class TestDistilledTagger:
    def test_fit(self, small_corpus, corpus_tokens):
        teachers = [ABSATagger(seed=s, vocabulary=corpus_tokens, **FAST).fit(
            small_corpus.source_train, eval_set=small_corpus.source_dev) for s in (0, 1)]
        est = DistilledTagger(teachers=teachers, init=teachers[0], max_steps=4, eval_interval=2,
                              selection_window=2, learning_rate=1e-3, batch_size=8)
        est.fit(small_corpus.target_unlabeled, eval_set=small_corpus.source_dev)
        assert len(est.soft_labels_) == len(small_corpus.target_unlabeled)
        assert len(est.predict(small_corpus.target_test)) == len(small_corpus.target_test)
        # init model is copied, not trained in place
        assert teachers[0].model_ is not est.model_

    def test_requires_teachers_init_and_dev(self, small_corpus):
        with pytest.raises(ValueError):
            DistilledTagger().fit(small_corpus.target_unlabeled, eval_set=small_corpus.source_dev)
        with pytest.raises(ValueError):
            DistilledTagger(teachers=[object()]).fit(small_corpus.target_unlabeled, eval_set=small_corpus.source_dev)


class TestPCA2D:
    def test_matches_function(self):
        X = np.random.default_rng(0).normal(size=(15, 6))
        pca = PCA2D().fit(X)
        coords, comps, evals = pca_project(X)
        np.testing.assert_allclose(pca.transform(X), coords, atol=1e-12)
        np.testing.assert_allclose(pca.fit_transform(X), coords, atol=1e-12)
        np.testing.assert_array_equal(pca.components_, comps)
        assert clone(pca).get_params() == {}
