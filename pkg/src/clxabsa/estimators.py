"""scikit-learn style estimators wrapping training, distillation and analysis.

``ABSATagger`` and ``DistilledTagger`` follow the usual ``fit`` / ``predict``
/ ``score`` / ``transform`` contract and support ``get_params`` /
``set_params`` / ``clone``. Inputs may be a :class:`~clxabsa.corpus.Dataset`,
a list of :class:`~clxabsa.corpus.AnnotatedSentence`, or token lists with a
parallel list of tag-name lists as ``y``.
"""

from __future__ import annotations

import warnings

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .analysis import micro_f1, pca_project, sentence_representations
from .corpus import AnnotatedSentence, Dataset, DatasetRole
from .distillation import TeacherEnsemble, run_distillation
from .model import Tagger, build_toy_tagger, load_checkpoint, predict_proba, save_checkpoint, tag_sentences
from .tagging import TAG_NAMES, decode_tags
from .trainer import TrainConfig, train


def check_sentences(X, y=None, require_labels: bool = False, language: str = "und") -> list:
    """Normalise estimator input to a list of AnnotatedSentence."""
    if isinstance(X, Dataset):
        sentences = list(X.sentences)
    else:
        X = list(X)
        if X and isinstance(X[0], AnnotatedSentence):
            sentences = X
        else:
            if y is not None and len(y) != len(X):
                raise ValueError(f"X has {len(X)} sentences but y has {len(y)}")
            sentences = []
            for i, toks in enumerate(X):
                if isinstance(toks, str):
                    raise TypeError("each sample must be a list of tokens, not a string")
                tags = None if y is None else list(y[i])
                sentences.append(AnnotatedSentence(f"s{i}", language, list(toks), tags))
    for s in sentences:
        if not s.tokens:
            raise ValueError(f"sentence {s.id!r} is empty")
    if require_labels and any(not s.labeled for s in sentences):
        raise ValueError("labels are required: pass y or tagged sentences")
    return sentences


def _as_dataset(sentences, role=DatasetRole.SOURCE) -> Dataset:
    if any(not s.labeled for s in sentences):
        return Dataset(sentences, DatasetRole.UNLABELED)
    return Dataset(sentences, role)


class _TaggerOutputMixin:
    """Prediction surface shared by fitted taggers (expects ``model_``)."""

    def predict(self, X) -> list:
        check_is_fitted(self, "model_")
        sentences = check_sentences(X)
        tags = tag_sentences(self.model_, [s.tokens for s in sentences])
        return [[t.name for t in row] for row in tags]

    def predict_proba(self, X) -> list:
        check_is_fitted(self, "model_")
        sentences = check_sentences(X)
        return predict_proba(self.model_, [s.tokens for s in sentences])

    def predict_spans(self, X) -> list:
        return [decode_tags(row) for row in self.predict(X)]

    def score(self, X, y=None) -> float:
        """Exact-match span Micro-F1."""
        sentences = check_sentences(X, y, require_labels=True)
        pred = self.predict_spans(sentences)
        report = micro_f1([(i, p) for i, p in enumerate(pred)],
                          [(i, s.spans) for i, s in enumerate(sentences)])
        return report.micro_f1

    def transform(self, X) -> np.ndarray:
        """Mean-pooled sentence representations, ``[n_sentences, hidden_dim]``."""
        check_is_fitted(self, "model_")
        samples = sentence_representations(self.model_, check_sentences(X))
        return np.stack([s.representation for s in samples])

    def save(self, path) -> None:
        check_is_fitted(self, "model_")
        save_checkpoint(self.model_, path)


class ABSATagger(_TaggerOutputMixin, BaseEstimator):
    """Aspect sentiment tagger trained with cross-entropy plus an optional contrastive term.

    ``level`` selects the contrastive grouping: ``"token"`` (full tag),
    ``"sentiment"`` (polarity only) or ``"none"`` (plain cross-entropy).
    ``vocabulary`` lists extra sentences (token lists) whose words should get
    embedding rows, so separately trained taggers can share one vocabulary.
    """

    def __init__(self, level="none", alpha=0.5, temperature=0.07, batch_size=32, max_steps=2000,
                 learning_rate=5e-5, eval_interval=100, selection_window=500, optimizer="adam",
                 contrastive_reduction="mean", max_O_per_batch=None, hidden_dim=32, embedding_dim=32,
                 max_len=128, vocabulary=None, seed=0):
        self.level = level
        self.alpha = alpha
        self.temperature = temperature
        self.batch_size = batch_size
        self.max_steps = max_steps
        self.learning_rate = learning_rate
        self.eval_interval = eval_interval
        self.selection_window = selection_window
        self.optimizer = optimizer
        self.contrastive_reduction = contrastive_reduction
        self.max_O_per_batch = max_O_per_batch
        self.hidden_dim = hidden_dim
        self.embedding_dim = embedding_dim
        self.max_len = max_len
        self.vocabulary = vocabulary
        self.seed = seed

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate, batch_size=self.batch_size, max_steps=self.max_steps,
            eval_interval=self.eval_interval, selection_window=self.selection_window,
            temperature=self.temperature, alpha=self.alpha, level=self.level, seed=self.seed,
            optimizer=self.optimizer, max_O_per_batch=self.max_O_per_batch,
            contrastive_reduction=self.contrastive_reduction,
        )

    def fit(self, X, y=None, eval_set=None):
        """Train on labeled sentences; ``eval_set`` drives model selection."""
        config = self.train_config()
        sentences = check_sentences(X, y, require_labels=True)
        if eval_set is None:
            warnings.warn("no eval_set given; selecting the model on the training data", stacklevel=2)
            dev = sentences
        elif isinstance(eval_set, tuple):
            dev = check_sentences(*eval_set, require_labels=True)
        else:
            dev = check_sentences(eval_set, require_labels=True)
        vocab_source = [s.tokens for s in sentences] + [s.tokens for s in dev]
        vocab_source += [list(v) for v in (self.vocabulary or [])]
        model = build_toy_tagger(vocab_source, self.hidden_dim, self.embedding_dim, self.seed, self.max_len)
        self.model_, self.run_log_ = train(model, _as_dataset(sentences), _as_dataset(dev), config)
        self.classes_ = np.array(TAG_NAMES)
        return self

    @classmethod
    def from_checkpoint(cls, path, **params) -> "ABSATagger":
        est = cls(**params)
        est.model_ = load_checkpoint(path)
        est.classes_ = np.array(TAG_NAMES)
        return est


def _unwrap(model) -> Tagger:
    if isinstance(model, Tagger):
        return model
    check_is_fitted(model, "model_")
    return model.model_


class DistilledTagger(_TaggerOutputMixin, BaseEstimator):
    """Student tagger distilled from fused teacher distributions on unlabeled text.

    ``teachers`` are fitted taggers (estimators or ``Tagger`` modules) sharing
    one vocabulary; ``init`` is the model the student starts from. Weights
    default to a uniform average.
    """

    def __init__(self, teachers=None, weights=None, init=None, batch_size=32, max_steps=1000,
                 learning_rate=5e-5, eval_interval=100, selection_window=500, optimizer="adam", seed=0):
        self.teachers = teachers
        self.weights = weights
        self.init = init
        self.batch_size = batch_size
        self.max_steps = max_steps
        self.learning_rate = learning_rate
        self.eval_interval = eval_interval
        self.selection_window = selection_window
        self.optimizer = optimizer
        self.seed = seed

    def fit(self, X, y=None, eval_set=None):
        """Distill on ``X`` (labels, if any, are discarded)."""
        if not self.teachers:
            raise ValueError("DistilledTagger needs at least one teacher")
        if self.init is None:
            raise ValueError("DistilledTagger needs an init model")
        if eval_set is None:
            raise ValueError("eval_set is required for model selection")
        sentences = check_sentences(X)
        pool = Dataset([AnnotatedSentence(s.id, s.language, s.tokens) for s in sentences],
                       DatasetRole.UNLABELED)
        if isinstance(eval_set, tuple):
            dev = check_sentences(*eval_set, require_labels=True)
        else:
            dev = check_sentences(eval_set, require_labels=True)
        config = TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size,
                             max_steps=self.max_steps, eval_interval=self.eval_interval,
                             selection_window=self.selection_window, optimizer=self.optimizer,
                             seed=self.seed)
        ensemble = TeacherEnsemble([_unwrap(t) for t in self.teachers], self.weights)
        init = _unwrap(self.init)
        student = Tagger.from_config(init.config()).to(next(init.parameters()).dtype)
        student.load_state_dict(init.state_dict())
        self.model_, self.soft_labels_, self.run_log_ = run_distillation(
            ensemble, pool, student, _as_dataset(dev), config)
        self.classes_ = np.array(TAG_NAMES)
        return self


class PCA2D(TransformerMixin, BaseEstimator):
    """Two-component PCA with a deterministic sign convention.

    Each component's largest-magnitude loading is positive.
    """

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        _, comps, evals = pca_project(X, 2)
        self.mean_ = X.mean(axis=0)
        self.components_ = comps
        self.explained_variance_ = evals
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        coords = (np.asarray(X, dtype=np.float64) - self.mean_) @ self.components_.T
        coords[:, self.explained_variance_ <= self.explained_variance_[0] * 1e-10] = 0.0
        return coords
