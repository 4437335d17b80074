"""Desk-scale cross-lingual transfer experiment on the synthetic bilingual corpus.

Per seed it trains a cross-entropy baseline, token- and sentiment-level
contrastive models, three teachers on the translated data combined with
source or code-switched data, a translation-only student initialisation and
finally the distilled student. Model selection always uses the labeled
source-language dev set; the target language is only seen unlabeled.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .analysis import calinski_harabasz, sentence_representations
from .corpus import merge
from .distillation import TeacherEnsemble, run_distillation
from .model import build_toy_tagger
from .synthetic import BilingualCorpus, make_bilingual_corpus
from .trainer import TrainConfig, evaluate, train

logger = logging.getLogger(__name__)


@dataclass
class DeskConfig:
    """Step counts keep the 4:1 training-to-selection-window ratio of the full-scale schedule."""

    learning_rate: float = 1e-2
    max_steps: int = 800
    eval_interval: int = 50
    selection_window: int = 200
    baseline_batch_size: int = 16
    token_batch_size: int = 32
    sentiment_batch_size: int = 64
    temperature: float = 0.07
    alpha: float = 0.5
    student_learning_rate: float = 3e-3
    student_steps: int = 400
    student_window: int = 200
    student_batch_size: int = 32
    hidden_dim: int = 32
    embedding_dim: int = 32

    def train_config(self, level: str, batch_size: int, seed: int) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate, batch_size=batch_size, max_steps=self.max_steps,
            eval_interval=self.eval_interval, selection_window=self.selection_window,
            temperature=self.temperature, alpha=self.alpha, level=level, seed=seed,
        )

    def student_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.student_learning_rate, batch_size=self.student_batch_size,
            max_steps=self.student_steps, eval_interval=self.eval_interval,
            selection_window=self.student_window, seed=seed,
        )


@dataclass
class SeedResult:
    seed: int
    target_f1: dict = field(default_factory=dict)
    calinski_harabasz: dict = field(default_factory=dict)
    seconds: float = 0.0


def _target_f1(model, corpus: BilingualCorpus) -> float:
    return evaluate(model, corpus.target_test).micro_f1


def _language_ch(model, corpus: BilingualCorpus) -> float:
    samples = sentence_representations(model, list(corpus.source_test) + list(corpus.target_test))
    return calinski_harabasz(samples).value


def run_seed(corpus: BilingualCorpus, seed: int, cfg: DeskConfig = DeskConfig()) -> SeedResult:
    start = time.perf_counter()
    vocab = [s.tokens for ds in corpus.files().values() for s in ds]

    def fresh():
        return build_toy_tagger(vocab, cfg.hidden_dim, cfg.embedding_dim, seed)

    def fit(datasets, level, batch_size):
        model, _ = train(fresh(), merge(datasets, seed), corpus.source_dev,
                         cfg.train_config(level, batch_size, seed))
        return model

    result = SeedResult(seed)
    s_t = [corpus.source_train, corpus.translated_train]
    models = {
        "ce": fit(s_t, "none", cfg.baseline_batch_size),
        "tl": fit(s_t, "token", cfg.token_batch_size),
        "sl": fit(s_t, "sentiment", cfg.sentiment_batch_size),
    }
    # the TL model on D_T u D_S doubles as the first teacher
    models["teacher_st"] = fit([corpus.translated_train, corpus.code_switched_st], "token", cfg.token_batch_size)
    models["teacher_ts"] = fit([corpus.translated_train, corpus.code_switched_ts], "token", cfg.token_batch_size)
    models["translation"] = fit([corpus.translated_train], "none", cfg.baseline_batch_size)
    for name in ("ce", "tl", "sl"):
        result.calinski_harabasz[name] = _language_ch(models[name], corpus)
    result.calinski_harabasz["untrained"] = _language_ch(fresh(), corpus)
    teachers = [models["tl"], models["teacher_st"], models["teacher_ts"]]
    student = fresh()
    student.load_state_dict(models["translation"].state_dict())
    result.target_f1 = {name: _target_f1(m, corpus) for name, m in models.items()}
    student, _, _ = run_distillation(TeacherEnsemble(teachers), corpus.target_unlabeled, student,
                                     corpus.source_dev, cfg.student_config(seed))
    result.target_f1["student"] = _target_f1(student, corpus)
    result.seconds = time.perf_counter() - start
    logger.info("seed %d done in %.1fs: %s", seed, result.seconds, result.target_f1)
    return result


def run_experiment(seeds=range(5), cfg: DeskConfig = DeskConfig(), corpus_seed: int = 0) -> list:
    corpus = make_bilingual_corpus(seed=corpus_seed)
    return [run_seed(corpus, s, cfg) for s in seeds]


def summarize(results: list) -> dict:
    """Mean target F1 per model and the per-seed CH comparisons the criteria need."""
    names = results[0].target_f1.keys()
    mean_f1 = {n: float(np.mean([r.target_f1[n] for r in results])) for n in names}
    ch_lower = {
        n: sum(r.calinski_harabasz[n] < r.calinski_harabasz["ce"] for r in results) for n in ("tl", "sl")
    }
    teachers = ("tl", "teacher_st", "teacher_ts")
    best_teacher = max(teachers, key=lambda n: mean_f1[n])
    return {
        "mean_target_f1": mean_f1,
        "ch_lower_than_ce": ch_lower,
        "best_teacher": best_teacher,
        "seeds": [dataclasses.asdict(r) for r in results],
    }
