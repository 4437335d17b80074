import copy
import dataclasses
import json
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from clxabsa.corpus import Dataset, DatasetRole
from clxabsa.model import build_toy_tagger
from clxabsa.trainer import (
    BATCH_SIZE_GRID,
    EpochSampler,
    RunLog,
    TrainConfig,
    TrainingError,
    evaluate,
    fit_loop,
    grid_search,
    mean_and_std,
    train,
    train_multilingual,
)


def cfg(**kw):
    base = dict(learning_rate=1e-2, batch_size=8, max_steps=8, eval_interval=2, selection_window=4)
    base.update(kw)
    return TrainConfig(**base)


class TestTrainConfig:
    def test_defaults(self):
        c = TrainConfig()
        assert (c.learning_rate, c.max_steps, c.selection_window) == (5e-5, 2000, 500)
        assert (c.temperature, c.alpha, c.level) == (0.07, 0.5, "none")

    @pytest.mark.parametrize("bad", [
        dict(batch_size=0), dict(max_steps=0), dict(eval_interval=0), dict(selection_window=0),
        dict(max_steps=10, selection_window=11), dict(optimizer="lbfgs"), dict(temperature=-1.0),
        dict(alpha=2.0), dict(level="word"), dict(contrastive_reduction="max"),
    ])
    def test_validation(self, bad):
        with pytest.raises(ValueError):
            TrainConfig(**bad)

    def test_json_round_trip_and_hash(self, tmp_path):
        c = cfg(level="sentiment", batch_size=64, languages=["fr", "es"])
        (tmp_path / "c.json").write_text(c.to_json())
        back = TrainConfig.from_json(tmp_path / "c.json")
        assert back == c and back.hash() == c.hash()
        assert dataclasses.replace(c, seed=1).hash() != c.hash()

    def test_unknown_fields_rejected(self):
        with pytest.raises(ValueError, match="unknown"):
            TrainConfig.from_dict({"lr": 1.0})

    def test_contrastive_view(self):
        c = cfg(level="sentiment", temperature=0.2, alpha=0.3).contrastive()
        assert (c.level.value, c.temperature, c.alpha) == ("sentiment", 0.2, 0.3)


class TestSampler:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 30), st.integers(1, 12), st.integers(0, 1000))
    def test_every_item_once_per_epoch(self, n, bs, seed):
        sampler = EpochSampler(n, bs, seed)
        drawn = [i for _ in range(3 * n) for i in sampler.next()]
        bs = min(bs, n)
        epochs = len(drawn) // n
        for e in range(epochs):
            assert sorted(drawn[e * n : (e + 1) * n]) == list(range(n))
        assert all(len(sampler.next()) == bs for _ in range(3))

    def test_seeded(self):
        a, b = EpochSampler(10, 3, 7), EpochSampler(10, 3, 7)
        assert [a.next() for _ in range(5)] == [b.next() for _ in range(5)]

    def test_empty(self):
        with pytest.raises(TrainingError):
            EpochSampler(0, 4, 0)


class TestRunLog:
    def test_jsonl_round_trip(self, tmp_path):
        log = RunLog()
        log.append("step", step=1, loss=0.5)
        log.append("eval", step=1, dev_f1=0.25)
        log.append("select", step=1, dev_f1=0.25)
        log.write(tmp_path / "r.jsonl")
        back = RunLog.read(tmp_path / "r.jsonl")
        assert back.events == log.events
        assert back.selected == {"event": "select", "step": 1, "dev_f1": 0.25}
        assert [json.loads(line)["event"] for line in log.to_jsonl().splitlines()] == ["step", "eval", "select"]


class TestEvaluate:
    def test_empty(self, tiny_tagger):
        with pytest.raises(ValueError):
            evaluate(tiny_tagger, Dataset([], DatasetRole.SOURCE))

    def test_report_has_language_breakdown(self, tiny_tagger, small_corpus):
        rep = evaluate(tiny_tagger, small_corpus.target_test)
        assert set(rep.per_language) == {"xx"}
        assert 0.0 <= rep.micro_f1 <= 1.0


class TestFitLoop:
    def test_selection_picks_best_eval_inside_window(self, tiny_tagger, small_corpus):
        model, log = train(tiny_tagger, small_corpus.source_train, small_corpus.source_dev,
                           cfg(max_steps=10, eval_interval=3, selection_window=5))
        evals = log.evals()
        assert [e["step"] for e in evals] == [3, 6, 9, 10]
        window = [e for e in evals if e["step"] > 5]
        best = max(window, key=lambda e: e["dev_f1"])
        assert log.selected["dev_f1"] == best["dev_f1"]
        assert log.selected["step"] == min(e["step"] for e in window if e["dev_f1"] == best["dev_f1"])
        assert evaluate(model, small_corpus.source_dev).micro_f1 == log.selected["dev_f1"]
        assert not model.training

    def test_restores_selected_weights(self, corpus_tokens, small_corpus, monkeypatch):
        import clxabsa.trainer as tr

        model = build_toy_tagger(corpus_tokens, 8, 8)
        data = small_corpus.source_train
        snapshots = []
        scores = iter([0.9, 0.1, 0.5])

        def fake_eval(m, ds):
            snapshots.append(copy.deepcopy(m.state_dict()))
            return dataclasses.replace(tr.EvalReport.from_counts(0, 0, 0), micro_f1=next(scores))

        def batch_loss(indices):
            probs, _, _ = model([data[i].tokens for i in indices])
            return {"loss": probs[..., 0].mean()}

        monkeypatch.setattr(tr, "evaluate", fake_eval)
        _, log = fit_loop(model, len(data), batch_loss, small_corpus.source_dev,
                          cfg(max_steps=6, eval_interval=2, selection_window=6))
        assert log.selected == {"event": "select", "step": 2, "dev_f1": 0.9}
        for k, v in model.state_dict().items():
            assert torch.equal(v, snapshots[0][k])

    def test_non_finite_loss_aborts(self, tiny_tagger, small_corpus):
        with pytest.raises(TrainingError, match="non-finite"):
            fit_loop(tiny_tagger, 4, lambda idx: {"loss": torch.tensor(float("nan"), requires_grad=True)},
                     small_corpus.source_dev, cfg())

    def test_empty_dev_rejected(self, tiny_tagger, small_corpus):
        with pytest.raises(TrainingError):
            train(tiny_tagger, small_corpus.source_train, Dataset([], DatasetRole.SOURCE), cfg())

    def test_unlabeled_training_data_rejected(self, tiny_tagger, small_corpus):
        with pytest.raises(TrainingError):
            train(tiny_tagger, small_corpus.target_unlabeled, small_corpus.source_dev, cfg())

    @pytest.mark.parametrize("level", ["none", "token", "sentiment"])
    def test_identical_runs_identical_logs(self, corpus_tokens, small_corpus, level):
        logs = []
        for _ in range(2):
            model = build_toy_tagger(corpus_tokens, 8, 8, seed=5)
            _, log = train(model, small_corpus.source_train, small_corpus.source_dev, cfg(level=level, seed=5))
            logs.append(log.to_jsonl())
        assert logs[0] == logs[1]
        steps = [json.loads(line) for line in logs[0].splitlines() if '"step"' in line and '"loss"' in line]
        if level == "none":
            assert all(e["loss"] == e["ce"] for e in steps)
        else:
            assert all(math.isclose(e["loss"], 0.5 * e["ce"] + 0.5 * e["cl"], rel_tol=1e-6) for e in steps)

    def test_training_reduces_loss(self, corpus_tokens, small_corpus):
        model = build_toy_tagger(corpus_tokens, 16, 16, seed=0)
        _, log = train(model, small_corpus.source_train, small_corpus.source_dev,
                       cfg(max_steps=60, eval_interval=20, selection_window=20))
        losses = [e["loss"] for e in log.steps()]
        assert np.mean(losses[-10:]) < 0.5 * np.mean(losses[:5])


class TestGridAndMultilingual:
    def test_grid_flags_best(self, corpus_tokens, small_corpus):
        rows = grid_search(lambda c: build_toy_tagger(corpus_tokens, 8, 8, seed=c.seed),
                           small_corpus.source_train, small_corpus.source_dev, cfg(level="token", max_steps=4))
        assert [r.batch_size for r in rows] == list(BATCH_SIZE_GRID)
        assert sum(r.best for r in rows) == 1
        best = max(r.dev_f1 for r in rows)
        assert next(r for r in rows if r.best).dev_f1 == best

    def test_singleton_grid(self, corpus_tokens, small_corpus):
        rows = grid_search(lambda c: build_toy_tagger(corpus_tokens, 8, 8), small_corpus.source_train,
                           small_corpus.source_dev, cfg(max_steps=4), batch_sizes=[16])
        assert len(rows) == 1 and rows[0].best

    def test_single_language_reduces_to_train(self, corpus_tokens, small_corpus):
        c = cfg(seed=2)
        a = build_toy_tagger(corpus_tokens, 8, 8, seed=2)
        b = build_toy_tagger(corpus_tokens, 8, 8, seed=2)
        from clxabsa.corpus import merge

        _, la = train_multilingual(a, {"en": [small_corpus.source_train]}, small_corpus.source_dev, c)
        _, lb = train(b, merge([small_corpus.source_train], 2), small_corpus.source_dev, c)
        assert la.to_jsonl() == lb.to_jsonl()

    def test_multilingual_uses_all_data(self, corpus_tokens, small_corpus):
        data = {"en": [small_corpus.source_train], "xx": [small_corpus.translated_train,
                                                          small_corpus.code_switched_st]}
        _, log = train_multilingual(build_toy_tagger(corpus_tokens, 8, 8), data, small_corpus.source_dev, cfg())
        assert log.events[0]["n_train"] == 3 * len(small_corpus.source_train)

    def test_multilingual_needs_data(self, tiny_tagger, small_corpus):
        with pytest.raises(TrainingError):
            train_multilingual(tiny_tagger, {}, small_corpus.source_dev, cfg())


class TestMeanAndStd:
    def test_values(self):
        m, s = mean_and_std([1.0, 2.0, 3.0])
        assert m == 2.0 and s == pytest.approx(1.0)
        assert mean_and_std([4.0]) == (4.0, 0.0)
        assert all(math.isnan(v) for v in mean_and_std([]))
