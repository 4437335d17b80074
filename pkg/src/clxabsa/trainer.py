"""Supervised training with optional contrastive terms and window-based model selection."""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .analysis import EvalReport, micro_f1
from .corpus import Dataset, merge
from .model import Tagger, tag_sentences
from .objectives import (
    ContrastiveConfig,
    Level,
    combined_loss,
    contrastive_loss,
    contrastive_pool,
    cross_entropy,
)
from .tagging import decode_tags

logger = logging.getLogger(__name__)

BATCH_SIZE_GRID = (16, 32, 64)


class TrainingError(RuntimeError):
    """Training diverged (non-finite loss) or received unusable data."""


@dataclass
class TrainConfig:
    learning_rate: float = 5e-5
    batch_size: int = 32
    max_steps: int = 2000
    eval_interval: int = 100
    selection_window: int = 500
    temperature: float = 0.07
    alpha: float = 0.5
    level: str = "none"
    seed: int = 0
    languages: list = field(default_factory=list)
    optimizer: str = "adam"
    include_O: bool = True
    max_O_per_batch: Optional[int] = None
    # per-anchor mean keeps the contrastive term on the CE scale; "sum" is the literal pool sum
    contrastive_reduction: str = "mean"

    def __post_init__(self):
        self.level = Level(self.level).value
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")
        if self.eval_interval < 1:
            raise ValueError("eval_interval must be positive")
        if not 0 < self.selection_window <= self.max_steps:
            raise ValueError("selection_window must lie in (0, max_steps]")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}; choose from {sorted(OPTIMIZERS)}")
        self.contrastive()  # validates temperature and alpha

    def contrastive(self) -> ContrastiveConfig:
        level = Level(self.level)
        return ContrastiveConfig(
            level=Level.TOKEN if level is Level.NONE else level,
            temperature=self.temperature,
            alpha=self.alpha,
            include_O=self.include_O,
            max_O_per_batch=self.max_O_per_batch,
            reduction=self.contrastive_reduction,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


OPTIMIZERS = {
    "adam": torch.optim.Adam,
    "adamw": torch.optim.AdamW,
    "sgd": torch.optim.SGD,
}


class RunLog:
    """Append-only event stream of one training run."""

    def __init__(self):
        self.events = []

    def append(self, event: str, **fields) -> None:
        self.events.append({"event": event, **fields})

    def steps(self) -> list:
        return [e for e in self.events if e["event"] == "step"]

    def evals(self) -> list:
        return [e for e in self.events if e["event"] == "eval"]

    @property
    def selected(self) -> Optional[dict]:
        sel = [e for e in self.events if e["event"] == "select"]
        return sel[-1] if sel else None

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.events)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_jsonl())

    @classmethod
    def read(cls, path) -> "RunLog":
        log = cls()
        with open(path, encoding="utf-8") as fh:
            log.events = [json.loads(line) for line in fh if line.strip()]
        return log


class EpochSampler:
    """Index batches drawn without replacement, reshuffled every epoch."""

    def __init__(self, n: int, batch_size: int, seed: int):
        if n == 0:
            raise TrainingError("training data is empty")
        self.n = n
        self.batch_size = min(batch_size, n)
        self.rng = np.random.default_rng(seed)
        self._order = []

    def next(self) -> list:
        if len(self._order) < self.batch_size:
            # leftover indices start the next epoch so every item is seen once per pass
            self._order = self._order + self.rng.permutation(self.n).tolist()
        batch, self._order = self._order[: self.batch_size], self._order[self.batch_size :]
        return batch


def evaluate(model: Tagger, dataset: Dataset) -> EvalReport:
    """Micro-F1 of the model's decoded predictions against gold spans."""
    if len(dataset) == 0:
        raise ValueError("evaluation set is empty")
    tokens = [s.tokens for s in dataset]
    predicted = tag_sentences(model, tokens)
    pred = [(s.id, decode_tags(tags)) for s, tags in zip(dataset, predicted)]
    gold = [(s.id, s.spans) for s in dataset]
    return micro_f1(pred, gold, {s.id: s.language for s in dataset})


def _gold_tensor(sentences, width: int) -> torch.Tensor:
    gold = torch.zeros(len(sentences), width, dtype=torch.long)
    for i, s in enumerate(sentences):
        idx = [t.index for t in s.tags[:width]]
        gold[i, : len(idx)] = torch.tensor(idx, dtype=torch.long)
    return gold


def fit_loop(model: Tagger, n_items: int, batch_loss: Callable, dev_data: Dataset,
             config: TrainConfig, log: Optional[RunLog] = None):
    """Shared optimisation loop.

    ``batch_loss(indices)`` returns a dict with a ``loss`` tensor plus any
    scalar components to log. Dev Micro-F1 is measured every
    ``eval_interval`` steps and at the final step; the best evaluation in the
    last ``selection_window`` steps is restored into ``model``.
    """
    if dev_data is None or len(dev_data) == 0:
        raise TrainingError("dev set is empty")
    log = RunLog() if log is None else log
    torch.manual_seed(config.seed)
    sampler = EpochSampler(n_items, config.batch_size, config.seed)
    optimizer = OPTIMIZERS[config.optimizer](model.parameters(), lr=config.learning_rate)
    window_start = config.max_steps - config.selection_window
    best_f1, best_step, best_state = -1.0, None, None
    model.train()
    for step in range(1, config.max_steps + 1):
        parts = batch_loss(sampler.next())
        loss = parts["loss"]
        if not torch.isfinite(loss):
            raise TrainingError(f"non-finite loss at step {step}")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        log.append("step", step=step, **{k: float(v.detach()) for k, v in parts.items()})
        if step % config.eval_interval == 0 or step == config.max_steps:
            f1 = evaluate(model, dev_data).micro_f1
            model.train()
            log.append("eval", step=step, dev_f1=f1)
            if step > window_start and f1 > best_f1:
                best_f1, best_step = f1, step
                best_state = copy.deepcopy(model.state_dict())
    model.load_state_dict(best_state)
    model.eval()
    log.append("select", step=best_step, dev_f1=best_f1)
    logger.info("selected step %d (dev F1 %.4f)", best_step, best_f1)
    return model, log


def train(model: Tagger, train_data: Dataset, dev_data: Dataset, config: TrainConfig,
          log: Optional[RunLog] = None):
    """Train ``model`` in place on labeled data; returns ``(model, RunLog)``."""
    if not train_data.labeled:
        raise TrainingError("training data must be labeled")
    if not dev_data.labeled:
        raise TrainingError("dev data must be labeled")
    level = Level(config.level)
    ccfg = config.contrastive()
    sentences = list(train_data.sentences)

    def batch_loss(indices):
        batch = [sentences[i] for i in indices]
        probs, mask, _ = model([s.tokens for s in batch])
        gold = _gold_tensor(batch, probs.shape[1])
        ce = cross_entropy(probs, gold, mask)
        if level is Level.NONE:
            return {"loss": ce, "ce": ce}
        cl = contrastive_loss(contrastive_pool(probs, gold, mask, ccfg), ccfg)
        return {"loss": combined_loss(ce, cl, config.alpha), "ce": ce, "cl": cl}

    log = RunLog() if log is None else log
    log.append("start", config=config.to_dict(), n_train=len(sentences), n_dev=len(dev_data))
    return fit_loop(model, len(sentences), batch_loss, dev_data, config, log)


@dataclass
class GridRow:
    batch_size: int
    dev_f1: float
    best: bool = False


def grid_search(model_factory: Callable, data: Dataset, dev: Dataset, base_config: TrainConfig,
                batch_sizes: Sequence[int] = BATCH_SIZE_GRID) -> list:
    """One run per batch size; rows sorted by batch size with the best flagged.

    ``model_factory(config)`` must return a freshly initialised model.
    """
    if not batch_sizes:
        raise ValueError("need at least one batch size")
    rows = []
    for bs in sorted(set(batch_sizes)):
        cfg = dataclasses.replace(base_config, batch_size=bs)
        _, log = train(model_factory(cfg), data, dev, cfg)
        rows.append(GridRow(bs, log.selected["dev_f1"]))
    max(rows, key=lambda r: (r.dev_f1, -r.batch_size)).best = True
    return rows


def train_multilingual(model: Tagger, per_language_data: dict, dev: Dataset, config: TrainConfig,
                       log: Optional[RunLog] = None):
    """Train one model on every dataset of every language, merged into one stream."""
    datasets = [ds for lang in sorted(per_language_data) for ds in per_language_data[lang]]
    if not datasets:
        raise TrainingError("no training data supplied")
    merged = merge(datasets, config.seed)
    expected = sum(len(ds) for ds in datasets)
    assert len(merged) == expected
    return train(model, merged, dev, config, log)


def mean_and_std(values: Sequence[float]) -> tuple:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return math.nan, math.nan
    return float(arr.mean()), float(arr.std(ddof=1)) if arr.size > 1 else 0.0
