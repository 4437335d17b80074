"""Multi-teacher soft-label fusion and student distillation."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
import torch

from .corpus import Dataset, DatasetRole
from .model import Tagger, predict_proba, read_checkpoint_meta
from .tagging import NUM_TAGS, tag_map, tag_map_hash
from .trainer import RunLog, TrainConfig, fit_loop

logger = logging.getLogger(__name__)

# teacher training-data combinations: translated data plus one more source
TEACHER_COMBINATIONS = (
    ("translated", "source"),
    ("translated", "code_switched_st"),
    ("translated", "code_switched_ts"),
)


class DistillationError(ValueError):
    pass


def parse_weights(text: str) -> list:
    """Parse ``"1/3,1/3,1/3"`` style weight lists."""
    try:
        return [float(Fraction(part.strip())) for part in text.split(",")]
    except (ValueError, ZeroDivisionError) as exc:
        raise DistillationError(f"cannot parse weights {text!r}: {exc}") from None


def check_weights(weights: Sequence[float], n_teachers: int) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (n_teachers,):
        raise DistillationError(f"expected {n_teachers} weights, got {len(w)}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise DistillationError("teacher weights must be finite and non-negative")
    if abs(w.sum() - 1.0) > 1e-9:
        raise DistillationError(f"teacher weights sum to {w.sum()!r}, not 1")
    return w


@dataclass
class TeacherEnsemble:
    teachers: list
    weights: Optional[list] = None
    descriptors: list = field(default_factory=list)

    def __post_init__(self):
        if not self.teachers:
            raise DistillationError("ensemble needs at least one teacher")
        if self.weights is None:
            self.weights = [1.0 / len(self.teachers)] * len(self.teachers)
        self.weights = check_weights(self.weights, len(self.teachers)).tolist()

    def __len__(self):
        return len(self.teachers)


@dataclass
class SoftLabelRecord:
    id: str
    probs: np.ndarray

    def to_record(self) -> dict:
        return {"id": self.id, "probs": self.probs.tolist()}


def fuse_teachers(per_teacher_probs: Sequence, weights: Sequence[float]) -> np.ndarray:
    """Weighted sum of teacher distributions for one sentence (``[n, 13]`` each)."""
    arrays = [np.asarray(p, dtype=np.float64) for p in per_teacher_probs]
    if not arrays:
        raise DistillationError("no teacher outputs to fuse")
    shape = arrays[0].shape
    if len(shape) != 2 or shape[1] != NUM_TAGS:
        raise DistillationError(f"teacher output must be [n, {NUM_TAGS}], got {shape}")
    if any(a.shape != shape for a in arrays):
        raise DistillationError(f"teacher outputs disagree on shape: {[a.shape for a in arrays]}")
    w = check_weights(weights, len(arrays))
    fused = w[0] * arrays[0]
    for wk, a in zip(w[1:], arrays[1:]):
        fused = fused + wk * a
    return fused


def distill_loss(target: torch.Tensor, student: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean over sentences of mean per-token MSE between distributions.

    Per-token MSE averages the squared difference over the 13 tag entries.
    """
    mask = mask.bool()
    counts = mask.sum(dim=1)
    if len(counts) == 0 or int(counts.sum()) == 0:
        raise DistillationError("distillation needs at least one valid token")
    per_token = ((target - student) ** 2).mean(dim=-1).masked_fill(~mask, 0.0)
    keep = counts > 0
    return (per_token.sum(dim=1)[keep] / counts[keep]).mean()


def precompute_soft_labels(ensemble: TeacherEnsemble, unlabeled: Dataset, batch_size: int = 64) -> list:
    """Run each teacher once over the pool and fuse the outputs."""
    tokens = [s.tokens for s in unlabeled]
    outputs = [predict_proba(t, tokens, batch_size) for t in ensemble.teachers]
    records = []
    for i, s in enumerate(unlabeled):
        fused = fuse_teachers([out[i] for out in outputs], ensemble.weights)
        records.append(SoftLabelRecord(s.id, fused))
    return records


def save_soft_labels(records: Sequence[SoftLabelRecord], path) -> None:
    """JSONL soft labels plus a ``<path>.meta.json`` sidecar holding the tag-map hash."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps(r.to_record()) + "\n")
    with open(f"{path}.meta.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump({"tag_map": tag_map(), "tag_map_hash": tag_map_hash(), "count": len(records)},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_soft_labels(path) -> list:
    with open(f"{path}.meta.json", encoding="utf-8") as fh:
        meta = json.load(fh)
    if meta.get("tag_map_hash") != tag_map_hash():
        raise DistillationError(f"{path}: soft labels were produced under a different tag map")
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            probs = np.asarray(obj["probs"], dtype=np.float64)
            if probs.ndim != 2 or probs.shape[1] != NUM_TAGS:
                raise DistillationError(f"{path}:{lineno}: probs must be [n, {NUM_TAGS}]")
            records.append(SoftLabelRecord(obj["id"], probs))
    return records


def check_tag_maps(checkpoints: Sequence) -> None:
    """Abort unless every checkpoint file carries this build's tag map."""
    expected = tag_map_hash()
    for path in checkpoints:
        meta = read_checkpoint_meta(path)
        if meta["tag_map_hash"] != expected:
            raise DistillationError(f"{path}: tag-index map differs from the other models")


def _check_vocabulary(ensemble: TeacherEnsemble, student: Tagger) -> None:
    s_cfg = student.encoder.config()
    for k, t in enumerate(ensemble.teachers):
        t_cfg = t.encoder.config()
        if t_cfg.get("kind") != s_cfg.get("kind"):
            raise DistillationError(f"teacher {k} encoder kind differs from the student's")
        if "vocab" in s_cfg and t_cfg.get("vocab") != s_cfg["vocab"]:
            raise DistillationError(f"teacher {k} vocabulary differs from the student's")
        if t_cfg.get("tokenizer_path") != s_cfg.get("tokenizer_path"):
            raise DistillationError(f"teacher {k} tokenizer differs from the student's")


def distill_student(student: Tagger, unlabeled: Dataset, soft_labels: Sequence[SoftLabelRecord],
                    dev: Dataset, config: TrainConfig, log: Optional[RunLog] = None):
    """Train ``student`` towards frozen soft labels with the MSE objective only."""
    if unlabeled.role is not DatasetRole.UNLABELED:
        raise DistillationError("distillation pool must be an UNLABELED dataset")
    if len(unlabeled) == 0:
        raise DistillationError("unlabeled pool is empty")
    by_id = {r.id: r for r in soft_labels}
    sentences = list(unlabeled.sentences)
    targets = []
    for s in sentences:
        rec = by_id.get(s.id)
        if rec is None:
            raise DistillationError(f"no soft label for sentence {s.id!r}")
        targets.append(torch.as_tensor(rec.probs))
    dtype = next(student.parameters()).dtype

    def batch_loss(indices):
        batch = [sentences[i] for i in indices]
        probs, mask, _ = student([s.tokens for s in batch])
        target = torch.zeros_like(probs)
        for row, i in enumerate(indices):
            t = targets[i][: probs.shape[1]]
            target[row, : len(t)] = t.to(dtype)
        return {"loss": distill_loss(target, probs, mask)}

    log = RunLog() if log is None else log
    log.append("start", config=config.to_dict(), n_unlabeled=len(sentences), n_dev=len(dev),
               mode="distill")
    return fit_loop(student, len(sentences), batch_loss, dev, config, log)


def run_distillation(ensemble: TeacherEnsemble, unlabeled: Dataset, student_init: Tagger,
                     dev: Dataset, config: TrainConfig, log: Optional[RunLog] = None):
    """Precompute fused soft labels, then distill them into ``student_init``.

    Returns ``(student, soft_labels, RunLog)``; the student is trained in place.
    """
    if unlabeled.role is not DatasetRole.UNLABELED:
        raise DistillationError("distillation pool must be an UNLABELED dataset")
    _check_vocabulary(ensemble, student_init)
    soft = precompute_soft_labels(ensemble, unlabeled)
    student, log = distill_student(student_init, unlabeled, soft, dev, config, log)
    return student, soft, log
