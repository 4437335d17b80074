"""Span-level evaluation and semantic-space analysis."""

from __future__ import annotations

import csv
import json
import math
import warnings
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Mapping, NamedTuple, Optional, Sequence

import numpy as np
import torch

from .tagging import SpanAnnotation


@dataclass
class EvalReport:
    true_positives: int
    false_positives: int
    false_negatives: int
    precision: float
    recall: float
    micro_f1: float
    per_language: dict = field(default_factory=dict)

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int, per_language=None) -> "EvalReport":
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        return cls(tp, fp, fn, precision, recall, f1, per_language or {})

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _as_mapping(items, what: str) -> dict:
    if isinstance(items, Mapping):
        return dict(items)
    out = {}
    for sid, spans in items:
        if sid in out:
            raise ValueError(f"duplicate sentence id {sid!r} in {what}")
        out[sid] = spans
    return out


def _span_key(span) -> tuple:
    s = SpanAnnotation(*span)
    return (int(s.start), int(s.end), str(getattr(s.sentiment, "value", s.sentiment)))


def micro_f1(predicted, gold, languages: Optional[Mapping[str, str]] = None) -> EvalReport:
    """Exact-match (boundary and polarity) micro-averaged span F1.

    ``predicted`` and ``gold`` are mappings or ``(id, spans)`` sequences over
    the same sentence ids.
    """
    pred = _as_mapping(predicted, "predictions")
    ref = _as_mapping(gold, "gold")
    if pred.keys() != ref.keys():
        missing = sorted(set(ref) ^ set(pred))[:3]
        raise ValueError(f"prediction and gold sentence ids do not align, e.g. {missing}")
    totals = Counter()
    by_lang = {}
    for sid, gold_spans in ref.items():
        p = Counter(_span_key(s) for s in pred[sid])
        g = Counter(_span_key(s) for s in gold_spans)
        tp = sum((p & g).values())
        counts = Counter(tp=tp, fp=sum(p.values()) - tp, fn=sum(g.values()) - tp)
        totals.update(counts)
        if languages is not None:
            by_lang.setdefault(languages[sid], Counter()).update(counts)
    per_language = {
        lang: EvalReport.from_counts(c["tp"], c["fp"], c["fn"]).to_dict()
        for lang, c in sorted(by_lang.items())
    }
    for rep in per_language.values():
        rep.pop("per_language")
    return EvalReport.from_counts(totals["tp"], totals["fp"], totals["fn"], per_language)


class SpaceSample(NamedTuple):
    id: str
    language: str
    representation: np.ndarray


@torch.no_grad()
def sentence_representations(model, sentences, batch_size: int = 64) -> list:
    """Mean-pooled final hidden states, one SpaceSample per sentence."""
    out = []
    was_training = model.training
    model.eval()
    try:
        for i in range(0, len(sentences), batch_size):
            chunk = sentences[i : i + batch_size]
            if any(len(s.tokens) == 0 for s in chunk):
                raise ValueError("cannot represent an empty sentence")
            hidden, mask = model.encode([s.tokens for s in chunk])
            m = mask.unsqueeze(-1).to(hidden.dtype)
            pooled = (hidden * m).sum(dim=1) / m.sum(dim=1)
            for s, vec in zip(chunk, pooled):
                out.append(SpaceSample(s.id, s.language, vec.double().numpy().copy()))
    finally:
        model.train(was_training)
    return out


def sentence_representation(model, sentence) -> SpaceSample:
    return sentence_representations(model, [sentence])[0]


class CHResult(NamedTuple):
    """Calinski-Harabasz value; ``degenerate`` marks the guarded 0/inf cases."""

    value: float
    degenerate: bool

    def __float__(self) -> float:
        return float(self.value)


def calinski_harabasz_score(X, labels) -> CHResult:
    """Between/within dispersion ratio, each scaled by its degrees of freedom."""
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    if X.ndim != 2 or len(X) != len(labels):
        raise ValueError("X must be [n, d] with one label per row")
    if not np.all(np.isfinite(X)):
        raise ValueError("representations must be finite")
    classes, inverse = np.unique(labels, return_inverse=True)
    n, k = len(X), len(classes)
    if k < 2:
        raise ValueError("need at least 2 non-empty clusters")
    if n <= k:
        raise ValueError(f"need more points ({n}) than clusters ({k})")
    centre = X.mean(axis=0)
    between = 0.0
    within = 0.0
    for c in range(k):
        members = X[inverse == c]
        mean_c = members.mean(axis=0)
        between += len(members) * float(np.sum((mean_c - centre) ** 2))
        within += float(np.sum((members - mean_c) ** 2))
    # relative guard so float noise in identical points still counts as zero scatter
    scale = float(np.sum((X - centre) ** 2)) * 1e-12
    if within <= scale:
        if between <= scale:
            return CHResult(0.0, True)
        return CHResult(math.inf, True)
    return CHResult((between / (k - 1)) / (within / (n - k)), False)


def calinski_harabasz(samples: Sequence[SpaceSample], clusters=None) -> CHResult:
    """CH index of sample representations grouped by ``clusters``.

    ``clusters`` maps sample id -> cluster label; by default samples are
    grouped by language.
    """
    X = np.stack([s.representation for s in samples])
    dims = {len(s.representation) for s in samples}
    if len(dims) != 1:
        raise ValueError("samples disagree on representation size")
    if clusters is None:
        labels = [s.language for s in samples]
    else:
        labels = [clusters[s.id] for s in samples]
    return calinski_harabasz_score(X, labels)


def pca_project(X, n_components: int = 2):
    """Project centred rows onto the leading covariance eigenvectors.

    Each direction's largest-magnitude coordinate is made positive. Returns
    ``(coords, components, eigenvalues)``.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 3:
        raise ValueError("need at least 3 samples")
    if X.shape[1] < n_components:
        raise ValueError(f"need at least {n_components} features")
    centred = X - X.mean(axis=0)
    cov = centred.T @ centred / (X.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:n_components]
    evals = np.clip(evals[order], 0.0, None)
    comps = evecs[:, order].T.copy()
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1
    coords = centred @ comps.T
    tol = max(evals[0], 1e-300) * 1e-10
    low = evals <= tol
    if low.any():
        warnings.warn("data has rank below the requested PCA dimension; trailing coordinates zeroed",
                      stacklevel=2)
        coords[:, low] = 0.0
    return coords, comps, evals


class PCAPoint(NamedTuple):
    id: str
    language: str
    x: float
    y: float


def pca_2d(samples: Sequence[SpaceSample]) -> list:
    X = np.stack([s.representation for s in samples])
    coords, _, _ = pca_project(X, 2)
    return [PCAPoint(s.id, s.language, float(x), float(y)) for s, (x, y) in zip(samples, coords)]


def write_pca_csv(points: Sequence[PCAPoint], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "language", "x", "y"])
        for p in points:
            writer.writerow([p.id, p.language, repr(p.x), repr(p.y)])


def read_pca_csv(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        return [PCAPoint(r["id"], r["language"], float(r["x"]), float(r["y"])) for r in csv.DictReader(fh)]
