"""Annotated datasets, JSONL I/O and code-switched corpus construction."""

from __future__ import annotations

import enum
import json
import logging
import random
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .tagging import (
    LabelTag,
    SpanAnnotation,
    decode_tags,
    encode_spans,
    is_well_formed,
)

logger = logging.getLogger(__name__)


class CorpusError(ValueError):
    """Invalid record or dataset contents."""


class DatasetRole(str, enum.Enum):
    SOURCE = "source"
    TRANSLATED = "translated"
    CODE_SWITCHED_ST = "code_switched_st"
    CODE_SWITCHED_TS = "code_switched_ts"
    UNLABELED = "unlabeled"
    # result of merging datasets with different labeled roles
    MERGED = "merged"


class Direction(str, enum.Enum):
    S_T = "s2t"
    T_S = "t2s"


@dataclass
class AnnotatedSentence:
    id: str
    language: str
    tokens: list
    tags: Optional[list] = None

    def __post_init__(self):
        self.tokens = list(self.tokens)
        if self.tags is not None:
            self.tags = [t if isinstance(t, LabelTag) else LabelTag.from_string(t) for t in self.tags]
            if len(self.tags) != len(self.tokens):
                raise CorpusError(
                    f"sentence {self.id!r}: {len(self.tags)} tags for {len(self.tokens)} tokens"
                )

    @property
    def labeled(self) -> bool:
        return self.tags is not None

    @property
    def spans(self) -> list:
        if self.tags is None:
            raise CorpusError(f"sentence {self.id!r} is unlabeled")
        return decode_tags(self.tags)

    @classmethod
    def from_spans(cls, id, language, tokens, spans) -> "AnnotatedSentence":
        return cls(id, language, tokens, encode_spans(len(tokens), spans))

    def to_record(self) -> dict:
        record = {"id": self.id, "language": self.language, "tokens": list(self.tokens)}
        if self.tags is not None:
            record["tags"] = [t.name for t in self.tags]
        return record


@dataclass
class Dataset:
    sentences: list
    role: DatasetRole
    language_pair: tuple = (None, None)

    def __post_init__(self):
        self.role = DatasetRole(self.role)
        self.language_pair = tuple(self.language_pair)
        unlabeled = [s.id for s in self.sentences if not s.labeled]
        if self.role is DatasetRole.UNLABELED:
            if len(unlabeled) != len(self.sentences):
                raise CorpusError("unlabeled dataset contains tagged sentences")
        elif unlabeled:
            raise CorpusError(f"{self.role.value} dataset has untagged sentences, e.g. {unlabeled[0]!r}")

    def __len__(self) -> int:
        return len(self.sentences)

    def __iter__(self):
        return iter(self.sentences)

    def __getitem__(self, i):
        return self.sentences[i]

    @property
    def labeled(self) -> bool:
        return self.role is not DatasetRole.UNLABELED

    @property
    def languages(self) -> list:
        return sorted({s.language for s in self.sentences})


@dataclass
class ParallelPair:
    """A source sentence, its translation and the aspect alignment between them.

    ``alignment`` holds ``(source_span_index, target_span_index)`` pairs
    indexing the decoded span lists of the two sentences.
    """

    source: AnnotatedSentence
    target: AnnotatedSentence
    alignment: list = field(default_factory=list)

    def check_alignment(self) -> Optional[str]:
        """Return a description of the first alignment defect, or None."""
        src_spans, tgt_spans = self.source.spans, self.target.spans
        if len(src_spans) != len(tgt_spans):
            return f"{len(src_spans)} source aspects vs {len(tgt_spans)} target aspects"
        src_idx = [a for a, _ in self.alignment]
        tgt_idx = [b for _, b in self.alignment]
        if sorted(src_idx) != list(range(len(src_spans))):
            return "alignment does not cover every source aspect exactly once"
        if sorted(tgt_idx) != list(range(len(tgt_spans))):
            return "alignment does not cover every target aspect exactly once"
        for a, b in self.alignment:
            if src_spans[a].sentiment != tgt_spans[b].sentiment:
                return f"aligned aspects {a}->{b} disagree on sentiment"
        return None


def _parse_record(obj, lineno: int, path) -> AnnotatedSentence:
    where = f"{path}:{lineno}"
    if not isinstance(obj, dict):
        raise CorpusError(f"{where}: record must be a JSON object")
    for key, typ in (("id", str), ("language", str), ("tokens", list)):
        if not isinstance(obj.get(key), typ):
            raise CorpusError(f"{where}: field {key!r} missing or not a {typ.__name__}")
    if not all(isinstance(t, str) for t in obj["tokens"]):
        raise CorpusError(f"{where}: tokens must be strings")
    tags = obj.get("tags")
    if tags is not None:
        if not isinstance(tags, list):
            raise CorpusError(f"{where}: field 'tags' must be a list")
        try:
            tags = [LabelTag.from_string(t) for t in tags]
        except (ValueError, TypeError) as exc:
            raise CorpusError(f"{where}: tag vocabulary mismatch: {exc}") from None
        if len(tags) != len(obj["tokens"]):
            raise CorpusError(
                f"{where}: {len(tags)} tags for {len(obj['tokens'])} tokens"
            )
        if not is_well_formed(tags):
            raise CorpusError(f"{where}: ill-formed tag sequence")
    return AnnotatedSentence(obj["id"], obj["language"], obj["tokens"], tags)


def read_sentences(path) -> list:
    sentences = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            sentences.append(_parse_record(obj, lineno, path))
    return sentences


def load_corpus(path, expect_role=DatasetRole.SOURCE, language_pair=(None, None)) -> Dataset:
    """Read a JSONL corpus and validate every record."""
    role = DatasetRole(expect_role)
    sentences = read_sentences(path)
    if not sentences:
        warnings.warn(f"{path}: corpus is empty", stacklevel=2)
    if role is DatasetRole.UNLABELED:
        sentences = [replace(s, tags=None) for s in sentences]
    else:
        for s in sentences:
            if s.tags is None:
                raise CorpusError(f"{path}: sentence {s.id!r} has no tags but role is {role.value}")
    if language_pair == (None, None) and sentences:
        language_pair = (sentences[0].language, None)
    logger.info("loaded %d sentences from %s", len(sentences), path)
    return Dataset(sentences, role, language_pair)


def save_corpus(ds: Dataset, path) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in ds.sentences:
            fh.write(json.dumps(s.to_record(), ensure_ascii=False) + "\n")


def load_alignments(path) -> dict:
    """Read an alignment JSONL into ``{(source_id, target_id): [(i, j), ...]}``."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                key = (str(obj["source_id"]), str(obj["target_id"]))
                pairs = [(int(a), int(b)) for a, b in obj["alignments"]]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise CorpusError(f"{path}:{lineno}: malformed alignment record ({exc})") from None
            out[key] = pairs
    return out


def save_alignments(pairs: Iterable[ParallelPair], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in pairs:
            rec = {
                "source_id": p.source.id,
                "target_id": p.target.id,
                "alignments": [[a, b] for a, b in p.alignment],
            }
            fh.write(json.dumps(rec) + "\n")


def pair_datasets(source: Dataset, target: Dataset, alignments: dict) -> list:
    """Build ParallelPairs from two datasets and an alignment table.

    Source sentences without an alignment record are paired with an empty
    alignment so ``build_code_switched`` can count them as skipped.
    """
    by_id = {s.id: s for s in target.sentences}
    by_source = {}
    for (sid, tid) in alignments:
        by_source.setdefault(sid, tid)
    pairs = []
    for s in source.sentences:
        tid = by_source.get(s.id)
        if tid is None or tid not in by_id:
            logger.warning("no aligned translation for source sentence %r", s.id)
            continue
        pairs.append(ParallelPair(s, by_id[tid], list(alignments[(s.id, tid)])))
    return pairs


def _switch(base: AnnotatedSentence, donor: AnnotatedSentence, mapping: dict, suffix: str) -> AnnotatedSentence:
    base_spans = base.spans
    donor_spans = donor.spans
    tokens, spans = [], []
    cursor = 0
    for i, span in enumerate(base_spans):
        tokens.extend(base.tokens[cursor : span.start])
        repl = donor_spans[mapping[i]]
        start = len(tokens)
        tokens.extend(donor.tokens[repl.start : repl.end + 1])
        spans.append(SpanAnnotation(start, len(tokens) - 1, span.sentiment))
        cursor = span.end + 1
    tokens.extend(base.tokens[cursor:])
    return AnnotatedSentence.from_spans(f"{base.id}{suffix}", base.language, tokens, spans)


def build_code_switched(pairs: Sequence[ParallelPair], direction, return_skipped: bool = False):
    """Swap aligned aspect terms between parallel sentences.

    ``s2t`` keeps the source context and inserts target aspect terms;
    ``t2s`` keeps the target context and inserts source aspect terms.
    Tags are regenerated from the spans so span length may change freely.
    """
    direction = Direction(direction)
    out, skipped = [], []
    for pair in pairs:
        defect = pair.check_alignment()
        if defect is not None:
            warnings.warn(f"skipping pair {pair.source.id!r}/{pair.target.id!r}: {defect}", stacklevel=2)
            skipped.append(pair.source.id)
            continue
        if direction is Direction.S_T:
            mapping = dict(pair.alignment)
            out.append(_switch(pair.source, pair.target, mapping, "#st"))
        else:
            mapping = {b: a for a, b in pair.alignment}
            out.append(_switch(pair.target, pair.source, mapping, "#ts"))
    if skipped:
        logger.warning("%d of %d pairs skipped during code-switching", len(skipped), len(pairs))
    if pairs:
        lang_pair = (pairs[0].source.language, pairs[0].target.language)
    else:
        lang_pair = (None, None)
    role = DatasetRole.CODE_SWITCHED_ST if direction is Direction.S_T else DatasetRole.CODE_SWITCHED_TS
    ds = Dataset(out, role, lang_pair)
    if return_skipped:
        return ds, skipped
    return ds


def strip_labels(ds: Dataset) -> Dataset:
    sentences = [replace(s, tokens=list(s.tokens), tags=None) for s in ds.sentences]
    return Dataset(sentences, DatasetRole.UNLABELED, ds.language_pair)


def merge(datasets: Sequence[Dataset], shuffle_seed: int) -> Dataset:
    """Concatenate datasets and shuffle deterministically."""
    if not datasets:
        raise CorpusError("nothing to merge")
    labeled = {ds.labeled for ds in datasets}
    if len(labeled) > 1:
        raise CorpusError("cannot merge labeled and unlabeled datasets")
    sentences = [s for ds in datasets for s in ds.sentences]
    random.Random(shuffle_seed).shuffle(sentences)
    roles = {ds.role for ds in datasets}
    role = roles.pop() if len(roles) == 1 else DatasetRole.MERGED
    pairs = {ds.language_pair for ds in datasets}
    lang_pair = pairs.pop() if len(pairs) == 1 else (None, None)
    return Dataset(sentences, role, lang_pair)
