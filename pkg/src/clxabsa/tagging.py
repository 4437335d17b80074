"""Label space for aspect sentiment tagging and span <-> tag conversion.

Tags follow the BIOES scheme crossed with three polarities plus ``O``,
giving 13 labels with a fixed index order::

    0  O
    1  B-POS   2  B-NEU   3  B-NEG
    4  I-POS   5  I-NEU   6  I-NEG
    7  E-POS   8  E-NEU   9  E-NEG
    10 S-POS   11 S-NEU   12 S-NEG
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional, Sequence, Union


class Boundary(str, enum.Enum):
    B = "B"
    I = "I"  # noqa: E741
    E = "E"
    S = "S"
    O = "O"  # noqa: E741


class Sentiment(str, enum.Enum):
    POS = "POS"
    NEU = "NEU"
    NEG = "NEG"


class SentimentClass(enum.IntEnum):
    """Coarse grouping used by the sentiment-level contrastive objective."""

    POS = 0
    NEU = 1
    NEG = 2
    O = 3  # noqa: E741


_POLARITIES = (Sentiment.POS, Sentiment.NEU, Sentiment.NEG)


@dataclass(frozen=True)
class LabelTag:
    boundary: Boundary
    sentiment: Optional[Sentiment] = None

    def __post_init__(self):
        object.__setattr__(self, "boundary", Boundary(self.boundary))
        if self.sentiment is not None:
            object.__setattr__(self, "sentiment", Sentiment(self.sentiment))
        if (self.boundary is Boundary.O) != (self.sentiment is None):
            raise ValueError(
                f"sentiment must be absent exactly for O tags, got {self.boundary.value}/{self.sentiment}"
            )

    @property
    def name(self) -> str:
        if self.boundary is Boundary.O:
            return "O"
        return f"{self.boundary.value}-{self.sentiment.value}"

    @property
    def index(self) -> int:
        return TAG_TO_INDEX[self.name]

    @classmethod
    def from_string(cls, name: str) -> "LabelTag":
        try:
            return TAGS[TAG_TO_INDEX[name]]
        except KeyError:
            raise ValueError(f"unknown tag {name!r}") from None

    @classmethod
    def from_index(cls, index: int) -> "LabelTag":
        if not 0 <= index < NUM_TAGS:
            raise ValueError(f"tag index {index} out of range")
        return TAGS[index]

    def __str__(self) -> str:
        return self.name

    def __repr__(self) -> str:
        return f"LabelTag({self.name})"


def _build_tags() -> tuple:
    tags = [LabelTag(Boundary.O)]
    for boundary in (Boundary.B, Boundary.I, Boundary.E, Boundary.S):
        for pol in _POLARITIES:
            tags.append(LabelTag(boundary, pol))
    return tuple(tags)


TAGS: tuple = _build_tags()
TAG_NAMES: tuple = tuple(t.name for t in TAGS)
TAG_TO_INDEX: dict = {name: i for i, name in enumerate(TAG_NAMES)}
NUM_TAGS = len(TAGS)
O_TAG = TAGS[0]


def tag_map() -> dict:
    """Serializable tag-name -> index map stored alongside every model."""
    return dict(TAG_TO_INDEX)


def tag_map_hash(mapping: Optional[dict] = None) -> str:
    mapping = tag_map() if mapping is None else mapping
    blob = json.dumps(mapping, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


TagLike = Union[LabelTag, str, int]


def as_tag(tag: TagLike) -> LabelTag:
    if isinstance(tag, LabelTag):
        return tag
    if isinstance(tag, str):
        return LabelTag.from_string(tag)
    return LabelTag.from_index(int(tag))


class SpanAnnotation(NamedTuple):
    """Inclusive token span of one aspect term with its polarity."""

    start: int
    end: int
    sentiment: Sentiment


class SpanError(ValueError):
    """Raised for out-of-range or overlapping spans."""

    def __init__(self, message: str, span=None):
        super().__init__(message)
        self.span = span


def _normalize_span(span) -> SpanAnnotation:
    start, end, sentiment = span
    return SpanAnnotation(int(start), int(end), Sentiment(sentiment))


def encode_spans(length: int, spans: Iterable) -> list:
    """Convert aspect spans to a BIOES tag sequence of ``length`` tokens."""
    if length < 0:
        raise ValueError("length must be non-negative")
    tags = [O_TAG] * length
    taken = [False] * length
    for raw in spans:
        span = _normalize_span(raw)
        if not 0 <= span.start <= span.end < length:
            raise SpanError(f"span {tuple(span)} out of range for length {length}", span)
        if any(taken[span.start : span.end + 1]):
            raise SpanError(f"span {tuple(span)} overlaps another span", span)
        for i in range(span.start, span.end + 1):
            taken[i] = True
        pol = span.sentiment
        if span.start == span.end:
            tags[span.start] = LabelTag(Boundary.S, pol)
            continue
        tags[span.start] = LabelTag(Boundary.B, pol)
        for i in range(span.start + 1, span.end):
            tags[i] = LabelTag(Boundary.I, pol)
        tags[span.end] = LabelTag(Boundary.E, pol)
    return tags


def decode_tags(tags: Sequence[TagLike]) -> list:
    """Recover spans from a tag sequence.

    Ill-formed fragments (I/E without an open B of the same polarity,
    B never closed by E) are dropped, never repaired.
    """
    spans = []
    open_start = None
    open_pol = None
    for i, raw in enumerate(tags):
        tag = as_tag(raw)
        b = tag.boundary
        if b is Boundary.S:
            spans.append(SpanAnnotation(i, i, tag.sentiment))
            open_start = None
        elif b is Boundary.B:
            open_start, open_pol = i, tag.sentiment
        elif b is Boundary.I:
            if open_start is None or tag.sentiment is not open_pol:
                open_start = None
        elif b is Boundary.E:
            if open_start is not None and tag.sentiment is open_pol:
                spans.append(SpanAnnotation(open_start, i, open_pol))
            open_start = None
        else:
            open_start = None
    return spans


def sentiment_projection(tag: TagLike) -> SentimentClass:
    tag = as_tag(tag)
    if tag.sentiment is None:
        return SentimentClass.O
    return SentimentClass[tag.sentiment.value]


# index lookup used to regroup tag indices by polarity inside batched losses
SENTIMENT_OF_INDEX: tuple = tuple(int(sentiment_projection(t)) for t in TAGS)


def is_well_formed(tags: Sequence[TagLike]) -> bool:
    """True when re-encoding the decoded spans gives back ``tags``."""
    tags = [as_tag(t) for t in tags]
    return encode_spans(len(tags), decode_tags(tags)) == tags
