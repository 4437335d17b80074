"""Templated bilingual review corpus for desk-scale experiments.

The second language is produced by deterministic word substitution: every
source word maps to an invented word, and some aspect phrases map to
phrases of a different length, so code-switching has to re-tag spans.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import (
    AnnotatedSentence,
    Dataset,
    DatasetRole,
    Direction,
    ParallelPair,
    build_code_switched,
    save_alignments,
    save_corpus,
    strip_labels,
)
from .tagging import Sentiment, SpanAnnotation

ASPECTS = [
    ("pizza",), ("pasta",), ("service",), ("staff",), ("waiter",), ("decor",),
    ("fish",), ("prices",), ("music",), ("bread",), ("steak",), ("soup",),
    ("ice", "cream"), ("wine", "list"), ("dessert", "menu"), ("goat", "cheese"),
    ("lunch", "special"), ("outdoor", "seating"), ("house", "red", "wine"),
    ("chocolate", "lava", "cake"), ("fried", "calamari"), ("tasting", "menu"),
]

OPINIONS = {
    Sentiment.POS: ["great", "delicious", "excellent", "friendly", "amazing", "fresh", "lovely"],
    Sentiment.NEG: ["terrible", "awful", "bland", "rude", "overpriced", "cold", "stale"],
    Sentiment.NEU: ["okay", "average", "decent", "standard", "ordinary", "fine", "acceptable"],
}

NEGATED = {Sentiment.POS: Sentiment.NEG, Sentiment.NEG: Sentiment.POS, Sentiment.NEU: Sentiment.NEU}

FILLERS = [
    ["we", "will", "come", "back", "."],
    ["nothing", "special", "to", "say", "."],
    ["it", "was", "a", "busy", "night", "."],
    ["we", "went", "there", "on", "friday", "."],
    ["my", "friend", "booked", "a", "table", "."],
]

INTENSIFIERS = ["really", "very", "quite", "so"]

# aspect phrases whose translation changes length
LENGTH_CHANGES = {
    ("ice", "cream"): 1,
    ("goat", "cheese"): 1,
    ("fish",): 2,
    ("chocolate", "lava", "cake"): 2,
    ("service",): 2,
}

_SYLLABLES = ["ka", "lo", "mi", "ne", "ru", "sa", "te", "vo", "zi", "pe", "gu", "da", "fo", "ri", "xu"]


def _templates():
    # each template yields (tokens, spans) from chosen aspects and polarities
    def simple(rng, a, pol):
        adj = rng.choice(OPINIONS[pol])
        toks = ["the", *a, "was", adj, "."]
        return toks, [(1, len(a), pol)]

    def prenominal(rng, a, pol):
        adj = rng.choice(OPINIONS[pol])
        toks = [adj, *a, "."]
        return toks, [(1, len(a), pol)]

    def had(rng, a, pol):
        adj = rng.choice(OPINIONS[pol])
        toks = ["we", "had", "the", *a, "and", "it", "was", adj, "."]
        return toks, [(3, 2 + len(a), pol)]

    def intensified(rng, a, pol):
        adj = rng.choice(OPINIONS[pol])
        toks = ["i", "think", "the", *a, "is", rng.choice(INTENSIFIERS), adj, "."]
        return toks, [(3, 2 + len(a), pol)]

    def negated(rng, a, pol):
        base = rng.choice([p for p, q in NEGATED.items() if q is pol])
        adj = rng.choice(OPINIONS[base])
        toks = ["the", *a, "was", "not", adj, "."]
        return toks, [(1, len(a), pol)]

    def contrast(rng, a, pol, b, pol2):
        adj1, adj2 = rng.choice(OPINIONS[pol]), rng.choice(OPINIONS[pol2])
        toks = ["the", *a, "was", adj1, "but", "the", *b, "was", adj2, "."]
        s1 = (1, len(a), pol)
        start2 = len(a) + 5
        return toks, [s1, (start2, start2 + len(b) - 1, pol2)]

    return [simple, prenominal, had, intensified, negated], contrast


def generate_source(n: int, seed: int, language: str = "en", prefix: str = "s") -> list:
    """``n`` labeled source-language sentences."""
    rng = random.Random(seed)
    singles, contrast = _templates()
    polarities = [Sentiment.POS, Sentiment.NEG, Sentiment.NEU]
    out = []
    for i in range(n):
        r = rng.random()
        if r < 0.1:
            toks, spans = list(rng.choice(FILLERS)), []
        elif r < 0.35:
            a, b = rng.sample(ASPECTS, 2)
            toks, spans = contrast(rng, a, rng.choice(polarities), b, rng.choice(polarities))
        else:
            tmpl = rng.choice(singles)
            toks, spans = tmpl(rng, rng.choice(ASPECTS), rng.choice(polarities))
        spans = [SpanAnnotation(*s) for s in spans]
        out.append(AnnotatedSentence.from_spans(f"{prefix}{i:05d}", language, toks, spans))
    return out


def _source_words() -> list:
    words = set()
    for a in ASPECTS:
        words.update(a)
    for adjs in OPINIONS.values():
        words.update(adjs)
    for f in FILLERS:
        words.update(f)
    words.update(INTENSIFIERS)
    words.update(["the", "was", "we", "had", "and", "it", "i", "think", "is", "not", "but"])
    words.discard(".")
    return sorted(words)


def build_lexicon(seed: int = 1234) -> tuple:
    """Word and aspect-phrase translation tables for the invented language."""
    rng = random.Random(seed)
    words = _source_words()
    taken = set(words)
    lexicon = {".": "."}
    for w in words:
        while True:
            cand = "".join(rng.choice(_SYLLABLES) for _ in range(rng.randint(2, 3)))
            if cand not in taken:
                break
        taken.add(cand)
        lexicon[w] = cand
    phrases = {}
    for a in ASPECTS:
        words_t = [lexicon[w] for w in a]
        want = LENGTH_CHANGES.get(a)
        if want is not None and want < len(words_t):
            words_t = ["".join(words_t[: len(words_t) - want + 1])] + words_t[len(words_t) - want + 1 :]
        elif want is not None:
            words_t = words_t + [lexicon[a[-1]] + "o"] * (want - len(words_t))
        phrases[a] = tuple(words_t)
    return lexicon, phrases


def translate(sentence: AnnotatedSentence, lexicon: dict, phrases: dict, language: str,
              new_id: str) -> ParallelPair:
    """Translate word by word, swapping aspect phrases as units."""
    spans = sentence.spans
    tokens, new_spans = [], []
    cursor = 0
    for span in spans:
        tokens.extend(lexicon[w] for w in sentence.tokens[cursor : span.start])
        phrase = phrases[tuple(sentence.tokens[span.start : span.end + 1])]
        start = len(tokens)
        tokens.extend(phrase)
        new_spans.append(SpanAnnotation(start, len(tokens) - 1, span.sentiment))
        cursor = span.end + 1
    tokens.extend(lexicon[w] for w in sentence.tokens[cursor:])
    target = AnnotatedSentence.from_spans(new_id, language, tokens, new_spans)
    return ParallelPair(sentence, target, [(i, i) for i in range(len(spans))])


@dataclass
class BilingualCorpus:
    source_train: Dataset
    translated_train: Dataset
    code_switched_st: Dataset
    code_switched_ts: Dataset
    source_dev: Dataset
    source_test: Dataset
    target_test: Dataset
    target_unlabeled: Dataset
    pairs: list = field(default_factory=list)

    def files(self) -> dict:
        return {
            "source_train": self.source_train,
            "translated_train": self.translated_train,
            "code_switched_st": self.code_switched_st,
            "code_switched_ts": self.code_switched_ts,
            "source_dev": self.source_dev,
            "source_test": self.source_test,
            "target_test": self.target_test,
            "target_unlabeled": self.target_unlabeled,
        }

    def write(self, directory) -> dict:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = {}
        for name, ds in self.files().items():
            paths[name] = directory / f"{name}.jsonl"
            save_corpus(ds, paths[name])
        paths["alignments"] = directory / "alignments.jsonl"
        save_alignments(self.pairs, paths["alignments"])
        return paths


def make_bilingual_corpus(n_train: int = 400, n_dev: int = 100, n_test: int = 200,
                          n_unlabeled: int = 400, seed: int = 0, source_language: str = "en",
                          target_language: str = "xx") -> BilingualCorpus:
    lexicon, phrases = build_lexicon()
    lp = (source_language, target_language)

    def parallel(n, split_seed, prefix):
        src = generate_source(n, split_seed, source_language, f"{prefix}-{source_language}-")
        return [translate(s, lexicon, phrases, target_language, s.id.replace(source_language, target_language, 1))
                for s in src]

    train_pairs = parallel(n_train, seed * 10 + 1, "train")
    dev_src = generate_source(n_dev, seed * 10 + 2, source_language, f"dev-{source_language}-")
    test_pairs = parallel(n_test, seed * 10 + 3, "test")
    pool_pairs = parallel(n_unlabeled, seed * 10 + 4, "pool")
    return BilingualCorpus(
        source_train=Dataset([p.source for p in train_pairs], DatasetRole.SOURCE, lp),
        translated_train=Dataset([p.target for p in train_pairs], DatasetRole.TRANSLATED, lp),
        code_switched_st=build_code_switched(train_pairs, Direction.S_T),
        code_switched_ts=build_code_switched(train_pairs, Direction.T_S),
        source_dev=Dataset(dev_src, DatasetRole.SOURCE, lp),
        source_test=Dataset([p.source for p in test_pairs], DatasetRole.SOURCE, lp),
        target_test=Dataset([p.target for p in test_pairs], DatasetRole.TRANSLATED, lp),
        target_unlabeled=strip_labels(Dataset([p.target for p in pool_pairs], DatasetRole.TRANSLATED, lp)),
        pairs=train_pairs,
    )
