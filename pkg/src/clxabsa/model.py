"""Token encoders, the softmax tagging head and checkpoint I/O.

Every encoder maps a batch of word sequences to word-level hidden states
``[batch, max_len, hidden_dim]`` plus a boolean validity mask. Subword
encoders pool to the first subpiece of each word, so downstream code never
sees subpieces.
"""

from __future__ import annotations

import hashlib
import json
import logging
import warnings
from collections import Counter
from typing import Iterable, Optional, Sequence

import numpy as np
import torch
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from .tagging import NUM_TAGS, TAGS, tag_map, tag_map_hash

logger = logging.getLogger(__name__)

PAD, UNK = "<pad>", "<unk>"
CHECKPOINT_FORMAT = "clxabsa-checkpoint/1"


class CheckpointError(ValueError):
    """Checkpoint missing fields or incompatible with the current label space."""


class Vocabulary:
    """Word -> id table with reserved padding (0) and unknown (1) entries."""

    def __init__(self, words: Iterable[str] = ()):
        self.itos = [PAD, UNK]
        self.stoi = {PAD: 0, UNK: 1}
        for w in words:
            self.add(w)

    def add(self, word: str) -> int:
        if word not in self.stoi:
            self.stoi[word] = len(self.itos)
            self.itos.append(word)
        return self.stoi[word]

    @classmethod
    def build(cls, sentences: Iterable[Sequence[str]], min_count: int = 1) -> "Vocabulary":
        counts = Counter(tok for sent in sentences for tok in sent)
        # sorted for a vocabulary independent of corpus order
        return cls(sorted(w for w, c in counts.items() if c >= min_count))

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, word) -> bool:
        return word in self.stoi

    def lookup(self, tokens: Sequence[str]) -> list:
        return [self.stoi.get(t, 1) for t in tokens]

    def to_list(self) -> list:
        return list(self.itos[2:])

    @classmethod
    def from_list(cls, words: Sequence[str]) -> "Vocabulary":
        return cls(words)


def _truncate(batch: Sequence[Sequence[str]], max_len: int) -> list:
    out = []
    for sent in batch:
        if len(sent) > max_len:
            warnings.warn(f"sequence of {len(sent)} tokens truncated to {max_len}", stacklevel=3)
            sent = sent[:max_len]
        out.append(list(sent))
    return out


class ToyEncoder(nn.Module):
    """Embedding table followed by a 2-layer bidirectional LSTM."""

    kind = "toy"

    def __init__(self, vocab: Vocabulary, hidden_dim: int = 32, embedding_dim: int = 32,
                 num_layers: int = 2, max_len: int = 128):
        super().__init__()
        if hidden_dim % 2:
            raise ValueError("hidden_dim must be even (two LSTM directions)")
        self.vocab = vocab
        self.hidden_dim = hidden_dim
        self.embedding_dim = embedding_dim
        self.num_layers = num_layers
        self.max_len = max_len
        self.embedding = nn.Embedding(len(vocab), embedding_dim, padding_idx=0)
        self.rnn = nn.LSTM(embedding_dim, hidden_dim // 2, num_layers=num_layers,
                           bidirectional=True, batch_first=True)

    def config(self) -> dict:
        return {
            "kind": self.kind,
            "hidden_dim": self.hidden_dim,
            "embedding_dim": self.embedding_dim,
            "num_layers": self.num_layers,
            "max_len": self.max_len,
            "vocab": self.vocab.to_list(),
        }

    @classmethod
    def from_config(cls, cfg: dict) -> "ToyEncoder":
        return cls(Vocabulary.from_list(cfg["vocab"]), cfg["hidden_dim"], cfg["embedding_dim"],
                   cfg["num_layers"], cfg["max_len"])

    def forward(self, batch: Sequence[Sequence[str]]):
        batch = _truncate(batch, self.max_len)
        lengths = [len(s) for s in batch]
        if min(lengths, default=0) == 0:
            raise ValueError("empty sentence in batch")
        width = max(lengths)
        ids = torch.zeros(len(batch), width, dtype=torch.long)
        for i, sent in enumerate(batch):
            ids[i, : len(sent)] = torch.tensor(self.vocab.lookup(sent), dtype=torch.long)
        mask = torch.arange(width)[None, :] < torch.tensor(lengths)[:, None]
        emb = self.embedding(ids)
        packed = pack_padded_sequence(emb, torch.tensor(lengths), batch_first=True, enforce_sorted=False)
        out, _ = self.rnn(packed)
        hidden, _ = pad_packed_sequence(out, batch_first=True, total_length=width)
        return hidden, mask


class PretrainedEncoder(nn.Module):
    """Adapter around a Hugging Face encoder (e.g. multilingual BERT).

    Words are split into subpieces; each word is represented by the hidden
    state of its first subpiece.
    """

    kind = "pretrained"

    def __init__(self, model, tokenizer, tokenizer_path: str = "", max_len: int = 128):
        super().__init__()
        self.model = model
        self.tokenizer = tokenizer
        self.tokenizer_path = tokenizer_path
        self.max_len = max_len
        self.hidden_dim = model.config.hidden_size

    @classmethod
    def from_pretrained(cls, name: str, max_len: int = 128) -> "PretrainedEncoder":
        from transformers import AutoModel, AutoTokenizer

        return cls(AutoModel.from_pretrained(name), AutoTokenizer.from_pretrained(name), name, max_len)

    def config(self) -> dict:
        return {
            "kind": self.kind,
            "hf_config": self.model.config.to_dict(),
            "tokenizer_path": self.tokenizer_path,
            "max_len": self.max_len,
        }

    @classmethod
    def from_config(cls, cfg: dict) -> "PretrainedEncoder":
        from transformers import AutoConfig, AutoModel, AutoTokenizer

        hf = dict(cfg["hf_config"])
        model = AutoModel.from_config(AutoConfig.for_model(hf.pop("model_type"), **hf))
        tokenizer = AutoTokenizer.from_pretrained(cfg["tokenizer_path"])
        return cls(model, tokenizer, cfg["tokenizer_path"], cfg["max_len"])

    def forward(self, batch: Sequence[Sequence[str]]):
        # leave room for [CLS]/[SEP]; words whose first piece falls past the limit are dropped
        enc = self.tokenizer([list(s) for s in batch], is_split_into_words=True, truncation=True,
                             max_length=self.max_len, padding=True, return_tensors="pt")
        out = self.model(input_ids=enc["input_ids"], attention_mask=enc["attention_mask"])
        states = out.last_hidden_state
        n_words = []
        first_piece = []
        for i, sent in enumerate(batch):
            seen = {}
            for pos, w in enumerate(enc.word_ids(i)):
                if w is not None and w not in seen:
                    seen[w] = pos
            kept = [seen[w] for w in range(len(sent)) if w in seen]
            if len(kept) < len(sent):
                warnings.warn(f"sequence of {len(sent)} words truncated to {len(kept)}", stacklevel=2)
            first_piece.append(kept)
            n_words.append(len(kept))
        width = max(n_words)
        hidden = states.new_zeros(len(batch), width, self.hidden_dim)
        mask = torch.zeros(len(batch), width, dtype=torch.bool)
        for i, kept in enumerate(first_piece):
            if kept:
                hidden[i, : len(kept)] = states[i, kept]
                mask[i, : len(kept)] = True
        return hidden, mask


ENCODERS = {ToyEncoder.kind: ToyEncoder, PretrainedEncoder.kind: PretrainedEncoder}


class ClassificationHead(nn.Linear):
    """Affine map to the 13 tag logits; softmax is applied by ``classify``."""

    def __init__(self, hidden_dim: int):
        super().__init__(hidden_dim, NUM_TAGS)


def classify(logits: torch.Tensor) -> torch.Tensor:
    if not torch.isfinite(logits).all():
        raise FloatingPointError("non-finite values reached the classification head")
    return torch.softmax(logits, dim=-1)


class Tagger(nn.Module):
    """Encoder + head producing per-token tag distributions."""

    def __init__(self, encoder: nn.Module):
        super().__init__()
        self.encoder = encoder
        self.head = ClassificationHead(encoder.hidden_dim)

    @property
    def hidden_dim(self) -> int:
        return self.encoder.hidden_dim

    def encode(self, batch):
        hidden, mask = self.encoder(batch)
        if not torch.isfinite(hidden).all():
            raise FloatingPointError("encoder produced non-finite hidden states")
        return hidden, mask

    def forward(self, batch):
        """Return ``(probs, mask, hidden)`` for a batch of token lists."""
        hidden, mask = self.encode(batch)
        probs = classify(self.head(hidden))
        return probs, mask, hidden

    def config(self) -> dict:
        return {"encoder": self.encoder.config()}

    @classmethod
    def from_config(cls, cfg: dict) -> "Tagger":
        enc_cfg = cfg["encoder"]
        try:
            enc_cls = ENCODERS[enc_cfg["kind"]]
        except KeyError:
            raise CheckpointError(f"unknown encoder kind {enc_cfg.get('kind')!r}") from None
        return cls(enc_cls.from_config(enc_cfg))


def build_toy_tagger(sentences: Iterable[Sequence[str]], hidden_dim: int = 32, embedding_dim: int = 32,
                     seed: int = 0, max_len: int = 128) -> Tagger:
    """Fresh toy tagger whose vocabulary covers ``sentences``; init is seeded."""
    vocab = Vocabulary.build(sentences)
    torch.manual_seed(seed)
    return Tagger(ToyEncoder(vocab, hidden_dim, embedding_dim, max_len=max_len))


def predict_tags(probs, mask) -> list:
    """Argmax decode; ties go to the lowest tag index."""
    probs = np.asarray(probs.detach() if torch.is_tensor(probs) else probs)
    mask = np.asarray(mask.detach() if torch.is_tensor(mask) else mask, dtype=bool)
    best = probs.argmax(axis=-1)
    return [[TAGS[j] for j in row[m]] for row, m in zip(best, mask)]


@torch.no_grad()
def predict_proba(model: Tagger, sentences: Sequence[Sequence[str]], batch_size: int = 64) -> list:
    """Per-sentence ``[n, 13]`` float arrays; truncated tails are absent."""
    was_training = model.training
    model.eval()
    out = []
    for i in range(0, len(sentences), batch_size):
        probs, mask, _ = model(sentences[i : i + batch_size])
        for row, m in zip(probs, mask):
            out.append(row[m].numpy().copy())
    model.train(was_training)
    return out


def tag_sentences(model: Tagger, sentences: Sequence[Sequence[str]], batch_size: int = 64) -> list:
    """Predict a full-length tag sequence per sentence (truncated tail gets O)."""
    tags = []
    for sent, probs in zip(sentences, predict_proba(model, sentences, batch_size)):
        row = [TAGS[j] for j in probs.argmax(axis=-1)] if len(probs) else []
        tags.append(row + [TAGS[0]] * (len(sent) - len(row)))
    return tags


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def save_checkpoint(model: Tagger, path, extra: Optional[dict] = None) -> None:
    """Write weights and metadata to a single safetensors file.

    Metadata (one JSON string under the ``clxabsa`` key) carries the model
    config, its hash, the tag-index map and its hash, plus ``extra``.
    """
    from safetensors.torch import save_file

    cfg = model.config()
    meta = {
        "format": CHECKPOINT_FORMAT,
        "model_config": cfg,
        "config_hash": config_hash(cfg),
        "tag_map": tag_map(),
        "tag_map_hash": tag_map_hash(),
        "extra": extra or {},
    }
    tensors = {k: v.detach().contiguous().clone() for k, v in model.state_dict().items()}
    save_file(tensors, str(path), metadata={"clxabsa": json.dumps(meta, sort_keys=True)})


def read_checkpoint_meta(path) -> dict:
    from safetensors import safe_open

    with safe_open(str(path), framework="pt") as fh:
        raw = (fh.metadata() or {}).get("clxabsa")
    if raw is None:
        raise CheckpointError(f"{path}: not a clxabsa checkpoint")
    meta = json.loads(raw)
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: unsupported format {meta.get('format')!r}")
    return meta


def load_checkpoint(path) -> Tagger:
    from safetensors.torch import load_file

    meta = read_checkpoint_meta(path)
    if meta["tag_map"] != tag_map() or meta["tag_map_hash"] != tag_map_hash():
        raise CheckpointError(f"{path}: tag-index map differs from this build's label space")
    if config_hash(meta["model_config"]) != meta["config_hash"]:
        raise CheckpointError(f"{path}: config hash mismatch")
    model = Tagger.from_config(meta["model_config"])
    state = load_file(str(path))
    model = model.to(next(iter(state.values())).dtype)
    model.load_state_dict(state)
    model.eval()
    return model
