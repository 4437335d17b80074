"""Training objectives on per-token tag distributions.

All losses take probability vectors (softmax outputs), not logits, and are
written with torch ops so gradients flow back into the encoder.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Optional

import torch
import torch.nn.functional as F

from .tagging import SENTIMENT_OF_INDEX

PROB_FLOOR = 1e-12


class Level(str, enum.Enum):
    TOKEN = "token"
    SENTIMENT = "sentiment"
    NONE = "none"


@dataclass(frozen=True)
class ContrastiveConfig:
    level: Level = Level.TOKEN
    temperature: float = 0.07
    alpha: float = 0.5
    include_O: bool = True
    max_O_per_batch: Optional[int] = None
    reduction: str = "sum"

    def __post_init__(self):
        object.__setattr__(self, "level", Level(self.level))
        if self.reduction not in ("sum", "mean"):
            raise ValueError(f"reduction must be 'sum' or 'mean', got {self.reduction!r}")
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.max_O_per_batch is not None and self.max_O_per_batch < 0:
            raise ValueError("max_O_per_batch must be non-negative")


class ContrastiveBatch(NamedTuple):
    probs: torch.Tensor  # [K, 13]
    keys: torch.Tensor  # [K] group ids


def cross_entropy(probs: torch.Tensor, gold: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean over sentences of the mean token negative log-likelihood.

    ``probs`` is ``[N, L, 13]``, ``gold`` and ``mask`` are ``[N, L]``.
    Sentences without valid tokens are left out of the outer mean.
    """
    mask = mask.bool()
    counts = mask.sum(dim=1)
    if int(counts.sum()) == 0:
        raise ValueError("cross_entropy needs at least one valid token")
    gold = gold.masked_fill(~mask, 0)
    picked = probs.gather(-1, gold.unsqueeze(-1)).squeeze(-1)
    nll = -torch.log(picked.clamp_min(PROB_FLOOR))
    nll = nll.masked_fill(~mask, 0.0)
    keep = counts > 0
    per_sentence = nll.sum(dim=1)[keep] / counts[keep]
    return per_sentence.mean()


def group_keys(tag_indices: torch.Tensor, level) -> torch.Tensor:
    """Positive-set grouping keys: the tag itself or its polarity class."""
    level = Level(level)
    if level is Level.TOKEN:
        return tag_indices
    if level is Level.SENTIMENT:
        table = torch.tensor(SENTIMENT_OF_INDEX, dtype=torch.long)
        return table[tag_indices]
    raise ValueError("level NONE has no contrastive grouping")


def contrastive_pool(probs: torch.Tensor, gold: torch.Tensor, mask: torch.Tensor,
                     config: ContrastiveConfig) -> ContrastiveBatch:
    """Flatten every valid token of a batch into one contrastive pool."""
    mask = mask.bool()
    g = probs[mask]
    tags = gold[mask]
    is_o = tags == 0
    keep = torch.ones_like(tags, dtype=torch.bool)
    if not config.include_O:
        keep &= ~is_o
    elif config.max_O_per_batch is not None:
        # pool order is already shuffled by the sampler; keep the first N O tokens
        o_rank = torch.cumsum(is_o.long(), dim=0)
        keep &= ~is_o | (o_rank <= config.max_O_per_batch)
    return ContrastiveBatch(g[keep], group_keys(tags[keep], config.level))


def supervised_contrastive(probs: torch.Tensor, keys: torch.Tensor, temperature: float,
                           reduction: str = "sum") -> torch.Tensor:
    """Sum over anchors of the mean positive log-likelihood, negated.

    Similarities are cosine similarities between probability vectors; each
    anchor's softmax runs over every other token in the pool. Anchors with no
    positive partner contribute nothing. ``reduction="mean"`` divides by the
    number of contributing anchors instead of summing.
    """
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    k = probs.shape[0]
    if k < 2:
        warnings.warn("contrastive pool has fewer than 2 tokens; loss is 0", stacklevel=2)
        return probs.sum() * 0.0
    unit = F.normalize(probs, dim=1, eps=PROB_FLOOR)
    sim = unit @ unit.T / temperature
    self_mask = torch.eye(k, dtype=torch.bool)
    sim = sim.masked_fill(self_mask, float("-inf"))
    sim = sim - sim.max(dim=1, keepdim=True).values.detach()
    log_prob = sim - torch.logsumexp(sim, dim=1, keepdim=True)
    positives = (keys[:, None] == keys[None, :]) & ~self_mask
    n_pos = positives.sum(dim=1)
    pos_sum = torch.where(positives, log_prob, torch.zeros_like(log_prob)).sum(dim=1)
    has_pos = n_pos > 0
    per_anchor = -pos_sum[has_pos] / n_pos[has_pos]
    if reduction == "mean":
        return per_anchor.sum() / max(int(has_pos.sum()), 1)
    if reduction != "sum":
        raise ValueError(f"unknown reduction {reduction!r}")
    return per_anchor.sum()


def contrastive_loss(batch: ContrastiveBatch, config: ContrastiveConfig) -> torch.Tensor:
    return supervised_contrastive(batch.probs, batch.keys, config.temperature, config.reduction)


def combined_loss(ce, cl, alpha: float):
    return alpha * cl + (1.0 - alpha) * ce
