"""Semantic entropy over sampled answers, and belief divergence between agents.

Answers are clustered by exact match after normalization: case, surrounding
whitespace and punctuation are dropped, numbers are canonicalized ("8.0" and
"8" share a cluster) and bare option letters are upper-cased.
"""

from __future__ import annotations

import math
import re
import string
from collections import Counter
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from typing import Mapping

from .rng import substream

UNPARSABLE_CLUSTER = "<unparsable>"

_NUMBER = re.compile(r"^[-+]?(\d[\d,]*)?(\.\d+)?$")
_OPTION = re.compile(r"^\(?([A-Za-z])[).:]?$")
_PUNCT = str.maketrans("", "", string.punctuation)


class EmptyDistribution(ValueError):
    pass


def canonical_number(text: str) -> str | None:
    s = text.strip().lstrip("$").rstrip(".").replace(",", "")
    if not s or not _NUMBER.match(s) or not any(c.isdigit() for c in s):
        return None
    try:
        d = Decimal(s)
    except InvalidOperation:
        return None
    if d == 0:
        return "0"
    d = d.normalize()
    out = format(d, "f")
    if "." in out:
        out = out.rstrip("0").rstrip(".")
    return out


def normalize(answer: str) -> str:
    """Cluster key for a short-form answer. Returns "" if nothing remains."""
    s = answer.strip()
    num = canonical_number(s)
    if num is not None:
        return num
    m = _OPTION.match(s)
    if m:
        return m.group(1).upper()
    return " ".join(s.lower().translate(_PUNCT).split())


@dataclass(frozen=True)
class AnswerDistribution:
    counts: Mapping[str, int]

    def __post_init__(self):
        counts = dict(sorted(self.counts.items()))
        if any(c < 1 for c in counts.values()):
            raise ValueError("every cluster count must be >= 1")
        object.__setattr__(self, "counts", counts)

    @classmethod
    def from_answers(cls, answers) -> "AnswerDistribution":
        return cls(Counter(answers))

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def probs(self) -> dict[str, float]:
        total = self.total
        if total == 0:
            raise EmptyDistribution("distribution has no samples")
        return {c: n / total for c, n in self.counts.items()}

    def to_json(self) -> dict:
        return dict(self.counts)


def semantic_entropy(d: AnswerDistribution) -> float:
    """Shannon entropy (nats) of the cluster frequencies."""
    total = d.total
    if total == 0:
        raise EmptyDistribution("distribution has no samples")
    h = 0.0
    for c in d.counts.values():
        pc = c / total
        h -= pc * math.log(pc)
    return h if h > 0.0 else 0.0


def divergence(a: AnswerDistribution, b: AnswerDistribution) -> float:
    """Total variation distance between two answer distributions."""
    pa, pb = a.probs(), b.probs()
    keys = sorted(set(pa) | set(pb))
    return 0.5 * sum(abs(pa.get(c, 0.0) - pb.get(c, 0.0)) for c in keys)


def sample_distribution(agent, item, samples: int, seed: int, neighbor_msgs=(), round: int = 0):
    """Query ``agent`` ``samples`` times and tally normalized answers.

    Each sample gets its own sub-stream of ``seed``; the tally does not depend
    on the order in which samples complete.  Unparsable replies are counted in
    a dedicated cluster so that the distribution is never empty.

    Returns ``(distribution, messages)``; the messages carry token costs.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    msgs = [
        agent.answer(item, list(neighbor_msgs), round, substream(seed, "uq-sample", i))
        for i in range(samples)
    ]
    tally = Counter(m.answer if m.answer is not None else UNPARSABLE_CLUSTER for m in msgs)
    return AnswerDistribution(tally), msgs


@dataclass(frozen=True)
class AgentUncertainty:
    agent: int
    distribution: AnswerDistribution
    entropy: float


@dataclass(frozen=True)
class UncertaintyReport:
    per_agent: tuple[AgentUncertainty, ...]

    @classmethod
    def from_distributions(cls, dists) -> "UncertaintyReport":
        return cls(tuple(AgentUncertainty(i, d, semantic_entropy(d)) for i, d in enumerate(dists)))

    @property
    def entropies(self) -> list[float]:
        return [a.entropy for a in self.per_agent]

    @property
    def ranking_confident(self) -> list[int]:
        return [a.agent for a in sorted(self.per_agent, key=lambda a: (a.entropy, a.agent))]

    @property
    def ranking_uncertain(self) -> list[int]:
        return [a.agent for a in sorted(self.per_agent, key=lambda a: (-a.entropy, a.agent))]

    def to_json(self) -> dict:
        return {
            "entropy": [a.entropy for a in self.per_agent],
            "distributions": [a.distribution.to_json() for a in self.per_agent],
            "ranking_confident": self.ranking_confident,
            "ranking_uncertain": self.ranking_uncertain,
        }
