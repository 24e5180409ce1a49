"""Controlled-redundancy benchmark generation.

Quality-filter clusters, pick ten base opinions (cluster representatives
first, MMR over the noise pool to fill), then expand them with a duplication
count vector into grouped or shuffled input sequences.
"""
from __future__ import annotations

import enum
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .clustering import CohesionStats, cosine_matrix
from .domain import GroupKey, OpinionError, read_jsonl, stable_hash

MAX_CENTROID_DISTANCE = 0.2
MIN_PAIRWISE_SIMILARITY = 0.7
BASE_SIZE = 10
_TIE_EPS = 1e-12


class InsufficientOpinions(OpinionError):
    def __init__(self, group: GroupKey | None, available: int, target: int = BASE_SIZE):
        where = group.slug() if group is not None else "<group>"
        super().__init__(f"{where}: {available} candidate opinions, need {target}")
        self.group = group
        self.available = available


class BaseSizeMismatch(OpinionError, ValueError):
    pass


def _stats(item) -> CohesionStats:
    return item if isinstance(item, CohesionStats) else item.cohesion


def passes_quality(stats: CohesionStats) -> bool:
    return (
        stats.avg_centroid_distance <= MAX_CENTROID_DISTANCE
        and stats.avg_pairwise_similarity >= MIN_PAIRWISE_SIMILARITY
    )


def filter_quality_clusters(clusters: Iterable) -> list:
    """Keep items whose cohesion (the item itself or its ``.cohesion``) passes both bounds."""
    return [c for c in clusters if passes_quality(_stats(c))]


# --- MMR --------------------------------------------------------------------------

@dataclass(frozen=True)
class MmrConfig:
    lam: float = 0.8
    max_selected: int = BASE_SIZE

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if self.max_selected < 1:
            raise ValueError("max_selected must be positive")


def mmr_select(embeddings, cfg: MmrConfig = MmrConfig()) -> list[int]:
    """Greedy MMR; relevance is a candidate's mean cosine similarity to the rest of the pool."""
    E = np.asarray(embeddings, dtype=np.float64)
    n = len(E)
    if n == 0:
        raise ValueError("mmr_select needs a non-empty pool")
    S = cosine_matrix(E)
    S = (S + S.T) / 2.0  # the matmul is not bit-symmetric, and ties must stay ties
    relevance = (S.sum(axis=1) - np.diag(S)) / (n - 1) if n > 1 else np.zeros(1)
    penalty = np.zeros(n)  # max similarity to anything selected; 0 while nothing is
    chosen: list[int] = []
    available = np.ones(n, dtype=bool)
    for _ in range(min(cfg.max_selected, n)):
        score = (1.0 - cfg.lam) * relevance - cfg.lam * penalty
        score = np.where(available, score, -np.inf)
        # equal up to rounding counts as a tie; the lowest index wins
        pick = int(np.flatnonzero(score >= score.max() - _TIE_EPS)[0])
        chosen.append(pick)
        available[pick] = False
        penalty = S[pick] if len(chosen) == 1 else np.maximum(penalty, S[pick])
    return chosen


# --- strategic selection ------------------------------------------------------------

@dataclass(frozen=True)
class Candidate:
    opinion_id: str
    text: str


@dataclass(frozen=True)
class QualityCluster:
    cluster_id: int
    members: tuple[Candidate, ...]


@dataclass(frozen=True)
class BaseOpinion:
    opinion_id: str
    text: str
    origin: str  # "cluster" or "mmr"
    cluster_id: int | None = None

    def to_dict(self) -> dict:
        return {"opinion_id": self.opinion_id, "text": self.text, "origin": self.origin, "cluster_id": self.cluster_id}


def strategic_select(
    quality_clusters: Sequence[QualityCluster],
    noise_pool: Sequence[Candidate],
    noise_embeddings,
    target: int = BASE_SIZE,
    seed: int = 0,
    group: GroupKey | None = None,
    lam: float = 0.8,
) -> list[BaseOpinion]:
    available = len(quality_clusters) + len(noise_pool)
    if available < target:
        raise InsufficientOpinions(group, available, target)
    slug = group.slug() if group is not None else ""
    ordered = sorted(quality_clusters, key=lambda c: (-len(c.members), c.cluster_id))
    picks: list[BaseOpinion] = []
    for c in ordered[:target]:
        rng = random.Random(stable_hash(seed, slug, c.cluster_id))
        m = c.members[rng.randrange(len(c.members))]
        picks.append(BaseOpinion(m.opinion_id, m.text, "cluster", c.cluster_id))
    need = target - len(picks)
    if need > 0:
        for i in mmr_select(noise_embeddings, MmrConfig(lam, need)):
            picks.append(BaseOpinion(noise_pool[i].opinion_id, noise_pool[i].text, "mmr"))
    return picks


# --- duplication patterns ------------------------------------------------------------

@dataclass(frozen=True)
class DuplicationPattern:
    pattern_id: int
    counts: tuple[int, ...]
    description: str = ""

    def __post_init__(self):
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        if len(self.counts) != BASE_SIZE:
            raise ValueError(f"pattern {self.pattern_id}: expected {BASE_SIZE} counts, got {len(self.counts)}")
        if any(c < 1 for c in self.counts):
            raise ValueError(f"pattern {self.pattern_id}: counts must be >= 1")

    @property
    def total(self) -> int:
        return sum(self.counts)

    def to_dict(self) -> dict:
        return {"id": self.pattern_id, "counts": list(self.counts), "description": self.description}

    @classmethod
    def from_dict(cls, d: Mapping) -> "DuplicationPattern":
        return cls(int(d["id"]), tuple(d["counts"]), d.get("description", ""))


_BUILTIN = (
    (1, (3000, 5, 5, 5, 5, 5, 5, 5, 5, 3000), "Extreme redundancy at boundaries"),
    (2, (5, 5, 5, 3000, 3000, 5, 5, 5, 5, 5), "Extreme redundancy in the middle"),
    (3, (3000, 3000, 5, 5, 5, 5, 5, 5, 5, 5), "Extreme redundancy at the start"),
    (4, (3000, 5, 5, 3000, 5, 5, 5, 5, 5, 5), "Extreme redundancy scattered across positions"),
    (5, (2000, 2000, 5, 5, 5, 5, 5, 5, 5, 2000), "High redundancy at boundaries"),
    (6, (2000, 2000, 2000, 5, 5, 5, 5, 5, 5, 5), "High redundancy at the start"),
    (7, (5, 5, 5, 5, 5, 5, 5, 2000, 2000, 2000), "High redundancy at the end"),
    (8, (2000, 2000, 5, 5, 2000, 5, 5, 5, 5, 5), "High redundancy scattered across positions"),
    (9, (5, 5, 5, 5, 2000, 5, 5, 5, 2000, 2000), "High redundancy at end positions"),
    (10, (1000, 1000, 1000, 1000, 5, 5, 5, 5, 5, 2000), "Mixed redundancy levels"),
)


def builtin_patterns() -> list[DuplicationPattern]:
    return [DuplicationPattern(i, c, d) for i, c, d in _BUILTIN]


def load_patterns(path) -> list[DuplicationPattern]:
    return [DuplicationPattern.from_dict(r) for r in read_jsonl(path)]


class Ordering(str, enum.Enum):
    GROUPED = "grouped"
    SHUFFLED = "shuffled"


@dataclass(frozen=True)
class BenchVariant:
    group: GroupKey | None
    pattern_id: int
    ordering: Ordering
    opinion_sequence: tuple[str, ...]
    seed: int
    base_opinions: tuple[BaseOpinion, ...] = field(default=(), compare=False)

    def to_dict(self) -> dict:
        return {
            "group_key": self.group.to_dict() if self.group is not None else None,
            "pattern_id": self.pattern_id,
            "ordering": self.ordering.value,
            "seed": self.seed,
            "opinion_sequence": list(self.opinion_sequence),
            "base_opinions": [b.to_dict() for b in self.base_opinions],
        }


def apply_pattern(
    base: Sequence[str],
    pattern: DuplicationPattern,
    ordering: Ordering | str = Ordering.GROUPED,
    seed: int = 0,
    group: GroupKey | None = None,
) -> BenchVariant:
    if len(base) != BASE_SIZE:
        raise BaseSizeMismatch(f"expected {BASE_SIZE} base opinions, got {len(base)}")
    ordering = Ordering(ordering)
    seq = [text for text, c in zip(base, pattern.counts) for _ in range(c)]
    if ordering is Ordering.SHUFFLED:
        random.Random(seed).shuffle(seq)
    return BenchVariant(group, pattern.pattern_id, ordering, tuple(seq), seed)


def variant_seed(seed: int, group: GroupKey, pattern_id: int, ordering: Ordering) -> int:
    return stable_hash("bench", seed, group.slug(), pattern_id, ordering.value)


def generate_benchmark(
    groups: Mapping[GroupKey, Sequence[BaseOpinion]],
    patterns: Sequence[DuplicationPattern] | None = None,
    orderings: Sequence[Ordering | str] = (Ordering.GROUPED, Ordering.SHUFFLED),
    seed: int = 0,
) -> list[BenchVariant]:
    """group x pattern x ordering, with groups in key order."""
    patterns = builtin_patterns() if patterns is None else list(patterns)
    out = []
    for group in sorted(groups):
        base = list(groups[group])
        texts = [b.text for b in base]
        for pattern in patterns:
            for ordering in map(Ordering, orderings):
                s = variant_seed(seed, group, pattern.pattern_id, ordering)
                v = apply_pattern(texts, pattern, ordering, s, group)
                out.append(BenchVariant(group, v.pattern_id, ordering, v.opinion_sequence, s, tuple(base)))
    return out


def multiplicities(seq: Sequence[str], base: Sequence[str]) -> list[int]:
    c = Counter(seq)
    return [c[b] for b in base]
