"""Theme refinement: frequency filter, semantic dedup, flagging, human decisions."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .domain import InvalidRecord, OpinionError, ThemeDefinition, ThemeOrigin, ThemeSet
from .gateway import Gateway, l2_normalize


# identical vectors can score 1 - 1e-16 after normalisation
SIM_EPS = 1e-9


class UnknownTheme(OpinionError, KeyError):
    pass


class ConflictingDecision(OpinionError, ValueError):
    pass


@dataclass(frozen=True)
class RefinementConfig:
    min_frequency: int = 100
    similarity_threshold: float = 0.85
    flag_frequency: int = 50
    require_human: bool = False

    def __post_init__(self):
        if not 0.0 < self.similarity_threshold <= 1.0:
            raise ValueError("similarity_threshold must lie in (0, 1]")
        if self.min_frequency < 0 or self.flag_frequency < 0:
            raise ValueError("frequencies must be non-negative")


def frequency_filter(freqs: Mapping[str, int], min_frequency: int) -> dict[str, int]:
    return {k: v for k, v in freqs.items() if v >= min_frequency}


def _unit(vec) -> np.ndarray:
    return l2_normalize(np.asarray(vec, dtype=np.float64))


def _greedy_order(themes: Mapping[str, int]) -> list[str]:
    return sorted(themes, key=lambda t: (-themes[t], t))


def semantic_dedup(
    themes: Mapping[str, int], embeddings: Mapping[str, Any], tau: float
) -> tuple[dict[str, int], dict[str, str]]:
    """Greedy pass by (count desc, id asc).

    A theme is kept when its cosine similarity to every kept theme is below
    ``tau``; otherwise its count moves to the most similar kept theme.
    """
    missing = [t for t in themes if t not in embeddings]
    if missing:
        raise KeyError(f"no embedding for themes {missing}")
    kept: list[str] = []
    kept_vecs: list[np.ndarray] = []
    counts: dict[str, int] = {}
    merged_into: dict[str, str] = {}
    for t in _greedy_order(themes):
        v = _unit(embeddings[t])
        if kept:
            sims = np.asarray(kept_vecs) @ v
            best = int(np.argmax(sims))
            if sims[best] >= tau - SIM_EPS:
                counts[kept[best]] += themes[t]
                merged_into[t] = kept[best]
                continue
        kept.append(t)
        kept_vecs.append(v)
        counts[t] = themes[t]
    return counts, merged_into


def _nearest(theme: str, existing: Sequence[str], embeddings: Mapping[str, Any]) -> tuple[str | None, float]:
    if not existing:
        return None, -1.0
    v = _unit(embeddings[theme])
    sims = np.asarray([_unit(embeddings[e]) for e in existing]) @ v
    i = int(np.argmax(sims))
    return existing[i], float(sims[i])


def flag_for_review(
    survivors: Mapping[str, int],
    existing_set: ThemeSet,
    flag_frequency: int,
    tau: float,
    embeddings: Mapping[str, Any],
) -> list[str]:
    """Frequent themes that resemble nothing already in ``existing_set``."""
    existing = existing_set.ids
    out = []
    for t in _greedy_order(survivors):
        if survivors[t] < flag_frequency or t in existing_set:
            continue
        _, sim = _nearest(t, existing, embeddings)
        if not existing or sim < tau - SIM_EPS:
            out.append(t)
    return out


def assign_to_existing(
    survivors: Mapping[str, int], existing_set: ThemeSet, tau: float, embeddings: Mapping[str, Any]
) -> dict[str, str]:
    """Discovered theme -> the existing theme it duplicates (similarity >= tau)."""
    out = {}
    for t in _greedy_order(survivors):
        best, sim = _nearest(t, existing_set.ids, embeddings)
        if best is not None and sim >= tau - SIM_EPS:
            out[t] = best
    return out


def theme_embeddings(gateway: Gateway, theme_ids: Sequence[str]) -> dict[str, np.ndarray]:
    ids = list(dict.fromkeys(theme_ids))
    if not ids:
        return {}
    vecs = gateway.embed_batch([t.replace("_", " ") for t in ids])
    return dict(zip(ids, vecs))


def auto_definition(theme_id: str, aspects: Mapping[str, int] | None, top: int = 5) -> str:
    name = theme_id.replace("_", " ")
    if not aspects:
        return f"Opinions about {name}."
    head = ", ".join(list(aspects)[:top])
    return f"Opinions about {name}. Typical aspects: {head}."


# --- human decisions ---------------------------------------------------------------

@dataclass(frozen=True)
class Merge:
    sources: tuple[str, ...]
    target: str
    definition: str | None = None


@dataclass(frozen=True)
class SplitTarget:
    theme_id: str
    definition: str = ""


@dataclass(frozen=True)
class Split:
    source: str
    targets: tuple[SplitTarget, ...]


@dataclass(frozen=True)
class HumanDecisionFile:
    merges: tuple[Merge, ...] = ()
    splits: tuple[Split, ...] = ()
    drops: tuple[str, ...] = ()

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "HumanDecisionFile":
        try:
            merges = tuple(
                Merge(tuple(m["sources"]), m["target"], m.get("definition")) for m in d.get("merges", ())
            )
            splits = tuple(
                Split(
                    s["source"],
                    tuple(
                        SplitTarget(t, "") if isinstance(t, str) else SplitTarget(t["theme_id"], t.get("definition", ""))
                        for t in s["targets"]
                    ),
                )
                for s in d.get("splits", ())
            )
        except (KeyError, TypeError) as e:
            raise InvalidRecord(f"malformed decision file: {e}") from e
        return cls(merges, splits, tuple(d.get("drops", ())))

    @classmethod
    def load(cls, path: str | Path) -> "HumanDecisionFile":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {
            "merges": [{"sources": list(m.sources), "target": m.target, "definition": m.definition} for m in self.merges],
            "splits": [
                {"source": s.source, "targets": [{"theme_id": t.theme_id, "definition": t.definition} for t in s.targets]}
                for s in self.splits
            ],
            "drops": list(self.drops),
        }


def _check_decisions(themes: ThemeSet, dec: HumanDecisionFile) -> None:
    claimed: dict[str, str] = {}

    def claim(theme_id: str, what: str, must_exist: bool = True):
        if must_exist and theme_id not in themes:
            raise UnknownTheme(theme_id)
        if theme_id in claimed:
            raise ConflictingDecision(f"{theme_id!r} appears in both {claimed[theme_id]} and {what}")
        claimed[theme_id] = what

    for m in dec.merges:
        what = f"merge->{m.target}"
        if not m.sources:
            raise InvalidRecord("merge with no sources")
        for s in dict.fromkeys(m.sources):
            claim(s, what)
        if m.target not in m.sources:
            claim(m.target, what, must_exist=False)
    for s in dec.splits:
        claim(s.source, f"split:{s.source}")
        if not s.targets:
            raise InvalidRecord(f"split of {s.source!r} has no targets")
        for t in s.targets:
            if t.theme_id in themes:
                raise ConflictingDecision(f"split target {t.theme_id!r} already exists")
            claim(t.theme_id, f"split:{s.source}", must_exist=False)
    for d in dec.drops:
        claim(d, "drops")


def apply_human_decisions(themes: ThemeSet, decisions: HumanDecisionFile) -> ThemeSet:
    """Merges sum counts into the target; split targets start at count 0; drops remove."""
    _check_decisions(themes, decisions)
    replace: dict[str, list[ThemeDefinition]] = {}
    removed: set[str] = set(decisions.drops)
    for m in decisions.merges:
        members = list(dict.fromkeys(m.sources))
        if m.target in themes and m.target not in members:
            members.append(m.target)
        total = sum(themes[s].frequency for s in members)
        if m.definition is not None:
            definition = m.definition
        elif m.target in themes:
            definition = themes[m.target].definition
        else:
            definition = themes[members[0]].definition
        anchor = next(t.theme_id for t in themes if t.theme_id in members)
        replace[anchor] = [ThemeDefinition(m.target, definition, total, ThemeOrigin.MERGED)]
        removed.update(x for x in members if x != anchor)
    for s in decisions.splits:
        replace[s.source] = [ThemeDefinition(t.theme_id, t.definition, 0, ThemeOrigin.SPLIT) for t in s.targets]
    out: list[ThemeDefinition] = []
    for t in themes:
        if t.theme_id in replace:
            out.extend(replace[t.theme_id])
        elif t.theme_id not in removed:
            out.append(t)
    return ThemeSet(out)


@dataclass
class RefinementResult:
    filtered: dict[str, int]
    survivors: dict[str, int]
    merged_into: dict[str, str]
    flagged: list[str]
    candidate: ThemeSet
    flag_report: list[dict] = field(default_factory=list)


def refine(
    freqs: Mapping[str, int],
    aspects: Mapping[str, Mapping[str, int]],
    cfg: RefinementConfig,
    gateway: Gateway,
    existing_set: ThemeSet = ThemeSet(),
) -> RefinementResult:
    """Automatic part of refinement; human decisions are applied separately."""
    filtered = frequency_filter(freqs, cfg.min_frequency)
    emb = theme_embeddings(gateway, list(filtered) + existing_set.ids)
    survivors, merged_into = semantic_dedup(filtered, emb, cfg.similarity_threshold)
    flagged = flag_for_review(survivors, existing_set, cfg.flag_frequency, cfg.similarity_threshold, emb)

    support = assign_to_existing(survivors, existing_set, cfg.similarity_threshold, emb)
    existing_counts = {t: 0 for t in existing_set.ids}
    for theme, target in support.items():
        existing_counts[target] += survivors[theme]

    def merged_aspects(theme: str) -> dict[str, int]:
        acc: dict[str, int] = {}
        for src in [theme] + [k for k, v in merged_into.items() if v == theme]:
            for a, c in aspects.get(src, {}).items():
                acc[a] = acc.get(a, 0) + c
        return dict(sorted(acc.items(), key=lambda kv: (-kv[1], kv[0])))

    defs = [
        ThemeDefinition(t.theme_id, t.definition, existing_counts[t.theme_id], t.origin) for t in existing_set
    ]
    defs += [
        ThemeDefinition(t, auto_definition(t, merged_aspects(t)), survivors[t], ThemeOrigin.GENERATED) for t in flagged
    ]
    report = []
    for t in flagged:
        near, sim = _nearest(t, existing_set.ids, emb)
        report.append(
            {
                "theme_id": t,
                "count": survivors[t],
                "nearest_existing": near,
                "similarity": None if near is None else round(sim, 6),
                "top_aspects": dict(list(merged_aspects(t).items())[:10]),
            }
        )
    return RefinementResult(filtered, survivors, merged_into, flagged, ThemeSet(defs), report)
