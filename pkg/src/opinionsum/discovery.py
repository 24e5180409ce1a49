"""Unconstrained theme discovery: free-form ABSA tuples, theme names unrestricted."""
from __future__ import annotations

import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

from .domain import InvalidRecord, OpinionTuple, Review, UnknownSentiment, snake_case
from .gateway import CompletionRequest, Gateway, complete_json
from .prompts import load_template

log = logging.getLogger(__name__)


class EmptyReview(InvalidRecord):
    pass


@dataclass(frozen=True)
class DiscoveryOutput:
    review_id: str
    tuples: tuple[OpinionTuple, ...]
    warnings: tuple[dict, ...] = field(default=(), compare=False)

    def __post_init__(self):
        for t in self.tuples:
            if t.review_id != self.review_id:
                raise InvalidRecord(f"tuple from {t.review_id} filed under {self.review_id}")


def _items(value: Any) -> list:
    if value is None:
        return []
    if isinstance(value, list):
        return value
    return [value]


def parse_theme_payload(review_id: str, payload: Mapping[str, Any]) -> tuple[list[OpinionTuple], list[dict]]:
    """Flatten ``{theme: obj | [obj, ...] | null}`` into tuples.

    Items with a bad sentiment or missing fields are dropped and reported.
    """
    tuples: list[OpinionTuple] = []
    warnings: list[dict] = []
    for theme, value in payload.items():
        for item in _items(value):
            try:
                if not isinstance(item, Mapping):
                    raise InvalidRecord("item is not an object")
                tuples.append(
                    OpinionTuple(review_id, theme, item.get("aspect"), item.get("opinion"), item.get("sentiment"))
                )
            except (UnknownSentiment, InvalidRecord) as e:
                warnings.append({"review_id": review_id, "theme": theme, "reason": str(e), "item": item})
                log.warning("review %s theme %r: dropped item (%s)", review_id, theme, e)
    return tuples, warnings


def build_discovery_request(
    review: Review, template_id: str = "discovery_space", model: str = "default", examples: str = "", template_dir=None
) -> CompletionRequest:
    system, user = load_template(template_id, template_dir).render(review_text=review.text, examples=examples)
    return CompletionRequest(model, system, user, meta={"task": "discover", "review": review})


def discover(
    review: Review,
    gateway: Gateway,
    template_id: str = "discovery_space",
    model: str = "default",
    examples: str = "",
    template_dir=None,
) -> DiscoveryOutput:
    if not review.text.strip():
        raise EmptyReview(f"review {review.review_id} is empty")
    req = build_discovery_request(review, template_id, model, examples, template_dir)
    payload = complete_json(gateway, req)
    tuples, warnings = parse_theme_payload(review.review_id, payload)
    return DiscoveryOutput(review.review_id, tuple(tuples), tuple(warnings))


def _sorted_counts(counter: Mapping[str, int]) -> dict[str, int]:
    return dict(sorted(counter.items(), key=lambda kv: (-kv[1], kv[0])))


def tally_theme_frequencies(outputs: Iterable[DiscoveryOutput]) -> dict[str, int]:
    """Tuple counts per snake_case theme key, ordered by count desc then key."""
    c: Counter = Counter()
    for out in outputs:
        for t in out.tuples:
            c[snake_case(t.theme)] += 1
    return _sorted_counts(c)


def tally_aspects(outputs: Iterable[DiscoveryOutput]) -> dict[str, dict[str, int]]:
    """Per-theme aspect frequency tables, exported to support manual splits."""
    table: dict[str, Counter] = defaultdict(Counter)
    for out in outputs:
        for t in out.tuples:
            table[snake_case(t.theme)][t.aspect.strip().casefold()] += 1
    return {k: _sorted_counts(table[k]) for k in sorted(table)}


def discovery_rows(out: DiscoveryOutput) -> list[dict]:
    rows = []
    for t in out.tuples:
        d = t.to_dict()
        d["theme_key"] = snake_case(t.theme)
        rows.append(d)
    return rows
