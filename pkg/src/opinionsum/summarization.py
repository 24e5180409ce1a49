"""Theme-level and product-level summaries."""
from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Sequence

from .domain import OpinionError, Sentiment, Summary, SummaryScope, stable_hash
from .gateway import CompletionRequest, Gateway, MalformedPayload, complete_parsed, parse_json_payload
from .prompts import load_template

# templates whose instructions ask for a length range; checked after the fact
WORD_BOUNDS = {"theme_summary_redundancy": (35, 50)}


class EmptyInput(OpinionError, ValueError):
    pass


@dataclass(frozen=True)
class OpinionLine:
    opinion_id: str
    sentiment: Sentiment
    text: str

    def render(self) -> str:
        return f"- [{self.sentiment.value}] {self.text}"


@dataclass(frozen=True)
class ClusterBlock:
    sentiment: Sentiment
    cluster_id: int
    size: int
    lines: tuple[OpinionLine, ...]


def order_opinions(
    blocks: Sequence[ClusterBlock],
    noise: Sequence[OpinionLine] = (),
    include_noise: bool = True,
    shuffle_seed: int | None = None,
) -> list[OpinionLine]:
    """Cluster representatives grouped together, biggest clusters first, noise last.

    With ``shuffle_seed`` set the same lines come back in a seeded random order.
    """
    ordered = sorted(blocks, key=lambda b: (-b.size, b.sentiment.value, b.cluster_id))
    lines = [line for b in ordered for line in b.lines]
    if include_noise:
        lines.extend(noise)
    if shuffle_seed is not None:
        random.Random(shuffle_seed).shuffle(lines)
    return lines


def _summary_text(raw: str) -> str:
    payload = parse_json_payload(raw)
    text = payload.get("summary")
    if not isinstance(text, str) or not text.strip():
        raise MalformedPayload("response lacks a non-empty 'summary' string", 0)
    return text.strip()


def word_count(text: str) -> int:
    return len(text.split())


def length_warnings(text: str, template_id: str) -> list[str]:
    bounds = WORD_BOUNDS.get(template_id)
    if bounds is None:
        return []
    n = word_count(text)
    lo, hi = bounds
    if lo <= n <= hi:
        return []
    return [f"length: {n} words, expected {lo}-{hi}"]


def summarize_theme(
    product_id: str,
    theme_id: str,
    lines: Sequence[OpinionLine],
    gateway: Gateway,
    template_id: str = "theme_summary_space",
    model: str = "default",
    template_dir=None,
) -> Summary:
    if not lines:
        raise EmptyInput(f"no opinions for {product_id}|{theme_id}")
    system, user = load_template(template_id, template_dir).render(
        theme_id=theme_id, opinions="\n".join(line.render() for line in lines)
    )
    req = CompletionRequest(
        model,
        system,
        user,
        meta={
            "task": "theme_summary",
            "theme_id": theme_id,
            "opinions": [(line.sentiment.value, line.text) for line in lines],
        },
    )
    text = complete_parsed(gateway, req, _summary_text)
    return Summary(
        SummaryScope.THEME,
        product_id,
        text,
        theme_id=theme_id,
        source_opinion_ids=tuple(line.opinion_id for line in lines),
        warnings=tuple(length_warnings(text, template_id)),
    )


def summarize_product(
    product_id: str,
    theme_summaries: Sequence[Summary],
    gateway: Gateway,
    template_id: str = "product_summary_space",
    model: str = "default",
    template_dir=None,
) -> Summary:
    if not theme_summaries:
        raise EmptyInput(f"no theme summaries for product {product_id}")
    ordered = sorted(theme_summaries, key=lambda s: s.theme_id or "")
    block = "\n\n".join(f"Theme: {s.theme_id}\nSummary: {s.text}" for s in ordered)
    system, user = load_template(template_id, template_dir).render(theme_summaries=block)
    req = CompletionRequest(
        model,
        system,
        user,
        meta={"task": "product_summary", "theme_summaries": [(s.theme_id, s.text) for s in ordered]},
    )
    text = complete_parsed(gateway, req, _summary_text)
    return Summary(
        SummaryScope.PRODUCT,
        product_id,
        text,
        source_opinion_ids=tuple(i for s in ordered for i in s.source_opinion_ids),
        theme_summary_ids=tuple(s.summary_id for s in ordered),
    )


def theme_shuffle_seed(seed: int, product_id: str, theme_id: str) -> int:
    return stable_hash("summary-order", seed, product_id, theme_id)
