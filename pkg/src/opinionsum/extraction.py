"""Theme-constrained extraction: k shuffled passes for recall, yes/no validation for precision."""
from __future__ import annotations

import json
import logging
import random
import re
from dataclasses import dataclass, field
from typing import Sequence

from .discovery import parse_theme_payload
from .domain import OpinionError, OpinionTuple, Review, ThemeDefinition, ThemeSet, stable_hash
from .gateway import CompletionRequest, Gateway, complete_json, complete_parsed
from .prompts import format_definitions, load_template
from .refinement import UnknownTheme

log = logging.getLogger(__name__)


class MalformedVerdict(OpinionError, ValueError):
    pass


class ExtractionFailed(OpinionError):
    pass


@dataclass(frozen=True)
class ExtractionConfig:
    k_shuffles: int = 3
    shuffle_seed: int = 0
    extraction_model: str = "default"
    validation_model: str = "default"
    template_id: str = "extraction_space"
    validation_template_id: str = "validation_space"
    examples: str = ""
    validation_examples: str = ""

    def __post_init__(self):
        if self.k_shuffles < 1:
            raise ValueError("k_shuffles must be >= 1")


def pass_permutation(n: int, review_id: str, pass_index: int, shuffle_seed: int) -> list[int]:
    """Seeded per (seed, review, pass) so one review can be redone in isolation."""
    order = list(range(n))
    random.Random(stable_hash(shuffle_seed, review_id, pass_index)).shuffle(order)
    return order


def build_constrained_prompt(
    review: Review,
    themes: ThemeSet,
    permutation: Sequence[int],
    template_id: str = "extraction_space",
    model: str = "default",
    examples: str = "",
    template_dir=None,
) -> CompletionRequest:
    if sorted(permutation) != list(range(len(themes))):
        raise ValueError("permutation must be a bijection over the theme set")
    ordered = [list(themes)[i] for i in permutation]
    system, user = load_template(template_id, template_dir).render(
        theme_definitions=format_definitions(ordered), review_text=review.text, examples=examples
    )
    return CompletionRequest(model, system, user, meta={"task": "extract", "review": review, "themes": ordered})


def parse_constrained(review_id: str, payload: dict, themes: ThemeSet) -> tuple[list[OpinionTuple], list[dict]]:
    known = {k: v for k, v in payload.items() if k in themes}
    tuples, warnings = parse_theme_payload(review_id, known)
    for k in payload:
        if k not in themes:
            warnings.append({"review_id": review_id, "theme": k, "reason": "theme not in the active set"})
            log.warning("review %s: output key %r is not an active theme; dropped", review_id, k)
    return tuples, warnings


def canonical_union(passes: Sequence[Sequence[OpinionTuple]], themes: ThemeSet) -> list[OpinionTuple]:
    """Union under tuple equality, independent of pass order.

    Among equal tuples the lexicographically smallest surface form is kept;
    output is sorted by theme position, then by key.
    """
    best: dict = {}
    for tuples in passes:
        for t in tuples:
            k = t.dedup_key()
            cur = best.get(k)
            if cur is None or (t.aspect, t.opinion, t.review_id) < (cur.aspect, cur.opinion, cur.review_id):
                best[k] = t
    pos = {tid: i for i, tid in enumerate(themes.ids)}
    return sorted(best.values(), key=lambda t: (pos.get(t.theme, len(pos)), t.dedup_key()[1:3], t.sentiment.value))


@dataclass
class ExtractionOutcome:
    review_id: str
    tuples: list[OpinionTuple]
    passes: list[dict] = field(default_factory=list)
    warnings: list[dict] = field(default_factory=list)


def extract_with_shuffles(
    review: Review, themes: ThemeSet, cfg: ExtractionConfig, gateway: Gateway, template_dir=None
) -> ExtractionOutcome:
    outcome = ExtractionOutcome(review.review_id, [])
    results: list[list[OpinionTuple]] = []
    errors: list[Exception] = []
    for p in range(cfg.k_shuffles):
        perm = pass_permutation(len(themes), review.review_id, p, cfg.shuffle_seed)
        req = build_constrained_prompt(
            review, themes, perm, cfg.template_id, cfg.extraction_model, cfg.examples, template_dir
        )
        try:
            payload = complete_json(gateway, req)
        except OpinionError as e:
            errors.append(e)
            log.warning("review %s pass %d failed: %s", review.review_id, p, e)
            outcome.passes.append({"pass": p, "permutation": perm, "error": str(e)})
            continue
        tuples, warnings = parse_constrained(review.review_id, payload, themes)
        results.append(tuples)
        outcome.warnings.extend(warnings)
        outcome.passes.append({"pass": p, "permutation": perm, "payload": payload, "n_tuples": len(tuples)})
    if not results:
        raise ExtractionFailed(f"review {review.review_id}: all {cfg.k_shuffles} passes failed") from errors[-1]
    outcome.tuples = canonical_union(results, themes)
    return outcome


# --- validation --------------------------------------------------------------------

_VERDICT = re.compile(r"^(yes|no)\b", re.IGNORECASE)


def parse_verdict(raw: str) -> bool:
    m = _VERDICT.match(raw.strip())
    if not m:
        raise MalformedVerdict(f"verdict must start with Yes or No: {raw[:60]!r}")
    return m.group(1).lower() == "yes"


def build_validation_request(
    review: Review,
    t: OpinionTuple,
    definition: ThemeDefinition,
    template_id: str = "validation_space",
    model: str = "default",
    examples: str = "",
    template_dir=None,
) -> CompletionRequest:
    output = json.dumps({"aspect": t.aspect, "opinion": t.opinion, "sentiment": t.sentiment.value}, ensure_ascii=False)
    system, user = load_template(template_id, template_dir).render(
        review_text=review.text,
        theme_id=definition.theme_id,
        definition=definition.definition,
        model_output=output,
        examples=examples,
    )
    return CompletionRequest(
        model, system, user, meta={"task": "validate", "review": review, "tuple": t, "definition": definition}
    )


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    text: str


def judge_tuple(
    review: Review, t: OpinionTuple, definition: ThemeDefinition, gateway: Gateway,
    cfg: ExtractionConfig = ExtractionConfig(), template_dir=None,
) -> Verdict:
    if t.theme != definition.theme_id:
        raise ValueError(f"tuple theme {t.theme!r} does not match definition {definition.theme_id!r}")
    req = build_validation_request(
        review, t, definition, cfg.validation_template_id, cfg.validation_model, cfg.validation_examples, template_dir
    )
    holder: dict = {}

    def parse(raw: str) -> bool:
        holder["raw"] = raw
        return parse_verdict(raw)

    ok = complete_parsed(gateway, req, parse, retry_on=(MalformedVerdict,))
    return Verdict(ok, holder["raw"].strip())


def validate_tuple(review, t, definition, gateway, cfg: ExtractionConfig = ExtractionConfig()) -> bool:
    return judge_tuple(review, t, definition, gateway, cfg).accepted


def refine_precision_audited(
    review: Review, tuples: Sequence[OpinionTuple], themes: ThemeSet, gateway: Gateway,
    cfg: ExtractionConfig = ExtractionConfig(), template_dir=None,
) -> tuple[list[OpinionTuple], list[dict]]:
    kept, audit = [], []
    for t in tuples:
        if t.theme not in themes:
            raise UnknownTheme(t.theme)
        v = judge_tuple(review, t, themes[t.theme], gateway, cfg, template_dir)
        audit.append({"tuple": t.to_dict(), "accepted": v.accepted, "justification": v.text})
        if v.accepted:
            kept.append(t)
    return kept, audit


def refine_precision(review, tuples, themes, gateway, cfg: ExtractionConfig = ExtractionConfig()) -> list[OpinionTuple]:
    """Keep exactly the tuples the validator accepts, in input order."""
    return refine_precision_audited(review, tuples, themes, gateway, cfg)[0]
