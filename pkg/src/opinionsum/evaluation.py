"""Summary metrics: theme coverage, faithfulness, sentiment, pairwise judging."""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

from .domain import OpinionError, ThemeDefinition, ThemeSet
from .gateway import CompletionRequest, Gateway, MalformedPayload, complete_parsed, parse_json_payload
from .prompts import load_template

NO_FRAGMENTS = "No related fragments"


class EmptySource(OpinionError, ValueError):
    pass


class MalformedDecimal(OpinionError, ValueError):
    pass


class OutOfRange(OpinionError, ValueError):
    pass


class EmptyTally(OpinionError, ValueError):
    pass


def aspect_coverage_f1(summary_themes: Iterable[str], source_themes: Iterable[str]) -> float:
    S, R = set(summary_themes), set(source_themes)
    if not R:
        raise EmptySource("source theme set is empty")
    return 2 * len(S & R) / (len(S) + len(R))


# --- theme identification ----------------------------------------------------------

def identify_themes_in_text(
    text: str,
    themes: ThemeSet | Sequence[ThemeDefinition],
    gateway: Gateway,
    template_id: str = "identify_space",
    model: str = "default",
    template_dir=None,
) -> set[str]:
    """One fragment-extraction call per theme; present unless the reply is the sentinel."""
    tpl = load_template(template_id, template_dir)
    found = set()
    for theme in themes:
        system, user = tpl.render(theme_name=theme.theme_id, definition=theme.definition, text=text)
        req = CompletionRequest(model, system, user, meta={"task": "identify", "theme": theme, "text": text})
        if gateway.complete(req).strip() != NO_FRAGMENTS:
            found.add(theme.theme_id)
    return found


def theme_coverage_count(product_summary: str, theme_set: ThemeSet, gateway: Gateway, **kw) -> int:
    return len(identify_themes_in_text(product_summary, theme_set, gateway, **kw) & set(theme_set.ids))


# --- G-Eval style faithfulness --------------------------------------------------------

_DECIMAL = re.compile(r"^[+]?(\d+(\.\d*)?|\.\d+)$")


def parse_decimal(raw: str) -> float:
    s = raw.strip()
    if not _DECIMAL.match(s):
        raise MalformedDecimal(f"expected a bare decimal, got {raw[:40]!r}")
    v = float(s)
    if not 0.0 <= v <= 1.0:
        raise MalformedDecimal(f"faithfulness fraction {v} outside [0, 1]")
    return v


def geval_faithfulness(
    reviews_text: str,
    summary: str,
    gateway: Gateway,
    runs: int = 3,
    template_id: str = "geval_space",
    model: str = "default",
    template_dir=None,
) -> float:
    if runs < 1:
        raise ValueError("runs must be >= 1")
    system, user = load_template(template_id, template_dir).render(reviews=reviews_text, summary=summary)
    scores = []
    for r in range(runs):
        req = CompletionRequest(model, system, user, meta={"task": "geval", "reviews": reviews_text, "summary": summary, "run": r})
        scores.append(complete_parsed(gateway, req, parse_decimal, retry_on=(MalformedDecimal,)))
    return sum(scores) / len(scores)


# --- sentiment score ---------------------------------------------------------------------

def _score(raw: str) -> int:
    payload = parse_json_payload(raw)
    v = payload.get("score")
    if isinstance(v, bool) or not isinstance(v, (int, float)) or v != int(v):
        raise MalformedPayload(f"'score' must be an integer, got {v!r}", 0)
    return int(v)


def sentiment_score(
    theme_summary: str, gateway: Gateway, template_id: str = "sentiment_score", model: str = "default", template_dir=None
) -> int:
    system, user = load_template(template_id, template_dir).render(summary=theme_summary)
    req = CompletionRequest(model, system, user, meta={"task": "sentiment", "summary": theme_summary})
    score = complete_parsed(gateway, req, _score)
    if not 0 <= score <= 100:
        raise OutOfRange(f"sentiment score {score} outside 0..100")
    return score


def sentiment_bin(score: int) -> str:
    if score < 50:
        return "<50"
    if score <= 80:
        return "50-80"
    return ">80"


# --- pairwise judging --------------------------------------------------------------------

class Dimension(str, enum.Enum):
    COVERAGE = "coverage"
    FAITHFULNESS = "faithfulness"


_TEMPLATES = {Dimension.COVERAGE: "judge_coverage", Dimension.FAITHFULNESS: "judge_faithfulness"}
_SWAP = {1: 2, 2: 1, 3: 3}


@dataclass(frozen=True)
class JudgeVerdict:
    answer: int
    reasoning: str
    dimension: Dimension
    position_consistent: bool | None = None
    raw_answers: tuple[int, ...] = ()

    def __post_init__(self):
        if self.answer not in (1, 2, 3):
            raise ValueError(f"answer must be 1, 2 or 3, got {self.answer!r}")
        object.__setattr__(self, "dimension", Dimension(self.dimension))

    def to_dict(self) -> dict:
        return {
            "answer": self.answer,
            "reasoning": self.reasoning,
            "dimension": self.dimension.value,
            "position_consistent": self.position_consistent,
            "raw_answers": list(self.raw_answers),
        }


def _answer(raw: str) -> tuple[int, str]:
    payload = parse_json_payload(raw)
    a = payload.get("answer")
    try:
        a = int(str(a).strip())
    except ValueError:
        raise MalformedPayload(f"'answer' must be 1, 2 or 3, got {a!r}", 0) from None
    if a not in (1, 2, 3):
        raise MalformedPayload(f"'answer' must be 1, 2 or 3, got {a!r}", 0)
    return a, str(payload.get("reasoning", ""))


def judge_once(
    input_text: str, summary1: str, summary2: str, dimension: Dimension | str, gateway: Gateway,
    model: str = "default", template_dir=None,
) -> tuple[int, str]:
    dimension = Dimension(dimension)
    system, user = load_template(_TEMPLATES[dimension], template_dir).render(
        input_text=input_text, summary1=summary1, summary2=summary2
    )
    req = CompletionRequest(
        model, system, user,
        meta={"task": "judge", "dimension": dimension.value, "input_text": input_text,
              "summary1": summary1, "summary2": summary2},
    )
    return complete_parsed(gateway, req, _answer)


def pairwise_judge(
    input_text: str,
    summary_a: str,
    summary_b: str,
    dimension: Dimension | str,
    gateway: Gateway,
    debias: bool = True,
    model: str = "default",
    template_dir=None,
) -> JudgeVerdict:
    """Answer 1 prefers ``summary_a``, 2 prefers ``summary_b``, 3 is a tie.

    With ``debias`` the pair is judged in both orders. Agreement keeps the
    preference; disagreement becomes a tie flagged as position-inconsistent.
    """
    if not summary_a.strip() or not summary_b.strip():
        raise ValueError("both summaries must be non-empty")
    dimension = Dimension(dimension)
    first, why1 = judge_once(input_text, summary_a, summary_b, dimension, gateway, model, template_dir)
    if not debias:
        return JudgeVerdict(first, why1, dimension, None, (first,))
    second, why2 = judge_once(input_text, summary_b, summary_a, dimension, gateway, model, template_dir)
    mapped = _SWAP[second]
    consistent = first == mapped
    answer = first if consistent else 3
    return JudgeVerdict(answer, f"{why1} | swapped: {why2}", dimension, consistent, (first, second))


@dataclass(frozen=True)
class PreferenceTally:
    prefer_1: int = 0
    prefer_2: int = 0
    tie: int = 0

    @property
    def total(self) -> int:
        return self.prefer_1 + self.prefer_2 + self.tie

    def percentages(self) -> dict[str, float]:
        if self.total == 0:
            raise EmptyTally("no verdicts to report")
        return {
            "prefer_1": 100.0 * self.prefer_1 / self.total,
            "prefer_2": 100.0 * self.prefer_2 / self.total,
            "tie": 100.0 * self.tie / self.total,
        }

    def to_dict(self) -> dict:
        d = {"prefer_1": self.prefer_1, "prefer_2": self.prefer_2, "tie": self.tie}
        if self.total:
            d["percentages"] = self.percentages()
        return d


def tally(verdicts: Iterable[JudgeVerdict | int]) -> PreferenceTally:
    counts = {1: 0, 2: 0, 3: 0}
    for v in verdicts:
        counts[v.answer if isinstance(v, JudgeVerdict) else int(v)] += 1
    return PreferenceTally(counts[1], counts[2], counts[3])


# --- AlignScore export ---------------------------------------------------------------

_SENT = re.compile(r"[^.!?]+[.!?]?")


def alignscore_rows(context: str, summary: str) -> list[dict]:
    """One (context, claim) row per summary sentence, for an external scorer."""
    claims = [s.strip() for s in _SENT.findall(summary) if s.strip()]
    return [{"context": context, "claim": c} for c in claims]
