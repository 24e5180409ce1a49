"""Offline gateway used by the test suite and ``--provider mock`` runs.

Responses are looked up in this order: exact prompt-hash script, then
predicate/substring rules, then the fallback responder. In strict mode a
miss raises :class:`UnscriptedPrompt` instead of reaching the responder.
"""
from __future__ import annotations

import hashlib
import json
import re
import threading
from typing import Any, Callable, Sequence, Union

import numpy as np

from .domain import OpinionTuple, Review, ThemeDefinition
from .gateway import CompletionRequest, UnscriptedPrompt, check_texts, l2_normalize

Response = Union[str, Sequence[str], Callable[[CompletionRequest], str]]

_TOKEN = re.compile(r"[0-9a-z']+")


def prompt_hash(req_or_system: CompletionRequest | str, user: str | None = None) -> str:
    if isinstance(req_or_system, CompletionRequest):
        system, user = req_or_system.system_prompt, req_or_system.user_prompt
    else:
        system = req_or_system
    h = hashlib.sha256()
    h.update(system.encode("utf-8"))
    h.update(b"\x1e")
    h.update((user or "").encode("utf-8"))
    return h.hexdigest()


def tokens(text: str) -> list[str]:
    return _TOKEN.findall(text.casefold())


def hash_embedding(text: str, dim: int = 32) -> np.ndarray:
    """Bag of hashed tokens, L2-normalized."""
    v = np.zeros(dim, dtype=np.float64)
    toks = tokens(text) or [text.strip()]
    for tok in toks:
        b = int.from_bytes(hashlib.sha256(tok.encode("utf-8")).digest()[:8], "big")
        v[b % dim] += 1.0
    return l2_normalize(v)


class _Sequence:
    # consumed front to back; the last entry repeats once exhausted
    def __init__(self, items: Sequence[str]):
        if not items:
            raise ValueError("scripted sequence must be non-empty")
        self.items = list(items)
        self.i = 0
        self.lock = threading.Lock()

    def next(self) -> str:
        with self.lock:
            out = self.items[min(self.i, len(self.items) - 1)]
            self.i += 1
            return out


def _wrap(resp: Response):
    if isinstance(resp, str) or callable(resp):
        return resp
    return _Sequence(resp)


def _resolve(entry, req: CompletionRequest) -> str:
    if isinstance(entry, _Sequence):
        return entry.next()
    if callable(entry):
        return entry(req)
    return entry


class MockGateway:
    def __init__(
        self,
        script: dict[str, Response] | None = None,
        strict: bool = False,
        responder: Callable[[CompletionRequest], str] | None = None,
        embed_dim: int = 32,
        max_retries: int = 3,
    ):
        self._script = {k: _wrap(v) for k, v in (script or {}).items()}
        self._rules: list[tuple[Callable[[CompletionRequest], bool], Any]] = []
        self.strict = strict
        self.responder = responder if responder is not None else HeuristicResponder()
        self.embed_dim = embed_dim
        self.max_retries = max_retries
        self.calls: list[CompletionRequest] = []

    def script(self, req: CompletionRequest | str, response: Response) -> "MockGateway":
        key = prompt_hash(req) if isinstance(req, CompletionRequest) else req
        self._script[key] = _wrap(response)
        return self

    def when(self, match: str | Callable[[CompletionRequest], bool], response: Response) -> "MockGateway":
        """Add a rule; a string matches as a substring of either prompt, or the meta task name."""
        if isinstance(match, str):
            needle = match
            pred = lambda r: (  # noqa: E731
                r.meta.get("task") == needle or needle in r.user_prompt or needle in r.system_prompt
            )
        else:
            pred = match
        self._rules.append((pred, _wrap(response)))
        return self

    def complete(self, req: CompletionRequest) -> str:
        self.calls.append(req)
        entry = self._script.get(prompt_hash(req))
        if entry is not None:
            return _resolve(entry, req)
        for pred, resp in self._rules:
            if pred(req):
                return _resolve(resp, req)
        if self.strict or self.responder is None:
            raise UnscriptedPrompt(f"no scripted response for prompt {prompt_hash(req)[:12]}")
        return self.responder(req)

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray:
        check_texts(texts)
        return np.stack([hash_embedding(t, self.embed_dim) for t in texts])


# --- heuristic responder -------------------------------------------------------

THEME_LEXICON: dict[str, str] = {
    "room": "rooms", "rooms": "rooms", "bed": "rooms", "pillows": "rooms", "suite": "rooms",
    "bathroom": "bathroom", "shower": "bathroom", "towels": "bathroom",
    "staff": "service", "service": "service", "reception": "service", "concierge": "service",
    "breakfast": "food", "food": "food", "restaurant": "food", "coffee": "food", "bar": "food",
    "location": "location", "beach": "location", "downtown": "location", "metro": "location",
    "clean": "cleanliness", "dirty": "cleanliness", "spotless": "cleanliness", "dusty": "cleanliness",
    "price": "value", "value": "value", "expensive": "value", "cheap": "value",
    "noise": "noise", "noisy": "noise", "quiet": "noise", "loud": "noise",
    "pool": "facilities", "gym": "facilities", "lobby": "facilities", "parking": "facilities",
    "wifi": "internet", "internet": "internet",
    "shuttle": "transportation",
}

POSITIVE_WORDS = frozenset(
    "great excellent friendly comfortable comfy clean spotless lovely amazing helpful quiet "
    "perfect delicious fantastic good nice convenient spacious cheap fast".split()
)
NEGATIVE_WORDS = frozenset(
    "bad terrible rude dirty dusty noisy loud awful broken slow cold small expensive "
    "poor disappointing smelly cramped overpriced".split()
)

_SENTENCE = re.compile(r"[^.!?]+[.!?]?")


def sentences(text: str) -> list[str]:
    return [s.strip() for s in _SENTENCE.findall(text) if s.strip()]


def score_sentiment(text: str) -> str:
    toks = tokens(text)
    pos = sum(t in POSITIVE_WORDS for t in toks)
    neg = sum(t in NEGATIVE_WORDS for t in toks)
    if "not" in toks or "never" in toks:
        pos, neg = neg, pos
    if pos > neg:
        return "positive"
    if neg > pos:
        return "negative"
    return "neutral"


def _keywords(sentence: str) -> list[str]:
    seen = []
    for t in tokens(sentence):
        if t in THEME_LEXICON and t not in seen:
            seen.append(t)
    return seen


def _theme_vocab(theme: ThemeDefinition, full: bool = False) -> set[str]:
    # strict vocabulary: the id and the definition's first sentence. The loose
    # one reads the whole definition, exclusion clauses included, which is
    # what makes some extracted tuples fail validation.
    text = theme.definition if full else theme.definition.split(".")[0]
    return set(tokens(theme.theme_id)) | set(tokens(text))


def _matches(keyword: str, theme: ThemeDefinition, full: bool = False) -> bool:
    vocab = _theme_vocab(theme, full)
    return keyword in vocab or THEME_LEXICON[keyword] in vocab


def _triples_for(review: Review) -> list[tuple[str, str, str, str]]:
    """(raw_theme, aspect, opinion, sentiment) per keyword per sentence."""
    out = []
    for s in sentences(review.text):
        for kw in _keywords(s):
            out.append((THEME_LEXICON[kw], kw, s.rstrip(".!?"), score_sentiment(s)))
    return out


def _shape(items: list[dict]) -> Any:
    return items[0] if len(items) == 1 else items


class HeuristicResponder:
    """Deterministic stand-in for a chat model, dispatched on ``req.meta['task']``.

    It reads the structured inputs the stages attach to ``meta`` rather than
    re-parsing prompt text. ``max_themes_per_pass`` limits how many themes a
    constrained extraction pass fills, taken in prompt order, so shuffled
    passes genuinely recover different tuples.
    """

    def __init__(self, max_themes_per_pass: int = 3):
        self.max_themes_per_pass = max_themes_per_pass

    def __call__(self, req: CompletionRequest) -> str:
        task = req.meta.get("task")
        handler = getattr(self, f"_{task}", None) if isinstance(task, str) else None
        if handler is None:
            raise UnscriptedPrompt(f"heuristic responder has no handler for task {task!r}")
        return handler(req.meta)

    def _discover(self, meta) -> str:
        by_theme: dict[str, list[dict]] = {}
        for theme, aspect, opinion, sentiment in _triples_for(meta["review"]):
            by_theme.setdefault(theme, []).append(
                {"aspect": aspect, "opinion": opinion, "sentiment": sentiment}
            )
        return json.dumps({k: _shape(v) for k, v in by_theme.items()})

    def _extract(self, meta) -> str:
        themes: list[ThemeDefinition] = meta["themes"]
        triples = _triples_for(meta["review"])
        out: dict[str, Any] = {}
        filled = 0
        for theme in themes:
            items = [
                {"aspect": a, "opinion": o, "sentiment": s}
                for _, a, o, s in triples
                if _matches(a, theme, full=True)
            ]
            if items and filled < self.max_themes_per_pass:
                out[theme.theme_id] = _shape(items)
                filled += 1
            else:
                out[theme.theme_id] = None
        return "```json\n" + json.dumps(out) + "\n```"

    def _validate(self, meta) -> str:
        t: OpinionTuple = meta["tuple"]
        theme: ThemeDefinition = meta["definition"]
        vocab = _theme_vocab(theme)
        if t.aspect.casefold() in vocab or THEME_LEXICON.get(t.aspect.casefold()) in vocab:
            return f"Yes. The aspect '{t.aspect}' is covered by {theme.theme_id}."
        return f"No. The aspect '{t.aspect}' falls outside {theme.theme_id}."

    def _theme_summary(self, meta) -> str:
        lines: list[tuple[str, str]] = meta["opinions"]
        counts = {"positive": 0, "negative": 0, "neutral": 0}
        for sentiment, _ in lines:
            counts[sentiment] += 1
        tone = max(counts, key=lambda k: (counts[k], k))
        picked = []
        for _, text in lines:
            if text not in picked:
                picked.append(text)
            if len(picked) == 3:
                break
        body = "; ".join(picked)
        return json.dumps({"summary": f"Reviewers are mostly {tone} about {meta['theme_id']}: {body}."})

    def _product_summary(self, meta) -> str:
        parts = [text for _, text in meta["theme_summaries"]]
        return json.dumps({"summary": " ".join(parts)})

    def _identify(self, meta) -> str:
        theme: ThemeDefinition = meta["theme"]
        hits = [s for s in sentences(meta["text"]) if any(_matches(k, theme) for k in _keywords(s))]
        return "\n".join(hits) if hits else "No related fragments"

    def _geval(self, meta) -> str:
        source = set(tokens(meta["reviews"]))
        sents = sentences(meta["summary"])
        if not sents:
            return "0.00"
        ok = 0
        for s in sents:
            toks = tokens(s)
            if toks and sum(t in source for t in toks) / len(toks) >= 0.5:
                ok += 1
        return f"{ok / len(sents):.2f}"

    def _sentiment(self, meta) -> str:
        toks = tokens(meta["summary"])
        pos = sum(t in POSITIVE_WORDS for t in toks)
        neg = sum(t in NEGATIVE_WORDS for t in toks)
        score = round(50 + 50 * (pos - neg) / (pos + neg + 1))
        return json.dumps({"score": max(0, min(100, score))})

    def _judge(self, meta) -> str:
        source = set(tokens(meta["input_text"]))
        a, b = set(tokens(meta["summary1"])), set(tokens(meta["summary2"]))
        if meta["dimension"] == "coverage":
            sa, sb = len(a & source), len(b & source)
        else:
            sa = -len(a - source)
            sb = -len(b - source)
        answer = "1" if sa > sb else "2" if sb > sa else "3"
        return json.dumps({"answer": answer, "reasoning": f"scores {sa} vs {sb}"})
