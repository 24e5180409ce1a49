"""Core record types shared by every stage, plus JSONL helpers."""
from __future__ import annotations

import enum
import hashlib
import json
import re
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping


class OpinionError(Exception):
    """Base class for all errors raised by this package."""


class UnknownSentiment(OpinionError, ValueError):
    def __init__(self, label: object):
        super().__init__(f"unknown sentiment label: {label!r}")
        self.label = label


class MissingProduct(OpinionError, KeyError):
    def __init__(self, review_id: str):
        super().__init__(f"no product id for review {review_id!r}")
        self.review_id = review_id


class InvalidRecord(OpinionError, ValueError):
    pass


class Sentiment(str, enum.Enum):
    NEGATIVE = "negative"
    NEUTRAL = "neutral"
    POSITIVE = "positive"

    def __str__(self) -> str:
        return self.value


def parse_sentiment(label: object) -> Sentiment:
    """Parse one of the three canonical labels, ignoring case and surrounding space."""
    if isinstance(label, Sentiment):
        return label
    if not isinstance(label, str):
        raise UnknownSentiment(label)
    try:
        return Sentiment(label.strip().casefold())
    except ValueError:
        raise UnknownSentiment(label) from None


def _require_text(value: Any, name: str) -> str:
    if not isinstance(value, str) or not value.strip():
        raise InvalidRecord(f"{name} must be a non-empty string, got {value!r}")
    return value


@dataclass(frozen=True)
class Review:
    review_id: str
    product_id: str
    text: str
    metadata: Mapping[str, str] | None = None

    def __post_init__(self):
        _require_text(self.review_id, "review_id")
        _require_text(self.text, "text")
        if self.metadata is not None:
            object.__setattr__(self, "metadata", dict(self.metadata))

    def to_dict(self) -> dict:
        d = {"review_id": self.review_id, "product_id": self.product_id, "text": self.text}
        if self.metadata:
            d["metadata"] = dict(self.metadata)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Review":
        return cls(
            review_id=str(d["review_id"]),
            product_id=str(d["product_id"]),
            text=d["text"],
            metadata=d.get("metadata") or None,
        )

    def __hash__(self):
        return hash((self.review_id, self.product_id, self.text))


@dataclass(frozen=True)
class OpinionTuple:
    review_id: str
    theme: str
    aspect: str
    opinion: str
    sentiment: Sentiment

    def __post_init__(self):
        _require_text(self.theme, "theme")
        _require_text(self.aspect, "aspect")
        _require_text(self.opinion, "opinion")
        object.__setattr__(self, "sentiment", parse_sentiment(self.sentiment))

    def dedup_key(self) -> tuple[str, str, str, Sentiment]:
        # review_id is deliberately excluded
        return (
            self.theme,
            self.aspect.strip().casefold(),
            self.opinion.strip().casefold(),
            self.sentiment,
        )

    def to_dict(self) -> dict:
        return {
            "review_id": self.review_id,
            "theme": self.theme,
            "aspect": self.aspect,
            "opinion": self.opinion,
            "sentiment": self.sentiment.value,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "OpinionTuple":
        return cls(
            review_id=str(d["review_id"]),
            theme=d["theme"],
            aspect=d["aspect"],
            opinion=d["opinion"],
            sentiment=parse_sentiment(d["sentiment"]),
        )


def dedup_tuples(tuples: Iterable[OpinionTuple]) -> list[OpinionTuple]:
    """Drop later tuples whose dedup key was already seen; keeps first occurrence order."""
    seen: set = set()
    out = []
    for t in tuples:
        k = t.dedup_key()
        if k not in seen:
            seen.add(k)
            out.append(t)
    return out


class ThemeOrigin(str, enum.Enum):
    GENERATED = "generated"
    MERGED = "merged"
    SPLIT = "split"
    HUMAN = "human"


@dataclass(frozen=True)
class ThemeDefinition:
    theme_id: str
    definition: str = ""
    frequency: int = 0
    origin: ThemeOrigin = ThemeOrigin.GENERATED

    def __post_init__(self):
        _require_text(self.theme_id, "theme_id")
        if not isinstance(self.frequency, int) or self.frequency < 0:
            raise InvalidRecord(f"frequency must be a non-negative int, got {self.frequency!r}")
        object.__setattr__(self, "origin", ThemeOrigin(self.origin))

    def to_dict(self) -> dict:
        return {
            "theme_id": self.theme_id,
            "definition": self.definition,
            "frequency": self.frequency,
            "origin": self.origin.value,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ThemeDefinition":
        return cls(
            theme_id=d["theme_id"],
            definition=d.get("definition", ""),
            frequency=int(d.get("frequency", 0)),
            origin=ThemeOrigin(d.get("origin", "generated")),
        )


class ThemeSet:
    """Ordered, id-unique collection of theme definitions. Ids match exactly."""

    def __init__(self, themes: Iterable[ThemeDefinition] = ()):
        self._themes: dict[str, ThemeDefinition] = {}
        for t in themes:
            if t.theme_id in self._themes:
                raise InvalidRecord(f"duplicate theme_id {t.theme_id!r}")
            self._themes[t.theme_id] = t

    def __iter__(self) -> Iterator[ThemeDefinition]:
        return iter(self._themes.values())

    def __len__(self) -> int:
        return len(self._themes)

    def __contains__(self, theme_id: object) -> bool:
        return theme_id in self._themes

    def __getitem__(self, theme_id: str) -> ThemeDefinition:
        return self._themes[theme_id]

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ThemeSet) and list(self) == list(other)

    def __repr__(self) -> str:
        return f"ThemeSet({list(self._themes)})"

    @property
    def ids(self) -> list[str]:
        return list(self._themes)

    def frequencies(self) -> dict[str, int]:
        return {t.theme_id: t.frequency for t in self}


@dataclass(frozen=True, order=True)
class GroupKey:
    """(product, theme, sentiment); ordering is lexicographic on the triple."""

    product_id: str
    theme_id: str
    sentiment: Sentiment

    def __post_init__(self):
        object.__setattr__(self, "sentiment", parse_sentiment(self.sentiment))

    def to_dict(self) -> dict:
        return {"product_id": self.product_id, "theme_id": self.theme_id, "sentiment": self.sentiment.value}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "GroupKey":
        return cls(str(d["product_id"]), d["theme_id"], parse_sentiment(d["sentiment"]))

    def slug(self) -> str:
        return f"{self.product_id}|{self.theme_id}|{self.sentiment.value}"


def group_tuples(
    tuples: Iterable[OpinionTuple], product_of: Mapping[str, str]
) -> dict[GroupKey, list[OpinionTuple]]:
    groups: dict[GroupKey, list[OpinionTuple]] = defaultdict(list)
    for t in tuples:
        try:
            product = product_of[t.review_id]
        except KeyError:
            raise MissingProduct(t.review_id) from None
        groups[GroupKey(product, t.theme, t.sentiment)].append(t)
    return {k: groups[k] for k in sorted(groups)}


class SummaryScope(str, enum.Enum):
    THEME = "theme"
    PRODUCT = "product"


@dataclass(frozen=True)
class Summary:
    scope: SummaryScope
    product_id: str
    text: str
    theme_id: str | None = None
    source_opinion_ids: tuple[str, ...] = ()
    theme_summary_ids: tuple[str, ...] = ()
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "scope", SummaryScope(self.scope))
        object.__setattr__(self, "source_opinion_ids", tuple(self.source_opinion_ids))
        object.__setattr__(self, "theme_summary_ids", tuple(self.theme_summary_ids))
        object.__setattr__(self, "warnings", tuple(self.warnings))
        if self.scope is SummaryScope.THEME and self.theme_id is None:
            raise InvalidRecord("theme summaries need a theme_id")

    @property
    def summary_id(self) -> str:
        if self.scope is SummaryScope.THEME:
            return f"{self.product_id}|{self.theme_id}"
        return self.product_id

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scope"] = self.scope.value
        d["summary_id"] = self.summary_id
        for k in ("source_opinion_ids", "theme_summary_ids", "warnings"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Summary":
        return cls(
            scope=SummaryScope(d["scope"]),
            product_id=str(d["product_id"]),
            text=d["text"],
            theme_id=d.get("theme_id"),
            source_opinion_ids=tuple(d.get("source_opinion_ids", ())),
            theme_summary_ids=tuple(d.get("theme_summary_ids", ())),
            warnings=tuple(d.get("warnings", ())),
        )


# --- theme id normalization --------------------------------------------------

_NON_WORD = re.compile(r"[^0-9a-z]+")


def snake_case(name: str) -> str:
    """'Overall Experience' -> 'overall_experience'."""
    key = _NON_WORD.sub("_", name.strip().casefold()).strip("_")
    return key or name.strip()


# --- hashing / seeds ---------------------------------------------------------

def stable_hash(*parts: object) -> int:
    """64-bit hash of the parts that is stable across processes and platforms."""
    h = hashlib.sha256("\x1f".join(map(str, parts)).encode("utf-8")).digest()
    return int.from_bytes(h[:8], "big")


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


# --- JSONL --------------------------------------------------------------------

def dumps(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True)


def read_jsonl(path: str | Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise InvalidRecord(f"{path}:{lineno}: {e}") from e
    return rows


def write_jsonl(path: str | Path, rows: Iterable[Mapping[str, Any]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(dumps(row))
            fh.write("\n")


def write_json(path: str | Path, obj: Any) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, ensure_ascii=False, sort_keys=True, indent=2)
        fh.write("\n")


def load_reviews(path: str | Path) -> list[Review]:
    reviews = [Review.from_dict(r) for r in read_jsonl(path)]
    seen = set()
    for r in reviews:
        if r.review_id in seen:
            raise InvalidRecord(f"duplicate review_id {r.review_id!r} in {path}")
        seen.add(r.review_id)
    return reviews


def load_theme_set(path: str | Path) -> ThemeSet:
    return ThemeSet(ThemeDefinition.from_dict(r) for r in read_jsonl(path))
