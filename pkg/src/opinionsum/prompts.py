"""Shipped prompt templates.

Each template file holds a system part and a user part separated by a
``=== user ===`` line. Placeholders use :class:`string.Template` syntax
(``$name``); rendering is strict so a missing field fails loudly.
"""
from __future__ import annotations

import string
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

from .domain import OpinionError, ThemeSet, ThemeDefinition, load_theme_set

SEPARATOR = "=== user ==="


class UnknownTemplate(OpinionError, KeyError):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    system: string.Template
    user: string.Template

    def render(self, **fields: str) -> tuple[str, str]:
        fields.setdefault("examples", "")
        sys_text = self.system.substitute(fields).strip()
        user_text = self.user.substitute(fields).strip()
        return sys_text, user_text

    def placeholders(self) -> set[str]:
        names = set()
        for t in (self.system, self.user):
            for m in t.pattern.finditer(t.template):
                n = m.group("named") or m.group("braced")
                if n:
                    names.add(n)
        return names


def _template_dir():
    return resources.files("opinionsum") / "templates"


def available_templates() -> list[str]:
    return sorted(p.name[:-4] for p in _template_dir().iterdir() if p.name.endswith(".txt"))


def parse_template(template_id: str, text: str) -> PromptTemplate:
    if SEPARATOR not in text:
        raise OpinionError(f"template {template_id!r} lacks a '{SEPARATOR}' line")
    sys_part, user_part = text.split(SEPARATOR, 1)
    return PromptTemplate(template_id, string.Template(sys_part), string.Template(user_part))


@lru_cache(maxsize=None)
def _load_builtin(template_id: str) -> PromptTemplate:
    path = _template_dir() / f"{template_id}.txt"
    if not path.is_file():
        raise UnknownTemplate(template_id)
    return parse_template(template_id, path.read_text(encoding="utf-8"))


def load_template(template_id: str, override_dir: str | Path | None = None) -> PromptTemplate:
    """Look in ``override_dir`` first (if given), then the packaged templates."""
    if override_dir is not None:
        p = Path(override_dir) / f"{template_id}.txt"
        if p.is_file():
            return parse_template(template_id, p.read_text(encoding="utf-8"))
    return _load_builtin(template_id)


def builtin_theme_set(name: str) -> ThemeSet:
    """Preset theme sets: ``space`` (hotels) or ``peersum`` (peer review)."""
    path = _template_dir() / f"themes_{name}.jsonl"
    if not path.is_file():
        raise UnknownTemplate(f"themes_{name}")
    with resources.as_file(path) as p:
        return load_theme_set(p)


def format_definitions(themes: list[ThemeDefinition]) -> str:
    return "\n\n".join(f"- {t.theme_id}: {t.definition}".rstrip() for t in themes)
