"""Gazetteer lookup that splits a post into stylistic, entity and other tokens."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

log = logging.getLogger(__name__)

STYLISTIC = "S"
ENTITY = "E"
OTHER = "T"
TAGS = (STYLISTIC, ENTITY, OTHER)


@dataclass(frozen=True)
class Gazetteer:
    category: str  # "stylistic" or "entity"
    entries: frozenset[str]
    source: str = ""
    casefold: bool = False

    def __contains__(self, token: str) -> bool:
        return (token.casefold() if self.casefold else token) in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    @classmethod
    def from_entries(cls, category: str, entries: Iterable[str], source: str = "", casefold: bool = False):
        norm = (e.casefold() if casefold else e for e in entries)
        return cls(category, frozenset(e for e in norm if e), source, casefold)


def load_gazetteer(path, category: str, casefold: bool = False) -> Gazetteer:
    """Read one entry per line; blank lines and ``#`` comments are ignored."""
    if category not in ("stylistic", "entity"):
        raise ValueError(f"unknown gazetteer category {category!r}")
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    entries = []
    for line in text.splitlines():
        entry = line.strip()
        if not entry or entry.startswith("#"):
            continue
        entries.append(entry)
    gaz = Gazetteer.from_entries(category, entries, source=str(path), casefold=casefold)
    if not gaz.entries:
        log.warning("gazetteer %s is empty; no token will be tagged %s", path, category)
    return gaz


@dataclass(frozen=True)
class TypedPost:
    tokens: tuple[str, ...]
    tags: tuple[str, ...]
    counts: dict[str, int] = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        if len(self.tokens) != len(self.tags):
            raise ValueError(f"{len(self.tokens)} tokens but {len(self.tags)} tags")
        bad = set(self.tags) - set(TAGS)
        if bad:
            raise ValueError(f"unknown type tags {sorted(bad)}")
        object.__setattr__(self, "counts", {t: self.tags.count(t) for t in TAGS})

    @property
    def n(self) -> int:
        return len(self.tokens)

    @property
    def n_s(self) -> int:
        return self.counts[STYLISTIC]

    @property
    def n_e(self) -> int:
        return self.counts[ENTITY]

    @property
    def n_t(self) -> int:
        return self.counts[OTHER]

    def indices(self, tag: str) -> list[int]:
        return [i for i, t in enumerate(self.tags) if t == tag]


def type_tokens(tokens: Sequence[str], stylistic: Gazetteer, entity: Gazetteer) -> TypedPost:
    """Exact-match typing. A token listed in both gazetteers is an entity."""
    if not tokens:
        raise ValueError("cannot type an empty token list")
    tags = []
    for tok in tokens:
        if tok in entity:
            tags.append(ENTITY)
        elif tok in stylistic:
            tags.append(STYLISTIC)
        else:
            tags.append(OTHER)
    return TypedPost(tuple(tokens), tuple(tags))


def typed_from_override(tokens: Sequence[str], types: Sequence[str]) -> TypedPost:
    if not tokens:
        raise ValueError("cannot type an empty token list")
    return TypedPost(tuple(tokens), tuple(types))
